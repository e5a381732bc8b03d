#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sparc/errors.hpp"
#include "sparc/kv_cache.hpp"

namespace sparc {

// Positions are laid out as [image | instruction | generated].
struct SequenceLayout {
  std::size_t n_image = 0;
  std::size_t n_inst = 0;
  std::size_t n_generated = 0;

  std::size_t prompt_length() const { return n_image + n_inst; }
  // Context attended to while producing generated token `step` (1-based).
  std::size_t context_length(std::size_t step) const { return n_image + n_inst + (step - 1); }
  bool is_image(std::size_t pos) const { return pos < n_image; }

  bool operator==(const SequenceLayout&) const = default;
};

struct SparcConfig {
  double alpha = 1.1;
  double beta = 0.1;
  double tau = 1.5;
  std::size_t select_layer = 2;
  double epsilon = 1e-12;
  // When set, tokens selected at step i are rescaled before step i's output
  // is produced (the step is recomputed). Off by default: selections only
  // affect later steps.
  bool apply_same_step = false;

  void validate(std::size_t num_layers) const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValueError("sparc: alpha must be > 0");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ValueError("sparc: beta must lie in [0, 1]");
    if (std::isnan(tau)) throw ValueError("sparc: tau is NaN");
    if (select_layer >= num_layers) {
      throw ValueError("sparc: select_layer " + std::to_string(select_layer) + " out of range [0, " +
                       std::to_string(num_layers) + ")");
    }
    if (!(epsilon > 0.0)) throw ValueError("sparc: epsilon must be > 0");
  }
};

struct NaiveConfig {
  double alpha = 0.5;
  // Layers [first_layer, last_layer) receive the adjustment.
  std::size_t first_layer = 0;
  std::size_t last_layer = static_cast<std::size_t>(-1);

  bool applies_to(std::size_t layer) const { return layer >= first_layer && layer < last_layer; }
};

struct SelectionSet {
  std::vector<std::size_t> indices;  // ascending

  bool empty() const { return indices.empty(); }
  std::size_t size() const { return indices.size(); }
  bool contains(std::size_t j) const { return std::binary_search(indices.begin(), indices.end(), j); }
  bool operator==(const SelectionSet&) const = default;
};

struct SparcState {
  std::vector<double> ema;              // smoothed attention per image position
  std::vector<std::size_t> counts;      // selection count per image position
  std::size_t step = 0;                 // generated steps processed so far
  bool initialized = false;

  explicit SparcState(std::size_t n_image = 0) : ema(n_image, 0.0), counts(n_image, 0) {}

  std::size_t n_image() const { return counts.size(); }
};

// Image slice of a head-averaged attention row, not renormalized.
inline std::vector<double> observe_attention(std::span<const double> row, std::size_t n_image) {
  if (row.size() < n_image) {
    throw ShapeError("observe_attention: row of length " + std::to_string(row.size()) + " shorter than n_image " +
                     std::to_string(n_image));
  }
  return {row.begin(), row.begin() + static_cast<std::ptrdiff_t>(n_image)};
}

// r_j = (a_j - ema_j) / max(ema_j, epsilon)
inline std::vector<double> relative_scores(const SparcState& state, std::span<const double> a,
                                           double epsilon = 1e-12) {
  if (!state.initialized) throw StateError("relative_scores: EMA not initialized");
  if (a.size() != state.ema.size()) throw ShapeError("relative_scores: attention/EMA length mismatch");
  std::vector<double> r(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    r[j] = (a[j] - state.ema[j]) / std::max(state.ema[j], epsilon);
  }
  return r;
}

// { j : r_j > tau }
inline SelectionSet select_tokens(std::span<const double> r, double tau) {
  SelectionSet s;
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (r[j] > tau) s.indices.push_back(j);
  }
  return s;
}

// First call seeds the average with `a`; later calls blend with weight beta
// on the history. Entries are floored at epsilon.
inline void update_ema(SparcState& state, std::span<const double> a, double beta, double epsilon = 1e-12) {
  if (a.size() != state.ema.size()) throw ShapeError("update_ema: attention/EMA length mismatch");
  if (!state.initialized) {
    std::copy(a.begin(), a.end(), state.ema.begin());
    state.initialized = true;
  } else {
    for (std::size_t j = 0; j < a.size(); ++j) state.ema[j] = beta * state.ema[j] + (1.0 - beta) * a[j];
  }
  for (auto& e : state.ema) e = std::max(e, epsilon);
}

inline void bump_counts(SparcState& state, const SelectionSet& s) {
  for (auto j : s.indices) {
    if (j >= state.counts.size()) throw ShapeError("bump_counts: index " + std::to_string(j) + " out of range");
  }
  for (auto j : s.indices) ++state.counts[j];
  ++state.step;
}

inline void scale_cached_values(KVCache& cache, const SelectionSet& s, double alpha) {
  for (auto j : s.indices) {
    if (j >= cache.length()) throw StateError("scale_cached_values: position " + std::to_string(j) + " not cached");
  }
  for (auto j : s.indices) cache.scale_value(j, alpha);
}

// A <- A + alpha * |A| on image positions, in place.
inline void naive_adjust(std::span<double> logits, double alpha, const SequenceLayout& layout) {
  const std::size_t n = std::min(layout.n_image, logits.size());
  for (std::size_t j = 0; j < n; ++j) logits[j] += alpha * std::abs(logits[j]);
}

// Per-position attention multipliers: alpha^{c_j} on image positions, 1 elsewhere.
// Powers are formed by repeated multiplication so they match the fast path's
// cumulative value scale bit for bit.
inline std::vector<double> reference_multipliers(const SparcState& state, std::size_t context_length, double alpha) {
  std::vector<double> m(context_length, 1.0);
  const std::size_t n = std::min(state.counts.size(), context_length);
  for (std::size_t j = 0; j < n; ++j) {
    double f = 1.0;
    for (std::size_t k = 0; k < state.counts[j]; ++k) f *= alpha;
    m[j] = f;
  }
  return m;
}

}  // namespace sparc
