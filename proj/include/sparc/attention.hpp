#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sparc/errors.hpp"

namespace sparc {

// Strided read-only view of `count` vectors of length `dim`; vector j starts
// at base + j * stride. Used to address one head's slice of a layer cache.
struct VectorsView {
  const double* base = nullptr;
  std::size_t count = 0;
  std::size_t dim = 0;
  std::size_t stride = 0;

  std::span<const double> operator[](std::size_t j) const { return {base + j * stride, dim}; }
};

struct AttentionResult {
  std::vector<double> weights;
  std::vector<double> output;
};

// Single-query scaled dot-product attention.
//
// weights_j = softmax_j(q·k_j / sqrt(d) + logit_adjust_j)
// output    = sum_j weight_multiplier_j * weights_j * v_j
//
// `logit_adjust` is added before the softmax; `weight_multiplier` scales the
// normalized weights afterwards without renormalizing. Either may be empty.
// `weights` receives the normalized (pre-multiplier) weights.
inline void attend(std::span<const double> query, const VectorsView& keys, const VectorsView& values,
                   std::span<const double> logit_adjust, std::span<const double> weight_multiplier,
                   std::span<double> weights, std::span<double> output) {
  const std::size_t n = keys.count;
  if (n == 0) throw EmptyContextError("attention over an empty context");
  if (values.count != n || (!logit_adjust.empty() && logit_adjust.size() != n) ||
      (!weight_multiplier.empty() && weight_multiplier.size() != n) || weights.size() != n) {
    throw ShapeError("attention: per-position inputs differ in length");
  }
  if (keys.dim != query.size() || values.dim != output.size()) {
    throw ShapeError("attention: vector dimension mismatch");
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.size()));
  double max_logit = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) {
    const auto k = keys[j];
    double s = 0.0;
    for (std::size_t t = 0; t < query.size(); ++t) s += query[t] * k[t];
    s *= inv_sqrt_d;
    if (!logit_adjust.empty()) s += logit_adjust[j];
    weights[j] = s;
    max_logit = std::max(max_logit, s);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    weights[j] = std::exp(weights[j] - max_logit);
    total += weights[j];
  }
  for (std::size_t j = 0; j < n; ++j) weights[j] /= total;

  std::fill(output.begin(), output.end(), 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double w = weights[j];
    if (!weight_multiplier.empty()) w *= weight_multiplier[j];
    const auto v = values[j];
    for (std::size_t t = 0; t < output.size(); ++t) output[t] += w * v[t];
  }
}

// Convenience overload over owned vectors.
inline AttentionResult attention_step(std::span<const double> query, std::span<const std::vector<double>> keys,
                                      std::span<const std::vector<double>> values,
                                      std::span<const double> logit_adjust = {},
                                      std::span<const double> weight_multiplier = {}) {
  if (keys.empty()) throw EmptyContextError("attention over an empty context");
  if (values.size() != keys.size()) throw ShapeError("attention: keys and values differ in length");
  const std::size_t d = query.size();
  const std::size_t dv = values.front().size();
  std::vector<double> kbuf, vbuf;
  kbuf.reserve(keys.size() * d);
  vbuf.reserve(values.size() * dv);
  for (const auto& k : keys) {
    if (k.size() != d) throw ShapeError("attention: key dimension mismatch");
    kbuf.insert(kbuf.end(), k.begin(), k.end());
  }
  for (const auto& v : values) {
    if (v.size() != dv) throw ShapeError("attention: value dimension mismatch");
    vbuf.insert(vbuf.end(), v.begin(), v.end());
  }
  AttentionResult r{std::vector<double>(keys.size()), std::vector<double>(dv)};
  attend(query, VectorsView{kbuf.data(), keys.size(), d, d}, VectorsView{vbuf.data(), values.size(), dv, dv},
         logit_adjust, weight_multiplier, r.weights, r.output);
  return r;
}

}  // namespace sparc
