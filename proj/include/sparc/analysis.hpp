#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sparc/errors.hpp"
#include "sparc/tensor.hpp"
#include "sparc/trace.hpp"

namespace sparc::analysis {

using DistanceMatrix = Matrix;

// Image slice of `row`, rescaled to sum to one.
inline std::vector<double> normalize_image_distribution(std::span<const double> row, std::size_t n_image) {
  if (row.size() < n_image) throw ShapeError("normalize_image_distribution: row shorter than n_image");
  double total = 0.0;
  for (std::size_t j = 0; j < n_image; ++j) total += row[j];
  if (!(total > 0.0)) throw DegenerateDistributionError("image slice has no attention mass");
  std::vector<double> p(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(n_image));
  for (auto& v : p) v /= total;
  return p;
}

// 1-D earth mover's distance between two distributions on shared, sorted
// support points: sum_k |F_p(k) - F_q(k)| * (x_{k+1} - x_k).
inline double wasserstein_1d(std::span<const double> p, std::span<const double> q,
                             std::span<const double> positions) {
  if (p.size() != q.size() || p.size() != positions.size()) throw ShapeError("wasserstein_1d: length mismatch");
  if (p.empty()) throw ShapeError("wasserstein_1d: empty support");
  double sp = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] < 0.0 || q[k] < 0.0) throw ValueError("wasserstein_1d: negative mass");
    sp += p[k];
    sq += q[k];
  }
  if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) throw ValueError("wasserstein_1d: inputs not normalized");
  for (std::size_t k = 1; k < positions.size(); ++k)
    if (positions[k] < positions[k - 1]) throw ValueError("wasserstein_1d: positions not sorted");

  double dist = 0.0, cp = 0.0, cq = 0.0;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    cp += p[k];
    cq += q[k];
    dist += std::abs(cp - cq) * (positions[k + 1] - positions[k]);
  }
  return dist;
}

inline std::vector<double> unit_positions(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = static_cast<double>(k);
  return x;
}

inline double wasserstein_1d(std::span<const double> p, std::span<const double> q) {
  return wasserstein_1d(p, q, unit_positions(p.size()));
}

// Distances between the image-normalized distributions of the first
// `first_t` rows, over unit-spaced token indices.
inline DistanceMatrix pairwise_diversity(std::span<const std::vector<double>> rows, std::size_t n_image,
                                         std::size_t first_t) {
  if (first_t == 0 || rows.size() < first_t) {
    throw RangeError("pairwise_diversity: need " + std::to_string(first_t) + " rows, have " +
                     std::to_string(rows.size()));
  }
  std::vector<std::vector<double>> dists;
  dists.reserve(first_t);
  for (std::size_t t = 0; t < first_t; ++t) dists.push_back(normalize_image_distribution(rows[t], n_image));
  const auto pos = unit_positions(n_image);
  DistanceMatrix m(first_t, first_t);
  for (std::size_t a = 0; a < first_t; ++a) {
    for (std::size_t b = a + 1; b < first_t; ++b) {
      m(a, b) = m(b, a) = wasserstein_1d(dists[a], dists[b], pos);
    }
  }
  return m;
}

inline DistanceMatrix pairwise_diversity(const AttentionTrace& trace, std::size_t layer, std::size_t first_t) {
  if (trace.size() < first_t || first_t == 0) {
    throw RangeError("pairwise_diversity: trace has " + std::to_string(trace.size()) + " steps, need " +
                     std::to_string(first_t));
  }
  const auto rows = trace.rows_at(layer);
  return pairwise_diversity(rows, trace.steps.front().n_image, first_t);
}

// Mean over unordered off-diagonal pairs; 0 for a 1x1 matrix.
inline double mean_pairwise_distance(const DistanceMatrix& m) {
  const std::size_t n = m.rows();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) s += m(a, b);
  return s / static_cast<double>(n * (n - 1) / 2);
}

struct ShareCurve {
  std::vector<double> image;
  std::vector<double> text;
  // Shares divided by the number of positions in each group.
  std::vector<double> image_per_token;
  std::vector<double> text_per_token;
};

inline ShareCurve image_share_curve(std::span<const std::vector<double>> rows, std::size_t n_image) {
  ShareCurve c;
  for (const auto& row : rows) {
    if (row.size() < n_image) throw ShapeError("image_share_curve: row shorter than n_image");
    double img = 0.0, total = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      total += row[j];
      if (j < n_image) img += row[j];
    }
    const double text = total - img;
    c.image.push_back(img);
    c.text.push_back(text);
    c.image_per_token.push_back(n_image ? img / static_cast<double>(n_image) : 0.0);
    const std::size_t n_text = row.size() - n_image;
    c.text_per_token.push_back(n_text ? text / static_cast<double>(n_text) : 0.0);
  }
  return c;
}

inline ShareCurve image_share_curve(const AttentionTrace& trace, std::size_t layer) {
  if (trace.empty()) return {};
  return image_share_curve(trace.rows_at(layer), trace.steps.front().n_image);
}

// Image tokens whose largest |coordinate| exceeds k times the median of that
// quantity over all image tokens. `states` holds one row per image token.
inline std::vector<std::size_t> sink_partition(const Matrix& states, double k) {
  if (states.rows() < 2) throw RangeError("sink_partition: need at least 2 image tokens");
  if (!(k > 1.0)) throw ValueError("sink_partition: k must be > 1");
  std::vector<double> peak(states.rows(), 0.0);
  for (std::size_t j = 0; j < states.rows(); ++j)
    for (double v : states.row(j)) peak[j] = std::max(peak[j], std::abs(v));
  std::vector<double> sorted = peak;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<std::size_t> sinks;
  for (std::size_t j = 0; j < n; ++j)
    if (peak[j] > k * median) sinks.push_back(j);
  return sinks;
}

// Mean attention on sink image tokens over mean attention on the other image tokens.
inline double sink_ratio(std::span<const double> row, std::size_t n_image, std::span<const std::size_t> sinks) {
  if (row.size() < n_image) throw ShapeError("sink_ratio: row shorter than n_image");
  std::vector<char> is_sink(n_image, 0);
  for (auto j : sinks) {
    if (j >= n_image) throw RangeError("sink_ratio: sink index outside image positions");
    is_sink[j] = 1;
  }
  double s_sum = 0.0, o_sum = 0.0;
  std::size_t s_n = 0, o_n = 0;
  for (std::size_t j = 0; j < n_image; ++j) {
    if (is_sink[j]) {
      s_sum += row[j];
      ++s_n;
    } else {
      o_sum += row[j];
      ++o_n;
    }
  }
  if (s_n == 0 || o_n == 0) throw RangeError("sink_ratio: sink set must be a nonempty proper subset");
  const double o_mean = o_sum / static_cast<double>(o_n);
  if (!(o_mean > 0.0)) throw DegenerateDistributionError("sink_ratio: no attention on non-sink tokens");
  return (s_sum / static_cast<double>(s_n)) / o_mean;
}

inline std::vector<double> sink_ratio_curve(std::span<const std::vector<double>> rows, std::size_t n_image,
                                            std::span<const std::size_t> sinks) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(sink_ratio(r, n_image, sinks));
  return out;
}

// Fraction of image attention falling inside `mask`.
inline double region_share(std::span<const double> row, const std::vector<bool>& mask) {
  const std::size_t n_image = mask.size();
  if (row.size() < n_image) throw ShapeError("region_share: row shorter than mask");
  double in = 0.0, total = 0.0;
  for (std::size_t j = 0; j < n_image; ++j) {
    total += row[j];
    if (mask[j]) in += row[j];
  }
  if (!(total > 0.0)) throw DegenerateDistributionError("region_share: image slice has no attention mass");
  return in / total;
}

inline std::vector<double> region_share_curve(std::span<const std::vector<double>> rows,
                                              const std::vector<bool>& mask) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(region_share(r, mask));
  return out;
}

// Mean of pairwise sentence similarity scores. `upper[i]` lists the scores of
// sentence i against sentences i+1 .. n-1.
inline double caption_similarity(std::span<const std::vector<double>> upper) {
  const std::size_t n = upper.size() + 1;
  if (upper.empty()) throw RangeError("caption_similarity: need at least 2 sentences");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < upper.size(); ++i) {
    if (upper[i].size() != n - 1 - i) {
      throw ShapeError("caption_similarity: row " + std::to_string(i) + " should have " +
                       std::to_string(n - 1 - i) + " scores");
    }
    for (double s : upper[i]) {
      if (!(s >= 0.0 && s <= 100.0)) throw ValueError("caption_similarity: score outside [0, 100]");
      sum += s;
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

struct SelectionHistogram {
  std::size_t num_high = 0;
  std::size_t num_low = 0;
  bool operator==(const SelectionHistogram&) const = default;
};

inline SelectionHistogram selection_histogram(std::span<const std::size_t> counts, std::size_t high_threshold) {
  if (high_threshold < 1) throw ValueError("selection_histogram: threshold must be >= 1");
  SelectionHistogram h;
  for (auto c : counts) (c >= high_threshold ? h.num_high : h.num_low)++;
  return h;
}

// Selection counts reconstructed from a trace's per-step selected sets.
inline std::vector<std::size_t> counts_from_trace(const AttentionTrace& trace) {
  if (trace.empty()) return {};
  std::vector<std::size_t> c(trace.steps.front().n_image, 0);
  for (const auto& s : trace.steps)
    for (auto j : s.selected)
      if (j < c.size()) ++c[j];
  return c;
}

}  // namespace sparc::analysis
