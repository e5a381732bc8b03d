#pragma once

// Full recomputation of a decoder forward pass with no incremental cache.
// Every position's keys and values are rebuilt from its hidden state each
// call. Value vectors of image positions are multiplied by a per-query scale
// snapshot, mirroring what the value-rescaling path should have done to the
// cache at the time that query ran.

#include <cmath>
#include <cstddef>
#include <vector>

#include "sparc/model.hpp"
#include "sparc/tensor.hpp"

namespace oracle {

struct RecomputeInput {
  const sparc::Model* model = nullptr;
  sparc::Matrix image;                 // n_image x model_dim
  std::vector<std::size_t> prompt_ids;  // instruction ids
  std::vector<std::size_t> generated;   // tokens fed after the prompt
  // scale[p] multiplies image values for the query at position p; an empty
  // entry means all ones.
  std::vector<std::vector<double>> scale;
};

inline std::vector<double> mat_vec(const std::vector<double>& x, const sparc::Matrix& w) {
  std::vector<double> y(w.cols(), 0.0);
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) s += x[r] * w(r, c);
    y[c] = s;
  }
  return y;
}

inline std::vector<double> rms(const std::vector<double>& x, const std::vector<double>& g) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double denom = std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / denom * g[i];
  return y;
}

// Logits of the final position.
inline std::vector<double> recompute_logits(const RecomputeInput& in) {
  const auto& cfg = in.model->config;
  const auto& W = in.model->weights;
  const std::size_t D = cfg.model_dim, H = cfg.num_heads, d = cfg.head_dim, L = cfg.num_layers;
  const std::size_t n_image = in.image.rows();
  const std::size_t N = n_image + in.prompt_ids.size() + in.generated.size();

  // x[p] evolves layer by layer for all positions at once.
  std::vector<std::vector<double>> x(N, std::vector<double>(D));
  for (std::size_t p = 0; p < N; ++p) {
    for (std::size_t c = 0; c < D; ++c) {
      if (p < n_image) x[p][c] = in.image(p, c);
      else if (p < n_image + in.prompt_ids.size()) x[p][c] = W.token_embedding(in.prompt_ids[p - n_image], c);
      else x[p][c] = W.token_embedding(in.generated[p - n_image - in.prompt_ids.size()], c);
    }
    for (std::size_t c = 0; c < D; c += 2) {
      const double ang = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(c) / static_cast<double>(D));
      x[p][c] += std::sin(ang);
      if (c + 1 < D) x[p][c + 1] += std::cos(ang);
    }
  }

  for (std::size_t l = 0; l < L; ++l) {
    const auto& lw = W.layers[l];
    std::vector<std::vector<double>> q(N), k(N), v(N);
    for (std::size_t p = 0; p < N; ++p) {
      const auto h = rms(x[p], lw.attn_norm);
      q[p] = mat_vec(h, lw.wq);
      k[p] = mat_vec(h, lw.wk);
      v[p] = mat_vec(h, lw.wv);
    }
    std::vector<std::vector<double>> next = x;
    for (std::size_t p = 0; p < N; ++p) {
      std::vector<double> o(D, 0.0);
      for (std::size_t hd = 0; hd < H; ++hd) {
        std::vector<double> s(p + 1);
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= p; ++j) {
          double acc = 0.0;
          for (std::size_t t = 0; t < d; ++t) acc += q[p][hd * d + t] * k[j][hd * d + t];
          s[j] = acc / std::sqrt(static_cast<double>(d));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= p; ++j) {
          double f = s[j] / z;
          if (j < n_image && p < in.scale.size() && !in.scale[p].empty()) f *= in.scale[p][j];
          for (std::size_t t = 0; t < d; ++t) o[hd * d + t] += f * v[j][hd * d + t];
        }
      }
      const auto proj = mat_vec(o, lw.wo);
      for (std::size_t c = 0; c < D; ++c) next[p][c] += proj[c];
      const auto h2 = rms(next[p], lw.mlp_norm);
      auto u = mat_vec(h2, lw.mlp_in);
      for (auto& e : u) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
      const auto down = mat_vec(u, lw.mlp_out);
      for (std::size_t c = 0; c < D; ++c) next[p][c] += down[c];
    }
    x = std::move(next);
  }
  return mat_vec(rms(x[N - 1], W.final_norm), W.unembedding);
}

}  // namespace oracle
