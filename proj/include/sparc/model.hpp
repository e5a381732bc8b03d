#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sparc/errors.hpp"
#include "sparc/tensor.hpp"

namespace sparc {

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t head_dim = 8;
  std::size_t model_dim = 32;
  std::size_t mlp_hidden = 64;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 256;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (num_layers == 0 || num_heads == 0 || head_dim == 0 || model_dim == 0 || mlp_hidden == 0 ||
        vocab_size == 0 || max_seq_len == 0) {
      throw ShapeError("model config: every dimension must be >= 1");
    }
    if (model_dim != num_heads * head_dim) {
      throw ShapeError("model config: model_dim " + std::to_string(model_dim) + " != num_heads * head_dim (" +
                       std::to_string(num_heads) + " * " + std::to_string(head_dim) + ")");
    }
  }
};

struct LayerWeights {
  std::vector<double> attn_norm;  // model_dim
  Matrix wq, wk, wv, wo;          // model_dim x model_dim
  std::vector<double> mlp_norm;   // model_dim
  Matrix mlp_in;                  // model_dim x mlp_hidden
  Matrix mlp_out;                 // mlp_hidden x model_dim

  bool operator==(const LayerWeights&) const = default;
};

struct ModelWeights {
  Matrix token_embedding;  // vocab_size x model_dim
  std::vector<LayerWeights> layers;
  std::vector<double> final_norm;  // model_dim
  Matrix unembedding;              // model_dim x vocab_size

  bool operator==(const ModelWeights&) const = default;
};

struct Model {
  ModelConfig config;
  ModelWeights weights;
};

namespace detail {

inline void check_matrix(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw ValueError(name + ": non-finite value");
  }
}

inline void check_vector(const std::vector<double>& v, std::size_t n, const std::string& name) {
  if (v.size() != n) {
    throw ShapeError(name + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw ValueError(name + ": non-finite value");
  }
}

}  // namespace detail

inline void validate(const ModelConfig& cfg, const ModelWeights& w) {
  cfg.validate();
  const auto D = cfg.model_dim;
  detail::check_matrix(w.token_embedding, cfg.vocab_size, D, "token_embedding");
  if (w.layers.size() != cfg.num_layers) {
    throw ShapeError("expected " + std::to_string(cfg.num_layers) + " layers, got " + std::to_string(w.layers.size()));
  }
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    detail::check_vector(lw.attn_norm, D, p + "attn_norm");
    detail::check_matrix(lw.wq, D, D, p + "wq");
    detail::check_matrix(lw.wk, D, D, p + "wk");
    detail::check_matrix(lw.wv, D, D, p + "wv");
    detail::check_matrix(lw.wo, D, D, p + "wo");
    detail::check_vector(lw.mlp_norm, D, p + "mlp_norm");
    detail::check_matrix(lw.mlp_in, D, cfg.mlp_hidden, p + "mlp_in");
    detail::check_matrix(lw.mlp_out, cfg.mlp_hidden, D, p + "mlp_out");
  }
  detail::check_vector(w.final_norm, D, "final_norm");
  detail::check_matrix(w.unembedding, D, cfg.vocab_size, "unembedding");
}

}  // namespace sparc
