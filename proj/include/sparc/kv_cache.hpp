#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sparc/attention.hpp"
#include "sparc/errors.hpp"
#include "sparc/model.hpp"

namespace sparc {

// Per-layer key/value history. Each layer stores one model_dim-wide row per
// consumed position; head h owns columns [h*head_dim, (h+1)*head_dim).
class KVCache {
 public:
  KVCache(const ModelConfig& cfg, std::size_t n_image)
      : num_layers_(cfg.num_layers),
        num_heads_(cfg.num_heads),
        head_dim_(cfg.head_dim),
        model_dim_(cfg.model_dim),
        capacity_(cfg.max_seq_len),
        keys_(cfg.num_layers),
        values_(cfg.num_layers),
        lengths_(cfg.num_layers, 0),
        value_scale_(n_image, 1.0) {
    for (std::size_t l = 0; l < num_layers_; ++l) {
      keys_[l].reserve(capacity_ * model_dim_);
      values_[l].reserve(capacity_ * model_dim_);
    }
  }

  std::size_t num_layers() const { return num_layers_; }
  std::size_t num_heads() const { return num_heads_; }
  std::size_t head_dim() const { return head_dim_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t n_image() const { return value_scale_.size(); }

  // Positions consumed by every layer.
  std::size_t length() const { return lengths_.empty() ? 0 : lengths_.front(); }
  std::size_t length(std::size_t layer) const { return lengths_.at(layer); }
  bool full() const { return length() >= capacity_; }

  void append(std::size_t layer, std::span<const double> key, std::span<const double> value) {
    if (key.size() != model_dim_ || value.size() != model_dim_) throw ShapeError("kv cache: bad row width");
    if (lengths_.at(layer) >= capacity_) throw CapacityError("kv cache: capacity exhausted");
    keys_[layer].insert(keys_[layer].end(), key.begin(), key.end());
    values_[layer].insert(values_[layer].end(), value.begin(), value.end());
    ++lengths_[layer];
  }

  // Drops every position at index >= n, in all layers.
  void truncate(std::size_t n) {
    for (std::size_t l = 0; l < num_layers_; ++l) {
      if (lengths_[l] > n) {
        keys_[l].resize(n * model_dim_);
        values_[l].resize(n * model_dim_);
        lengths_[l] = n;
      }
    }
  }

  VectorsView keys(std::size_t layer, std::size_t head) const {
    return {keys_.at(layer).data() + head * head_dim_, lengths_[layer], head_dim_, model_dim_};
  }
  VectorsView values(std::size_t layer, std::size_t head) const {
    return {values_.at(layer).data() + head * head_dim_, lengths_[layer], head_dim_, model_dim_};
  }

  std::span<const double> key(std::size_t layer, std::size_t head, std::size_t pos) const {
    return keys(layer, head)[pos];
  }
  std::span<const double> value(std::size_t layer, std::size_t head, std::size_t pos) const {
    return values(layer, head)[pos];
  }

  // Multiplies the cached value vector of image position `pos` by `factor`
  // at every layer and head.
  void scale_value(std::size_t pos, double factor) {
    if (pos >= value_scale_.size()) {
      throw ShapeError("kv cache: position " + std::to_string(pos) + " is not an image position");
    }
    for (std::size_t l = 0; l < num_layers_; ++l) {
      if (pos >= lengths_[l]) throw StateError("kv cache: position " + std::to_string(pos) + " not cached yet");
    }
    for (std::size_t l = 0; l < num_layers_; ++l) {
      double* row = values_[l].data() + pos * model_dim_;
      for (std::size_t t = 0; t < model_dim_; ++t) row[t] *= factor;
    }
    value_scale_[pos] *= factor;
    value_vector_scalings_ += num_layers_ * num_heads_;
  }

  // Product of all factors applied to image position j so far.
  std::span<const double> cumulative_value_scale() const { return value_scale_; }

  // Number of (layer, head) value vectors rescaled so far.
  std::size_t value_vector_scalings() const { return value_vector_scalings_; }

 private:
  std::size_t num_layers_;
  std::size_t num_heads_;
  std::size_t head_dim_;
  std::size_t model_dim_;
  std::size_t capacity_;
  std::vector<std::vector<double>> keys_;
  std::vector<std::vector<double>> values_;
  std::vector<std::size_t> lengths_;
  std::vector<double> value_scale_;
  std::size_t value_vector_scalings_ = 0;
};

}  // namespace sparc
