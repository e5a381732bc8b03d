#pragma once

// STDF-v1 weights container.
//
//   offset 0   5 bytes   magic "STDF1"
//              u32 LE    metadata length M
//              M bytes   UTF-8 JSON object: {"format": "STDF", "version": 1, <ModelConfig fields>}
//              u32 LE    tensor count T
//   T times:   u32 LE    name length, then name bytes (UTF-8)
//              u32 LE    rank R, then R x u32 LE dims
//              prod(dims) x f32 LE, row-major
//
// Tensors are written in this order: token_embedding, then per layer l
// layers.<l>.{attn_norm, wq, wk, wv, wo, mlp_norm, mlp_in, mlp_out},
// then final_norm, unembedding. The reader looks tensors up by name.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparc/errors.hpp"
#include "sparc/model.hpp"

namespace sparc::stdf {

inline constexpr char kMagic[5] = {'S', 'T', 'D', 'F', '1'};
inline constexpr int kVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("stdf: truncated stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::string get_bytes(std::istream& is, std::uint32_t n) {
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n)) throw FormatError("stdf: truncated stream");
  return s;
}

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

inline void put_tensor(std::ostream& os, const std::string& name, const std::vector<std::uint32_t>& dims,
                       std::span<const double> values) {
  put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(os, d);
  for (double v : values) put_f32(os, static_cast<float>(v));
}

inline std::vector<double> expect_vector(std::map<std::string, RawTensor>& ts, const std::string& name,
                                         std::size_t n) {
  auto it = ts.find(name);
  if (it == ts.end()) throw FormatError("stdf: missing tensor " + name);
  if (it->second.dims.size() != 1 || it->second.dims[0] != n) throw ShapeError("stdf: bad shape for " + name);
  return std::move(it->second.values);
}

inline Matrix expect_matrix(std::map<std::string, RawTensor>& ts, const std::string& name, std::size_t rows,
                            std::size_t cols) {
  auto it = ts.find(name);
  if (it == ts.end()) throw FormatError("stdf: missing tensor " + name);
  const auto& dims = it->second.dims;
  if (dims.size() != 2 || dims[0] != rows || dims[1] != cols) throw ShapeError("stdf: bad shape for " + name);
  Matrix m(rows, cols);
  std::copy(it->second.values.begin(), it->second.values.end(), m.data().begin());
  return m;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"head_dim", c.head_dim},
          {"model_dim", c.model_dim},   {"mlp_hidden", c.mlp_hidden}, {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.head_dim = j.at("head_dim").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stdf: bad metadata: ") + e.what());
  }
  return c;
}

// Writes the container. Values are narrowed to f32.
inline void write(std::ostream& os, const ModelConfig& cfg, const ModelWeights& w) {
  os.write(kMagic, sizeof(kMagic));
  nlohmann::json meta = config_to_json(cfg);
  meta["format"] = "STDF";
  meta["version"] = kVersion;
  const std::string meta_str = meta.dump();
  detail::put_u32(os, static_cast<std::uint32_t>(meta_str.size()));
  os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  const auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  detail::put_u32(os, u(3 + 8 * w.layers.size()));
  detail::put_tensor(os, "token_embedding", {u(w.token_embedding.rows()), u(w.token_embedding.cols())},
                     w.token_embedding.data());
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    const auto mat = [&](const std::string& n, const Matrix& m) {
      detail::put_tensor(os, p + n, {u(m.rows()), u(m.cols())}, m.data());
    };
    detail::put_tensor(os, p + "attn_norm", {u(lw.attn_norm.size())}, lw.attn_norm);
    mat("wq", lw.wq);
    mat("wk", lw.wk);
    mat("wv", lw.wv);
    mat("wo", lw.wo);
    detail::put_tensor(os, p + "mlp_norm", {u(lw.mlp_norm.size())}, lw.mlp_norm);
    mat("mlp_in", lw.mlp_in);
    mat("mlp_out", lw.mlp_out);
  }
  detail::put_tensor(os, "final_norm", {u(w.final_norm.size())}, w.final_norm);
  detail::put_tensor(os, "unembedding", {u(w.unembedding.rows()), u(w.unembedding.cols())}, w.unembedding.data());
}

inline Model read(std::istream& is) {
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("stdf: bad magic");
  }
  const std::string meta_str = detail::get_bytes(is, detail::get_u32(is));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stdf: metadata is not JSON: ") + e.what());
  }
  if (!meta.is_object() || meta.value("version", -1) != kVersion) throw FormatError("stdf: unsupported version");

  Model model;
  model.config = config_from_json(meta);
  model.config.validate();
  const auto& cfg = model.config;

  std::map<std::string, detail::RawTensor> tensors;
  const std::uint32_t count = detail::get_u32(is);
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = detail::get_bytes(is, detail::get_u32(is));
    detail::RawTensor raw;
    const std::uint32_t rank = detail::get_u32(is);
    if (rank == 0 || rank > 4) throw FormatError("stdf: bad rank for " + name);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      raw.dims.push_back(detail::get_u32(is));
      n *= raw.dims.back();
    }
    if (n > (std::size_t{1} << 28)) throw FormatError("stdf: tensor too large: " + name);
    raw.values.resize(n);
    for (auto& v : raw.values) v = static_cast<double>(std::bit_cast<float>(detail::get_u32(is)));
    tensors.emplace(std::move(name), std::move(raw));
  }

  const auto D = cfg.model_dim;
  auto& w = model.weights;
  w.token_embedding = detail::expect_matrix(tensors, "token_embedding", cfg.vocab_size, D);
  w.layers.resize(cfg.num_layers);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& lw = w.layers[l];
    lw.attn_norm = detail::expect_vector(tensors, p + "attn_norm", D);
    lw.wq = detail::expect_matrix(tensors, p + "wq", D, D);
    lw.wk = detail::expect_matrix(tensors, p + "wk", D, D);
    lw.wv = detail::expect_matrix(tensors, p + "wv", D, D);
    lw.wo = detail::expect_matrix(tensors, p + "wo", D, D);
    lw.mlp_norm = detail::expect_vector(tensors, p + "mlp_norm", D);
    lw.mlp_in = detail::expect_matrix(tensors, p + "mlp_in", D, cfg.mlp_hidden);
    lw.mlp_out = detail::expect_matrix(tensors, p + "mlp_out", cfg.mlp_hidden, D);
  }
  w.final_norm = detail::expect_vector(tensors, "final_norm", D);
  w.unembedding = detail::expect_matrix(tensors, "unembedding", D, cfg.vocab_size);
  validate(cfg, w);
  return model;
}

inline Model load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("stdf: cannot open " + path);
  return read(is);
}

inline void save_file(const std::string& path, const ModelConfig& cfg, const ModelWeights& w) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("stdf: cannot write " + path);
  write(os, cfg, w);
  if (!os) throw Error("stdf: write failed for " + path);
}

}  // namespace sparc::stdf
