#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparc/analysis.hpp"
#include "sparc/checksum.hpp"
#include "sparc/decoder.hpp"
#include "sparc/errors.hpp"
#include "sparc/model.hpp"
#include "sparc/rng.hpp"
#include "sparc/stdf.hpp"
#include "sparc/trace.hpp"

namespace sparc::harness {

inline constexpr const char* kToolName = "sparc-desk";
inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kTraceFormat = "trace-jsonl-v1";
inline constexpr int kManifestVersion = 1;

// Desk fixture dimensions: 4 layers, 4 heads of width 8.
inline ModelConfig desk_config() { return ModelConfig{}; }
inline constexpr std::uint64_t kDeskSeed = 42;
inline constexpr double kDeskScale = 1.5;

// Selection layer at the same relative depth as layer 20 of 32.
inline std::size_t default_select_layer(std::size_t num_layers) { return num_layers * 20 / 32; }

// ---------------------------------------------------------------------------
// Fixture generation

// Weights uniform in [-scale, scale] from one SplitMix64 stream, consumed in
// container order (row-major within each tensor). Values are rounded to f32
// so the in-memory model equals what a reader gets back.
inline ModelWeights generate_weights(std::uint64_t seed, const ModelConfig& cfg, double scale) {
  cfg.validate();
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ValueError("gen_model: scale must be >= 0");
  SplitMix64 rng(seed);
  const auto draw = [&] { return static_cast<double>(static_cast<float>(rng.next_symmetric(scale))); };
  const auto fill_m = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (auto& v : m.data()) v = draw();
    return m;
  };
  const auto fill_v = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = draw();
    return v;
  };
  const auto D = cfg.model_dim;
  ModelWeights w;
  w.token_embedding = fill_m(cfg.vocab_size, D);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = fill_v(D);
    lw.wq = fill_m(D, D);
    lw.wk = fill_m(D, D);
    lw.wv = fill_m(D, D);
    lw.wo = fill_m(D, D);
    lw.mlp_norm = fill_v(D);
    lw.mlp_in = fill_m(D, cfg.mlp_hidden);
    lw.mlp_out = fill_m(cfg.mlp_hidden, D);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm = fill_v(D);
  w.unembedding = fill_m(D, cfg.vocab_size);
  return w;
}

inline Model generate_model(std::uint64_t seed, const ModelConfig& cfg, double scale) {
  return Model{cfg, generate_weights(seed, cfg, scale)};
}

inline std::string serialize_model(const Model& m) {
  std::ostringstream os(std::ios::binary);
  stdf::write(os, m.config, m.weights);
  return os.str();
}

inline void gen_model(const std::string& path, std::uint64_t seed, const ModelConfig& cfg, double scale) {
  const auto m = generate_model(seed, cfg, scale);
  stdf::save_file(path, m.config, m.weights);
}

// Seeded uniform [-1, 1] stand-ins for vision-encoder outputs.
inline Matrix synthetic_image_embeddings(std::uint64_t seed, std::size_t n_image, std::size_t model_dim) {
  SplitMix64 rng(seed ^ 0x696d616765ULL);  // "image"
  Matrix m(n_image, model_dim);
  for (auto& v : m.data()) v = rng.next_symmetric(1.0);
  return m;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed for " + path);
}

inline std::string checksum_hex(const std::string& bytes) { return to_hex(fnv1a64(bytes)); }

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Decode requests

struct DecodeRequest {
  std::string weights_path;
  std::optional<std::string> image_path;  // JSON matrix; seeded synthetic when absent
  std::size_t n_image = 16;
  std::uint64_t seed = kDeskSeed;
  std::vector<std::size_t> inst_tokens{1, 2, 3, 4};
  std::size_t max_new_tokens = 64;
  std::optional<std::size_t> eos_token_id;
  InterventionMode mode = InterventionMode::baseline;
  std::optional<double> alpha;  // defaults: 1.1 for sparc modes, 0.5 for naive
  double beta = 0.1;
  double tau = 1.5;
  std::optional<std::size_t> select_layer;  // defaults to default_select_layer(L)
  bool apply_same_step = false;
  std::vector<std::size_t> trace_layers;
  std::string trace_out;
  std::string tokens_out;
  std::string manifest_out;
  std::string hidden_out;

  double resolved_alpha() const {
    if (alpha) return *alpha;
    return mode == InterventionMode::naive ? 0.5 : 1.1;
  }
  std::size_t resolved_select_layer(std::size_t num_layers) const {
    return select_layer ? *select_layer : default_select_layer(num_layers);
  }
};

inline Matrix load_image_embeddings(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
    const auto rows = j.is_object() ? j.at("embeddings") : j;
    const auto data = rows.get<std::vector<std::vector<double>>>();
    const std::size_t cols = data.empty() ? 0 : data.front().size();
    Matrix m(data.size(), cols);
    for (std::size_t r = 0; r < data.size(); ++r) {
      if (data[r].size() != cols) throw ShapeError("image embeddings: ragged rows");
      std::copy(data[r].begin(), data[r].end(), m.row(r).begin());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("image embeddings " + path + ": " + e.what());
  }
}

inline GenerationRequest to_generation_request(const DecodeRequest& r, const Model& model) {
  GenerationRequest g;
  g.image_embeddings = r.image_path ? load_image_embeddings(*r.image_path)
                                    : synthetic_image_embeddings(r.seed, r.n_image, model.config.model_dim);
  g.instruction_ids = r.inst_tokens;
  g.max_new_tokens = r.max_new_tokens;
  g.eos_token_id = r.eos_token_id;
  g.mode = r.mode;
  g.naive.alpha = r.resolved_alpha();
  g.sparc.alpha = r.resolved_alpha();
  g.sparc.beta = r.beta;
  g.sparc.tau = r.tau;
  g.sparc.select_layer = r.resolved_select_layer(model.config.num_layers);
  g.sparc.apply_same_step = r.apply_same_step;
  g.trace_layers = r.trace_layers;
  return g;
}

// Checks user-supplied parameters against the model before any work is done.
inline void validate_request(const DecodeRequest& r, const ModelConfig& cfg) {
  if (uses_selection(r.mode)) {
    SparcConfig{r.resolved_alpha(), r.beta, r.tau, r.resolved_select_layer(cfg.num_layers)}.validate(cfg.num_layers);
  }
  if (r.mode == InterventionMode::naive && !(r.resolved_alpha() >= 0.0)) throw ValueError("naive: alpha must be >= 0");
  for (auto id : r.inst_tokens)
    if (id >= cfg.vocab_size) throw ValueError("instruction id " + std::to_string(id) + " out of vocabulary");
  for (auto l : r.trace_layers)
    if (l >= cfg.num_layers) throw ValueError("trace layer " + std::to_string(l) + " out of range");
  if (r.select_layer && *r.select_layer >= cfg.num_layers) throw ValueError("select layer out of range");
}

// Every parameter that influences outputs, in a stable key order.
inline nlohmann::ordered_json request_to_json(const DecodeRequest& r) {
  nlohmann::ordered_json j;
  j["weights"] = r.weights_path;
  j["image_embeddings"] = r.image_path ? nlohmann::ordered_json(*r.image_path) : nlohmann::ordered_json(nullptr);
  j["n_image"] = r.n_image;
  j["seed"] = r.seed;
  j["inst_tokens"] = r.inst_tokens;
  j["max_new_tokens"] = r.max_new_tokens;
  j["eos_token_id"] = r.eos_token_id ? nlohmann::ordered_json(*r.eos_token_id) : nlohmann::ordered_json(nullptr);
  j["mode"] = std::string(to_string(r.mode));
  j["alpha"] = r.alpha ? nlohmann::ordered_json(*r.alpha) : nlohmann::ordered_json(nullptr);
  j["beta"] = r.beta;
  j["tau"] = r.tau;
  j["select_layer"] = r.select_layer ? nlohmann::ordered_json(*r.select_layer) : nlohmann::ordered_json(nullptr);
  j["apply_same_step"] = r.apply_same_step;
  j["trace_layers"] = r.trace_layers;
  return j;
}

inline DecodeRequest request_from_json(const nlohmann::json& j) {
  DecodeRequest r;
  try {
    r.weights_path = j.at("weights").get<std::string>();
    if (!j.at("image_embeddings").is_null()) r.image_path = j["image_embeddings"].get<std::string>();
    r.n_image = j.at("n_image").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.inst_tokens = j.at("inst_tokens").get<std::vector<std::size_t>>();
    r.max_new_tokens = j.at("max_new_tokens").get<std::size_t>();
    if (!j.at("eos_token_id").is_null()) r.eos_token_id = j["eos_token_id"].get<std::size_t>();
    r.mode = parse_mode(j.at("mode").get<std::string>());
    if (!j.at("alpha").is_null()) r.alpha = j["alpha"].get<double>();
    r.beta = j.at("beta").get<double>();
    r.tau = j.at("tau").get<double>();
    if (!j.at("select_layer").is_null()) r.select_layer = j["select_layer"].get<std::size_t>();
    r.apply_same_step = j.at("apply_same_step").get<bool>();
    r.trace_layers = j.at("trace_layers").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: bad request block: ") + e.what());
  }
  return r;
}

struct DecodeOutputs {
  GenerationResult result;
  std::string trace_jsonl;
  std::string tokens_json;
  nlohmann::ordered_json manifest;
};

inline std::string tokens_to_json(const std::vector<std::size_t>& tokens) {
  return nlohmann::json(tokens).dump() + "\n";
}

// Decodes, serializes, and writes whichever output paths are set.
inline DecodeOutputs run_decode(const DecodeRequest& req) {
  const std::string weight_bytes = read_file(req.weights_path);
  std::istringstream is(weight_bytes, std::ios::binary);
  const Model model = stdf::read(is);
  const auto greq = to_generation_request(req, model);

  DecodeOutputs out;
  out.result = generate(model, greq);
  std::ostringstream trace_os;
  write_jsonl(trace_os, out.result.trace);
  out.trace_jsonl = trace_os.str();
  out.tokens_json = tokens_to_json(out.result.tokens);

  const auto request = request_to_json(req);
  auto& m = out.manifest;
  m["tool"] = kToolName;
  m["tool_version"] = kToolVersion;
  m["manifest_version"] = kManifestVersion;
  m["formats"] = {{"weights", "STDF-v1"}, {"trace", kTraceFormat}};
  m["weights_checksum"] = checksum_hex(weight_bytes);
  m["request"] = request;
  m["params_hash"] = to_hex(fnv1a64(request.dump()));
  m["resolved"] = {{"alpha", req.resolved_alpha()},
                   {"select_layer", req.resolved_select_layer(model.config.num_layers)},
                   {"n_image", greq.image_embeddings.rows()}};
  m["outputs"] = {{"steps", out.result.tokens.size()},
                  {"tokens_checksum", checksum_hex(out.tokens_json)},
                  {"trace_checksum", checksum_hex(out.trace_jsonl)}};

  if (!req.trace_out.empty()) write_file(req.trace_out, out.trace_jsonl);
  if (!req.tokens_out.empty()) write_file(req.tokens_out, out.tokens_json);
  if (!req.hidden_out.empty()) {
    DecodeSession s(model, greq);
    const auto& pre = s.prefill();
    const auto layer = req.resolved_select_layer(model.config.num_layers);
    std::vector<std::vector<double>> states;
    for (std::size_t j = 0; j < s.layout().n_image; ++j) {
      const auto r = pre.hidden.at(layer).row(j);
      states.emplace_back(r.begin(), r.end());
    }
    nlohmann::ordered_json h;
    h["n_image"] = s.layout().n_image;
    h["layer"] = layer;
    h["states"] = states;
    write_file(req.hidden_out, h.dump() + "\n");
  }
  if (!req.manifest_out.empty()) write_file(req.manifest_out, m.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepGrid {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> tau;
  std::vector<std::size_t> select_layer;
};

// Accepts a JSON object {"alpha": [...], "beta": [...], "tau": [...], "select_layer": [...]}
// or the inline form "alpha=1.05,1.1;tau=1.5". Axes left out take the base
// request's value.
inline SweepGrid parse_grid(const std::string& text, const DecodeRequest& base, std::size_t num_layers) {
  SweepGrid g;
  bool have_a = false, have_b = false, have_t = false, have_l = false;
  const auto trimmed = text.substr(0, text.find_last_not_of(" \n\r\t") + 1);
  if (!trimmed.empty() && trimmed.find_first_not_of(" \n\r\t") != std::string::npos &&
      trimmed[trimmed.find_first_not_of(" \n\r\t")] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
      if (j.contains("alpha")) { g.alpha = j["alpha"].get<std::vector<double>>(); have_a = true; }
      if (j.contains("beta")) { g.beta = j["beta"].get<std::vector<double>>(); have_b = true; }
      if (j.contains("tau")) { g.tau = j["tau"].get<std::vector<double>>(); have_t = true; }
      if (j.contains("select_layer")) {
        g.select_layer = j["select_layer"].get<std::vector<std::size_t>>();
        have_l = true;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValueError(std::string("grid: ") + e.what());
    }
  } else {
    std::stringstream axes(text);
    std::string axis;
    while (std::getline(axes, axis, ';')) {
      if (axis.find_first_not_of(' ') == std::string::npos) continue;
      const auto eq = axis.find('=');
      if (eq == std::string::npos) throw ValueError("grid: expected name=v1,v2,... in '" + axis + "'");
      std::string name = axis.substr(0, eq);
      name.erase(0, name.find_first_not_of(' '));
      name.erase(name.find_last_not_of(' ') + 1);
      std::vector<double> vals;
      std::stringstream vs(axis.substr(eq + 1));
      std::string v;
      while (std::getline(vs, v, ',')) {
        if (v.find_first_not_of(' ') == std::string::npos) continue;
        try {
          vals.push_back(std::stod(v));
        } catch (const std::exception&) {
          throw ValueError("grid: bad number '" + v + "'");
        }
      }
      if (name == "alpha") { g.alpha = vals; have_a = true; }
      else if (name == "beta") { g.beta = vals; have_b = true; }
      else if (name == "tau") { g.tau = vals; have_t = true; }
      else if (name == "select_layer" || name == "l_sel") {
        for (double x : vals) {
          if (x < 0 || x != std::floor(x)) throw ValueError("grid: select_layer values must be integers");
          g.select_layer.push_back(static_cast<std::size_t>(x));
        }
        have_l = true;
      } else {
        throw ValueError("grid: unknown axis '" + name + "'");
      }
    }
  }
  if (!have_a) g.alpha = {base.alpha.value_or(1.1)};
  if (!have_b) g.beta = {base.beta};
  if (!have_t) g.tau = {base.tau};
  if (!have_l) g.select_layer = {base.resolved_select_layer(num_layers)};
  if (g.alpha.empty() || g.beta.empty() || g.tau.empty() || g.select_layer.empty()) {
    throw ValueError("grid: every axis needs at least one value");
  }
  for (double a : g.alpha) SparcConfig{a, 0.1, 0.0, 0}.validate(num_layers);
  for (double b : g.beta) SparcConfig{1.1, b, 0.0, 0}.validate(num_layers);
  for (double t : g.tau) SparcConfig{1.1, 0.1, t, 0}.validate(num_layers);
  for (auto l : g.select_layer) SparcConfig{1.1, 0.1, 0.0, l}.validate(num_layers);
  return g;
}

struct SweepRow {
  double alpha = 0;
  double beta = 0;
  double tau = 0;
  std::size_t select_layer = 0;
  std::size_t steps = 0;
  double mean_image_share = 0;
  double mean_diversity = 0;
  std::size_t selection_total = 0;
  std::size_t tokens_selected = 0;  // image tokens selected at least once
};

inline constexpr std::size_t kDiversityWindow = 32;

// Summary of one trace at `layer`: mean image share and mean pairwise
// diversity over the first min(32, steps) steps.
inline std::pair<double, double> trace_summary(const AttentionTrace& trace, std::size_t layer) {
  if (trace.empty()) return {0.0, 0.0};
  const auto shares = analysis::image_share_curve(trace, layer);
  double mean_share = 0.0;
  for (double s : shares.image) mean_share += s;
  mean_share /= static_cast<double>(shares.image.size());
  double diversity = 0.0;
  if (trace.steps.front().n_image > 0) {
    const auto t = std::min(kDiversityWindow, trace.size());
    diversity = analysis::mean_pairwise_distance(analysis::pairwise_diversity(trace, layer, t));
  }
  return {mean_share, diversity};
}

// Cartesian product in axis order alpha, beta, tau, select_layer; each axis
// keeps its input order. Every cell runs in sparc mode.
inline std::vector<SweepRow> run_sweep(const SweepGrid& grid, const DecodeRequest& base) {
  if (grid.alpha.empty() || grid.beta.empty() || grid.tau.empty() || grid.select_layer.empty()) {
    throw ValueError("sweep: empty grid");
  }
  const Model model = stdf::load_file(base.weights_path);
  std::vector<SweepRow> rows;
  for (double a : grid.alpha)
    for (double b : grid.beta)
      for (double t : grid.tau)
        for (auto l : grid.select_layer) {
          DecodeRequest r = base;
          r.mode = InterventionMode::sparc;
          r.alpha = a;
          r.beta = b;
          r.tau = t;
          r.select_layer = l;
          r.trace_layers = {l};
          const auto res = generate(model, to_generation_request(r, model));
          SweepRow row{a, b, t, l};
          row.steps = res.tokens.size();
          std::tie(row.mean_image_share, row.mean_diversity) = trace_summary(res.trace, l);
          for (const auto& s : res.selections) row.selection_total += s.size();
          for (auto c : res.final_counts) row.tokens_selected += c > 0;
          rows.push_back(row);
        }
  return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  const auto f = format_double;
  os << "alpha,beta,tau,select_layer,steps,mean_image_share,mean_diversity,selection_total,tokens_selected\n";
  for (const auto& r : rows) {
    os << f(r.alpha) << ',' << f(r.beta) << ',' << f(r.tau) << ',' << r.select_layer << ',' << r.steps << ','
       << f(r.mean_image_share) << ',' << f(r.mean_diversity) << ',' << r.selection_total << ',' << r.tokens_selected
       << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Benchmarks

struct BenchRow {
  InterventionMode mode = InterventionMode::baseline;
  double ms_per_token_mean = 0;
  double ms_per_token_std = 0;
  double delta_pct = 0;
  std::vector<double> samples;
};

// Milliseconds per generated token, excluding prefill.
inline double time_decode_ms_per_token(const Model& model, const GenerationRequest& req) {
  DecodeSession s(model, req);
  s.prefill();
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t n = 0;
  for (; n < req.max_new_tokens; ++n) {
    const auto t = s.decode_step();
    if (req.eos_token_id && t.token_id == *req.eos_token_id) {
      ++n;
      break;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  if (n == 0) return 0.0;
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(n);
}

// One discarded warmup per mode, then `repetitions` timed runs. Modes are
// interleaved within each repetition so drift affects them equally.
inline std::vector<BenchRow> run_bench(const Model& model, const DecodeRequest& base, std::size_t repetitions,
                                       std::vector<InterventionMode> modes = {InterventionMode::baseline,
                                                                              InterventionMode::naive,
                                                                              InterventionMode::sparc,
                                                                              InterventionMode::sparc_reference}) {
  if (repetitions < 3) throw ValueError("bench: need at least 3 repetitions");
  if (modes.empty() || modes.front() != InterventionMode::baseline) {
    modes.insert(modes.begin(), InterventionMode::baseline);
  }
  std::vector<GenerationRequest> reqs;
  for (auto m : modes) {
    DecodeRequest r = base;
    r.mode = m;
    r.alpha.reset();
    if (base.alpha && m != InterventionMode::naive) r.alpha = base.alpha;
    reqs.push_back(to_generation_request(r, model));
  }
  std::vector<BenchRow> rows(modes.size());
  for (std::size_t k = 0; k < modes.size(); ++k) {
    rows[k].mode = modes[k];
    (void)time_decode_ms_per_token(model, reqs[k]);
  }
  for (std::size_t rep = 0; rep < repetitions; ++rep)
    for (std::size_t k = 0; k < modes.size(); ++k) rows[k].samples.push_back(time_decode_ms_per_token(model, reqs[k]));

  for (auto& r : rows) {
    double mean = 0.0;
    for (double s : r.samples) mean += s;
    mean /= static_cast<double>(r.samples.size());
    double var = 0.0;
    for (double s : r.samples) var += (s - mean) * (s - mean);
    r.ms_per_token_mean = mean;
    r.ms_per_token_std = std::sqrt(var / static_cast<double>(r.samples.size() - 1));
  }
  const double base_mean = rows.front().ms_per_token_mean;
  for (auto& r : rows) r.delta_pct = base_mean > 0 ? 100.0 * (r.ms_per_token_mean - base_mean) / base_mean : 0.0;
  return rows;
}

inline nlohmann::ordered_json bench_to_json(const std::vector<BenchRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["mode"] = std::string(to_string(r.mode));
    j["ms_per_token_mean"] = r.ms_per_token_mean;
    j["ms_per_token_std"] = r.ms_per_token_std;
    j["delta_pct"] = r.delta_pct;
    arr.push_back(j);
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Analysis reports

struct AnalyzeInputs {
  AttentionTrace trace;
  std::optional<std::size_t> layer;
  std::size_t first_t = kDiversityWindow;
  std::optional<Matrix> hidden;  // image-token hidden states for sink detection
  double sink_k = 10.0;
  std::vector<std::pair<std::string, std::vector<bool>>> masks;
  std::optional<std::vector<std::vector<double>>> pair_scores;
  std::size_t high_threshold = 2;
};

inline std::vector<std::pair<std::string, std::vector<bool>>> parse_masks(const std::string& text) {
  std::vector<std::pair<std::string, std::vector<bool>>> out;
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    const auto n = j.at("n_image").get<std::size_t>();
    for (const auto& [name, bits] : j.at("masks").items()) {
      std::vector<bool> mask;
      for (const auto& b : bits) {
        const int v = b.get<int>();
        if (v != 0 && v != 1) throw ValueError("mask " + name + ": entries must be 0 or 1");
        mask.push_back(v == 1);
      }
      if (mask.size() != n) throw ShapeError("mask " + name + ": expected " + std::to_string(n) + " entries");
      out.emplace_back(name, std::move(mask));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mask file: ") + e.what());
  }
  return out;
}

inline std::vector<std::vector<double>> parse_pair_scores(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& arr = j.is_object() ? j.at("scores") : j;
    return arr.get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pair-score file: ") + e.what());
  }
}

inline Matrix parse_hidden_states(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const auto states = j.at("states").get<std::vector<std::vector<double>>>();
    const std::size_t cols = states.empty() ? 0 : states.front().size();
    Matrix m(states.size(), cols);
    for (std::size_t r = 0; r < states.size(); ++r) {
      if (states[r].size() != cols) throw ShapeError("hidden states: ragged rows");
      std::copy(states[r].begin(), states[r].end(), m.row(r).begin());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("hidden-state file: ") + e.what());
  }
}

struct Report {
  nlohmann::ordered_json json;
  std::string csv;
};

inline Report analyze(const AnalyzeInputs& in) {
  const auto& trace = in.trace;
  if (trace.empty()) throw RangeError("analyze: empty trace");
  const auto layers = trace.layers();
  const std::size_t layer = in.layer ? *in.layer : layers.at(layers.size() * 20 / 32);
  const auto rows = trace.rows_at(layer);
  const std::size_t n_image = trace.steps.front().n_image;

  Report rep;
  auto& j = rep.json;
  std::ostringstream csv;
  csv << "metric,step,value\n";
  const auto emit = [&](const std::string& name, const std::vector<double>& curve) {
    for (std::size_t i = 0; i < curve.size(); ++i) {
      csv << name << ',' << trace.steps[i].step << ',' << format_double(curve[i]) << '\n';
    }
  };

  j["layer"] = layer;
  j["steps"] = trace.size();
  j["n_image"] = n_image;
  j["n_inst"] = trace.steps.front().n_inst;

  const auto shares = analysis::image_share_curve(rows, n_image);
  j["image_share"] = shares.image;
  j["text_share"] = shares.text;
  j["image_share_per_token"] = shares.image_per_token;
  j["text_share_per_token"] = shares.text_per_token;
  emit("image_share", shares.image);
  emit("text_share", shares.text);
  emit("image_share_per_token", shares.image_per_token);
  emit("text_share_per_token", shares.text_per_token);

  if (n_image > 0) {
    const std::size_t t = std::min(in.first_t, trace.size());
    const auto dm = analysis::pairwise_diversity(rows, n_image, t);
    std::vector<std::vector<double>> dmj(t);
    for (std::size_t a = 0; a < t; ++a) dmj[a].assign(dm.row(a).begin(), dm.row(a).end());
    j["diversity"] = {{"first_t", t}, {"mean_pairwise_distance", analysis::mean_pairwise_distance(dm)},
                      {"matrix", dmj}};
  }

  if (in.hidden) {
    const auto sinks = analysis::sink_partition(*in.hidden, in.sink_k);
    nlohmann::ordered_json s;
    s["k"] = in.sink_k;
    s["sinks"] = sinks;
    if (!sinks.empty() && sinks.size() < n_image) {
      const auto ratio = analysis::sink_ratio_curve(rows, n_image, sinks);
      s["ratio"] = ratio;
      emit("sink_ratio", ratio);
    } else {
      s["ratio"] = nullptr;
    }
    j["sink"] = s;
  }

  if (!in.masks.empty()) {
    nlohmann::ordered_json regions;
    for (const auto& [name, mask] : in.masks) {
      if (mask.size() != n_image) throw ShapeError("mask " + name + " does not match n_image");
      const auto curve = analysis::region_share_curve(rows, mask);
      regions[name] = curve;
      emit("region:" + name, curve);
    }
    j["regions"] = regions;
  }

  if (in.pair_scores) j["c_sim"] = analysis::caption_similarity(*in.pair_scores);

  const auto counts = analysis::counts_from_trace(trace);
  const auto hist = analysis::selection_histogram(counts, in.high_threshold);
  j["selection"] = {{"counts", counts},
                    {"high_threshold", in.high_threshold},
                    {"num_high", hist.num_high},
                    {"num_low", hist.num_low}};
  rep.csv = csv.str();
  return rep;
}

}  // namespace sparc::harness
