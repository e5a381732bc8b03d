// Command-line front end: gen-model | decode | analyze | sweep | bench.
//
// Exit codes: 0 success, 2 usage, 3 format, 4 runtime.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparc/sparc.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;
constexpr int kExitRuntime = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_id_list(const std::string& s, const char* flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(' ') == std::string::npos) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (v < 0 || item.find_first_not_of(' ', used) != std::string::npos) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": bad integer '" + item + "'");
    }
  }
  return out;
}

// Flags shared by decode, sweep and bench.
struct RequestFlags {
  std::string weights;
  std::uint64_t seed = sparc::harness::kDeskSeed;
  std::size_t n_image = 16;
  std::string inst_tokens = "1,2,3,4";
  std::size_t max_new_tokens = 64;
  std::optional<std::size_t> eos;
  std::string mode = "baseline";
  std::optional<double> alpha;
  double beta = 0.1;
  double tau = 1.5;
  std::optional<std::size_t> select_layer;
  std::string trace_layers;
  std::string image_embeddings;
  bool same_step = false;

  void attach(CLI::App* app, bool with_mode) {
    app->add_option("--weights", weights, "STDF-v1 weights file")->required();
    app->add_option("--seed", seed, "seed for synthetic image embeddings");
    app->add_option("--n-image", n_image, "number of synthetic image positions");
    app->add_option("--inst-tokens", inst_tokens, "comma-separated instruction token ids");
    app->add_option("--max-new-tokens", max_new_tokens, "generation budget");
    app->add_option("--eos-token-id", eos, "stop after emitting this id");
    if (with_mode) {
      app->add_option("--mode", mode, "baseline | naive | sparc | sparc_reference")
          ->check(CLI::IsMember({"baseline", "naive", "sparc", "sparc_reference"}));
    }
    app->add_option("--alpha", alpha, "scale factor (default 1.1 for sparc, 0.5 for naive)");
    app->add_option("--beta", beta, "EMA smoothing factor");
    app->add_option("--tau", tau, "relative activation threshold");
    app->add_option("--select-layer", select_layer, "layer whose attention drives selection");
    app->add_option("--trace-layers", trace_layers, "comma-separated layers to trace (default: all)");
    app->add_option("--image-embeddings", image_embeddings, "JSON matrix replacing synthetic embeddings");
    app->add_flag("--same-step", same_step, "apply a step's selection to that step's own output");
  }

  sparc::harness::DecodeRequest build() const {
    sparc::harness::DecodeRequest r;
    r.weights_path = weights;
    r.seed = seed;
    r.n_image = n_image;
    r.inst_tokens = parse_id_list(inst_tokens, "--inst-tokens");
    r.max_new_tokens = max_new_tokens;
    r.eos_token_id = eos;
    r.mode = sparc::parse_mode(mode);
    r.alpha = alpha;
    r.beta = beta;
    r.tau = tau;
    r.select_layer = select_layer;
    r.trace_layers = parse_id_list(trace_layers, "--trace-layers");
    if (!image_embeddings.empty()) r.image_path = image_embeddings;
    r.apply_same_step = same_step;
    return r;
  }
};

void check_request(const sparc::harness::DecodeRequest& req) {
  const auto model = sparc::stdf::load_file(req.weights_path);
  try {
    sparc::harness::validate_request(req, model.config);
  } catch (const sparc::ValueError& e) {
    throw UsageError(e.what());
  }
}

std::string csv_path_for(const std::string& json_path) {
  std::filesystem::path p(json_path);
  p.replace_extension(".csv");
  return p.string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoding-time attention recalibration toolkit"};
  app.require_subcommand(1);

  // gen-model
  auto* gen = app.add_subcommand("gen-model", "write a seeded STDF-v1 weights file");
  std::string gen_out;
  std::uint64_t gen_seed = sparc::harness::kDeskSeed;
  double gen_scale = sparc::harness::kDeskScale;
  sparc::ModelConfig gen_cfg = sparc::harness::desk_config();
  gen->add_option("--weights,--out", gen_out, "output path")->required();
  gen->add_option("--seed", gen_seed);
  gen->add_option("--scale", gen_scale, "weights are uniform in [-scale, scale]");
  gen->add_option("--layers", gen_cfg.num_layers);
  gen->add_option("--heads", gen_cfg.num_heads);
  gen->add_option("--head-dim", gen_cfg.head_dim);
  gen->add_option("--mlp-hidden", gen_cfg.mlp_hidden);
  gen->add_option("--vocab", gen_cfg.vocab_size);
  gen->add_option("--max-seq-len", gen_cfg.max_seq_len);

  // decode
  auto* dec = app.add_subcommand("decode", "generate with an optional intervention and record a trace");
  RequestFlags dec_flags;
  dec_flags.attach(dec, true);
  std::string trace_out, tokens_out, manifest_out, hidden_out, replay;
  dec->add_option("--trace-out", trace_out, "JSONL attention trace");
  dec->add_option("--tokens-out", tokens_out, "JSON token id list");
  dec->add_option("--manifest-out", manifest_out, "run manifest (default: <tokens-out>.manifest.json)");
  dec->add_option("--hidden-out", hidden_out, "image-position hidden states at the selection layer");
  dec->add_option("--replay", replay, "rerun the request recorded in a manifest");
  // --replay supplies --weights itself.
  dec->get_option("--weights")->required(false);

  // analyze
  auto* ana = app.add_subcommand("analyze", "attention diagnostics over a recorded trace");
  std::string ana_trace, ana_masks, ana_scores, ana_hidden, ana_report, ana_csv;
  std::optional<std::size_t> ana_layer;
  std::size_t ana_first_t = sparc::harness::kDiversityWindow, ana_high = 2;
  double ana_sink_k = 10.0;
  ana->add_option("--trace", ana_trace, "JSONL trace from decode")->required();
  ana->add_option("--select-layer,--layer", ana_layer, "traced layer to analyze");
  ana->add_option("--first-t", ana_first_t, "steps entering the diversity matrix");
  ana->add_option("--masks", ana_masks, "region mask JSON");
  ana->add_option("--pair-scores", ana_scores, "upper-triangular sentence similarity JSON");
  ana->add_option("--hidden", ana_hidden, "hidden-state JSON from decode --hidden-out");
  ana->add_option("--sink-k", ana_sink_k, "sink threshold multiplier on the median peak");
  ana->add_option("--high-threshold", ana_high, "selection count marking a token as frequently selected");
  ana->add_option("--report-out", ana_report, "JSON report (a .csv twin is written alongside)")->required();
  ana->add_option("--csv-out", ana_csv, "override CSV path");

  // sweep
  auto* swp = app.add_subcommand("sweep", "sparc runs over a hyperparameter grid");
  RequestFlags swp_flags;
  swp_flags.attach(swp, false);
  std::string grid, swp_report;
  swp->add_option("--grid", grid, "JSON file/string or 'alpha=1.05,1.1;tau=1.5'")->required();
  swp->add_option("--report-out", swp_report, "CSV table (stdout when absent)");

  // bench
  auto* bch = app.add_subcommand("bench", "ms/token per intervention mode");
  RequestFlags bch_flags;
  bch_flags.attach(bch, false);
  std::size_t reps = 5;
  std::string bch_report;
  bch->add_option("--reps", reps, "timed repetitions per mode (>= 3)");
  bch->add_option("--report-out", bch_report, "JSON report (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen) {
      sparc::harness::gen_model(gen_out, gen_seed, gen_cfg, gen_scale);
      std::cout << "wrote " << gen_out << " checksum " << sparc::harness::checksum_hex(sparc::harness::read_file(gen_out))
                << "\n";
    } else if (*dec) {
      sparc::harness::DecodeRequest req;
      if (!replay.empty()) {
        nlohmann::json m;
        try {
          m = nlohmann::json::parse(sparc::harness::read_file(replay));
          req = sparc::harness::request_from_json(m.at("request"));
        } catch (const nlohmann::json::exception& e) {
          throw sparc::FormatError(std::string("manifest: ") + e.what());
        }
      } else {
        if (dec_flags.weights.empty()) throw UsageError("decode: --weights or --replay is required");
        req = dec_flags.build();
      }
      check_request(req);
      req.trace_out = trace_out;
      req.tokens_out = tokens_out;
      req.hidden_out = hidden_out;
      req.manifest_out = !manifest_out.empty() ? manifest_out
                         : !tokens_out.empty() ? tokens_out + ".manifest.json"
                                               : std::string();
      const auto out = sparc::harness::run_decode(req);
      if (tokens_out.empty()) std::cout << out.tokens_json;
    } else if (*ana) {
      sparc::harness::AnalyzeInputs in;
      std::istringstream ts(sparc::harness::read_file(ana_trace));
      in.trace = sparc::read_jsonl(ts);
      in.layer = ana_layer;
      in.first_t = ana_first_t;
      in.sink_k = ana_sink_k;
      in.high_threshold = ana_high;
      if (!ana_masks.empty()) in.masks = sparc::harness::parse_masks(sparc::harness::read_file(ana_masks));
      if (!ana_scores.empty()) in.pair_scores = sparc::harness::parse_pair_scores(sparc::harness::read_file(ana_scores));
      if (!ana_hidden.empty()) in.hidden = sparc::harness::parse_hidden_states(sparc::harness::read_file(ana_hidden));
      const auto rep = sparc::harness::analyze(in);
      sparc::harness::write_file(ana_report, rep.json.dump(2) + "\n");
      sparc::harness::write_file(ana_csv.empty() ? csv_path_for(ana_report) : ana_csv, rep.csv);
    } else if (*swp) {
      const auto base = swp_flags.build();
      check_request(base);
      const auto model = sparc::stdf::load_file(base.weights_path);
      const std::string grid_text =
          std::filesystem::is_regular_file(grid) ? sparc::harness::read_file(grid) : grid;
      sparc::harness::SweepGrid g;
      try {
        g = sparc::harness::parse_grid(grid_text, base, model.config.num_layers);
      } catch (const sparc::ValueError& e) {
        throw UsageError(e.what());
      }
      const auto csv = sparc::harness::sweep_to_csv(sparc::harness::run_sweep(g, base));
      if (swp_report.empty()) std::cout << csv;
      else sparc::harness::write_file(swp_report, csv);
    } else if (*bch) {
      if (reps < 3) throw UsageError("bench: --reps must be >= 3");
      const auto base = bch_flags.build();
      check_request(base);
      const auto model = sparc::stdf::load_file(base.weights_path);
      const auto rows = sparc::harness::run_bench(model, base, reps);
      nlohmann::ordered_json j;
      j["weights_checksum"] = sparc::harness::checksum_hex(sparc::harness::read_file(base.weights_path));
      j["reps"] = reps;
      j["max_new_tokens"] = base.max_new_tokens;
      j["results"] = sparc::harness::bench_to_json(rows);
      if (bch_report.empty()) std::cout << j.dump(2) << "\n";
      else sparc::harness::write_file(bch_report, j.dump(2) + "\n");
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const sparc::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
