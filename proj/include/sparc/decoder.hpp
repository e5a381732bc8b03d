#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparc/attention.hpp"
#include "sparc/errors.hpp"
#include "sparc/intervention.hpp"
#include "sparc/kv_cache.hpp"
#include "sparc/model.hpp"
#include "sparc/tensor.hpp"
#include "sparc/trace.hpp"

namespace sparc {

enum class InterventionMode { baseline, naive, sparc, sparc_reference };

inline std::string_view to_string(InterventionMode m) {
  switch (m) {
    case InterventionMode::baseline: return "baseline";
    case InterventionMode::naive: return "naive";
    case InterventionMode::sparc: return "sparc";
    case InterventionMode::sparc_reference: return "sparc_reference";
  }
  return "?";
}

inline InterventionMode parse_mode(std::string_view s) {
  if (s == "baseline") return InterventionMode::baseline;
  if (s == "naive") return InterventionMode::naive;
  if (s == "sparc") return InterventionMode::sparc;
  if (s == "sparc_reference") return InterventionMode::sparc_reference;
  throw ValueError("unknown mode '" + std::string(s) + "'");
}

inline bool uses_selection(InterventionMode m) {
  return m == InterventionMode::sparc || m == InterventionMode::sparc_reference;
}

struct GenerationRequest {
  Matrix image_embeddings;  // n_image x model_dim
  std::vector<std::size_t> instruction_ids;
  std::size_t max_new_tokens = 32;
  std::optional<std::size_t> eos_token_id;
  InterventionMode mode = InterventionMode::baseline;
  NaiveConfig naive;
  SparcConfig sparc;
  std::vector<std::size_t> trace_layers;  // empty: every layer
  bool capture_heads = false;             // keep per-head weights and raw logits in StepTrace
};

struct StepTrace {
  std::size_t step = 0;
  std::size_t token_id = 0;
  std::vector<double> logits;
  std::vector<std::vector<double>> layer_rows;  // [layer][position], head-averaged, pre-multiplier
  SelectionSet selected;
  // Only filled with capture_heads: [layer][head][position].
  std::vector<std::vector<std::vector<double>>> head_weights;
  std::vector<std::vector<std::vector<double>>> head_logits;  // q·k/sqrt(d) before any adjustment
};

struct PrefillResult {
  // hidden[l] holds the residual stream after layer l for every prompt position.
  std::vector<Matrix> hidden;
  StepTrace last;  // output of the final prompt position: generated step 1
};

struct SessionStats {
  std::size_t forward_passes = 0;
  std::size_t score_evaluations = 0;
  std::size_t selections = 0;
};

// Greedy choice; ties go to the lowest id.
inline std::size_t greedy_argmax(std::span<const double> logits) {
  if (logits.empty()) throw EmptyContextError("argmax over empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

inline void add_sinusoidal_position(std::span<double> x, std::size_t pos) {
  const double d = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); i += 2) {
    const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / d);
    x[i] += std::sin(angle);
    if (i + 1 < x.size()) x[i + 1] += std::cos(angle);
  }
}

inline void rms_norm(std::span<const double> x, std::span<const double> gain, std::span<double> out) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// One generation: owns the cache, SPARC state and step bookkeeping. Weights are
// borrowed and must outlive the session.
class DecodeSession {
 public:
  DecodeSession(const Model& model, GenerationRequest req)
      : model_(model),
        req_(std::move(req)),
        layout_{req_.image_embeddings.rows(), req_.instruction_ids.size(), 0},
        cache_(model.config, layout_.n_image),
        state_(layout_.n_image) {
    const auto& cfg = model_.config;
    if (layout_.n_image > 0 && req_.image_embeddings.cols() != cfg.model_dim) {
      throw ShapeError("image embeddings must have model_dim columns");
    }
    for (auto id : req_.instruction_ids)
      if (id >= cfg.vocab_size) throw ValueError("instruction id " + std::to_string(id) + " out of vocabulary");
    if (uses_selection(req_.mode)) req_.sparc.validate(cfg.num_layers);
    if (req_.mode == InterventionMode::naive && !(req_.naive.alpha >= 0.0)) {
      throw ValueError("naive: alpha must be >= 0");
    }
    for (auto l : req_.trace_layers)
      if (l >= cfg.num_layers) throw ValueError("trace layer " + std::to_string(l) + " out of range");
    const std::size_t D = cfg.model_dim;
    x_.resize(D);
    h_.resize(D);
    q_.resize(D);
    k_.resize(D);
    v_.resize(D);
    o_.resize(D);
    proj_.resize(D);
    mlp_.resize(cfg.mlp_hidden);
  }

  const SequenceLayout& layout() const { return layout_; }
  const KVCache& cache() const { return cache_; }
  const SparcState& sparc_state() const { return state_; }
  const SessionStats& stats() const { return stats_; }
  const GenerationRequest& request() const { return req_; }
  std::size_t steps_done() const { return layout_.n_generated; }
  bool prefilled() const { return prefill_.has_value(); }

  // Consumes every prompt position without intervention. The final prompt
  // position's output becomes generated step 1.
  const PrefillResult& prefill() {
    if (prefill_) throw StateError("prefill: already done");
    const auto& cfg = model_.config;
    const std::size_t P = layout_.prompt_length();
    if (P == 0) throw ValueError("prefill: empty prompt");
    if (P > cfg.max_seq_len) {
      throw CapacityError("prefill: prompt of " + std::to_string(P) + " positions exceeds max_seq_len " +
                          std::to_string(cfg.max_seq_len));
    }
    PrefillResult res;
    res.hidden.assign(cfg.num_layers, Matrix(P, cfg.model_dim));
    for (std::size_t p = 0; p < P; ++p) {
      std::vector<double> input(cfg.model_dim);
      if (p < layout_.n_image) {
        const auto r = req_.image_embeddings.row(p);
        std::copy(r.begin(), r.end(), input.begin());
      } else {
        const auto r = model_.weights.token_embedding.row(req_.instruction_ids[p - layout_.n_image]);
        std::copy(r.begin(), r.end(), input.begin());
      }
      const bool last = p + 1 == P;
      StepTrace t = forward(input, p, /*intervene=*/false, last, &res.hidden);
      if (last) res.last = std::move(t);
    }
    prefill_ = std::move(res);
    return *prefill_;
  }

  const PrefillResult& prefill_result() const {
    if (!prefill_) throw StateError("prefill not run");
    return *prefill_;
  }

  // Produces generated token i = steps_done() + 1.
  //   1. forward pass over the current cache (naive adjusts image logits;
  //      sparc_reference multiplies image weights by alpha^c from earlier steps)
  //   2. head-averaged rows are recorded
  //   3. sparc modes score, select and count at select_layer
  //   4. sparc rescales selected cached values, effective next step
  StepTrace decode_step() {
    if (!prefill_) prefill();
    const std::size_t i = layout_.n_generated + 1;
    StepTrace t;
    std::size_t pos = 0;
    if (i == 1) {
      t = prefill_->last;
    } else {
      if (cache_.full()) throw CapacityError("decode_step: cache at capacity");
      pos = cache_.length();
      const auto r = model_.weights.token_embedding.row(last_token_);
      t = forward(std::vector<double>(r.begin(), r.end()), pos, true, true, nullptr);
    }
    t.step = i;

    if (uses_selection(req_.mode)) {
      const auto& cfg = req_.sparc;
      const auto a = observe_attention(t.layer_rows.at(cfg.select_layer), layout_.n_image);
      if (!state_.initialized) {
        update_ema(state_, a, cfg.beta, cfg.epsilon);
        bump_counts(state_, {});
      } else {
        const auto r = relative_scores(state_, a, cfg.epsilon);
        stats_.score_evaluations += r.size();
        t.selected = select_tokens(r, cfg.tau);
        update_ema(state_, a, cfg.beta, cfg.epsilon);
        bump_counts(state_, t.selected);
        stats_.selections += t.selected.size();
        if (req_.mode == InterventionMode::sparc) scale_cached_values(cache_, t.selected, cfg.alpha);
        if (cfg.apply_same_step && !t.selected.empty()) {
          cache_.truncate(pos);
          const auto r2 = model_.weights.token_embedding.row(last_token_);
          StepTrace again = forward(std::vector<double>(r2.begin(), r2.end()), pos, true, true, nullptr);
          t.logits = std::move(again.logits);
        }
      }
    }

    t.token_id = greedy_argmax(t.logits);
    last_token_ = t.token_id;
    ++layout_.n_generated;
    return t;
  }

 private:
  StepTrace forward(std::span<const double> input, std::size_t pos, bool intervene, bool want_output,
                    std::vector<Matrix>* hidden) {
    const auto& cfg = model_.config;
    const auto& W = model_.weights;
    const std::size_t D = cfg.model_dim, H = cfg.num_heads, d = cfg.head_dim, N = pos + 1;
    ++stats_.forward_passes;

    std::copy(input.begin(), input.end(), x_.begin());
    add_sinusoidal_position(x_, pos);

    std::vector<double> multipliers;
    if (intervene && req_.mode == InterventionMode::sparc_reference) {
      multipliers = reference_multipliers(state_, N, req_.sparc.alpha);
    }
    const bool naive = intervene && req_.mode == InterventionMode::naive;

    StepTrace t;
    if (want_output) {
      t.layer_rows.assign(cfg.num_layers, std::vector<double>(N, 0.0));
      if (req_.capture_heads) {
        t.head_weights.assign(cfg.num_layers, std::vector<std::vector<double>>(H));
        t.head_logits.assign(cfg.num_layers, std::vector<std::vector<double>>(H));
      }
    }
    std::vector<double> weights(N), adjust;

    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const auto& lw = W.layers[l];
      rms_norm(x_, lw.attn_norm, h_);
      vec_mat(h_, lw.wq, q_);
      vec_mat(h_, lw.wk, k_);
      vec_mat(h_, lw.wv, v_);
      cache_.append(l, k_, v_);

      for (std::size_t hd = 0; hd < H; ++hd) {
        const std::span<const double> q(q_.data() + hd * d, d);
        const auto keys = cache_.keys(l, hd);
        adjust.clear();
        if (naive && req_.naive.applies_to(l)) adjust = naive_logit_adjust(q, keys, N);
        attend(q, keys, cache_.values(l, hd), adjust, multipliers, weights, std::span<double>(o_.data() + hd * d, d));
        if (want_output) {
          auto& row = t.layer_rows[l];
          for (std::size_t j = 0; j < N; ++j) row[j] += weights[j] / static_cast<double>(H);
          if (req_.capture_heads) {
            t.head_weights[l][hd] = weights;
            auto& raw = t.head_logits[l][hd];
            raw.resize(N);
            const double inv = 1.0 / std::sqrt(static_cast<double>(d));
            for (std::size_t j = 0; j < N; ++j) raw[j] = dot(q, keys[j]) * inv;
          }
        }
      }
      vec_mat(o_, lw.wo, proj_);
      for (std::size_t c = 0; c < D; ++c) x_[c] += proj_[c];

      rms_norm(x_, lw.mlp_norm, h_);
      vec_mat(h_, lw.mlp_in, mlp_);
      for (auto& u : mlp_) u = gelu(u);
      vec_mat(mlp_, lw.mlp_out, proj_);
      for (std::size_t c = 0; c < D; ++c) x_[c] += proj_[c];

      if (hidden) std::copy(x_.begin(), x_.end(), (*hidden)[l].row(pos).begin());
    }

    if (want_output) {
      rms_norm(x_, W.final_norm, h_);
      t.logits.resize(cfg.vocab_size);
      vec_mat(h_, W.unembedding, t.logits);
    }
    return t;
  }

  // Additive terms realizing A <- A + alpha*|A| on image positions.
  std::vector<double> naive_logit_adjust(std::span<const double> q, const VectorsView& keys, std::size_t n) const {
    std::vector<double> adj(n, 0.0);
    const std::size_t m = std::min(layout_.n_image, n);
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.size()));
    for (std::size_t j = 0; j < m; ++j) adj[j] = dot(q, keys[j]) * inv;
    std::vector<double> adjusted(adj.begin(), adj.begin() + static_cast<std::ptrdiff_t>(m));
    naive_adjust(adjusted, req_.naive.alpha, layout_);
    for (std::size_t j = 0; j < m; ++j) adj[j] = adjusted[j] - adj[j];
    return adj;
  }

  const Model& model_;
  GenerationRequest req_;
  SequenceLayout layout_;
  KVCache cache_;
  SparcState state_;
  SessionStats stats_;
  std::optional<PrefillResult> prefill_;
  std::size_t last_token_ = 0;
  std::vector<double> x_, h_, q_, k_, v_, o_, proj_, mlp_;
};

struct GenerationResult {
  std::vector<std::size_t> tokens;
  AttentionTrace trace;
  std::vector<std::vector<std::size_t>> selections;  // S_i per step
  std::vector<std::size_t> final_counts;
};

inline TraceStep to_trace_step(const StepTrace& t, const SequenceLayout& layout,
                               std::span<const std::size_t> layers) {
  TraceStep s;
  s.step = t.step;
  s.token_id = t.token_id;
  s.n_image = layout.n_image;
  s.n_inst = layout.n_inst;
  s.selected = t.selected.indices;
  if (layers.empty()) {
    for (std::size_t l = 0; l < t.layer_rows.size(); ++l) s.rows[l] = t.layer_rows[l];
  } else {
    for (auto l : layers) s.rows[l] = t.layer_rows.at(l);
  }
  return s;
}

// Runs prefill and greedy decoding until max_new_tokens or EOS (the EOS
// token itself is emitted).
inline GenerationResult generate(const Model& model, GenerationRequest req) {
  GenerationResult out;
  const auto max_new = req.max_new_tokens;
  const auto eos = req.eos_token_id;
  if (max_new == 0) return out;
  DecodeSession session(model, std::move(req));
  session.prefill();
  for (std::size_t i = 0; i < max_new; ++i) {
    StepTrace t = session.decode_step();
    out.tokens.push_back(t.token_id);
    out.selections.push_back(t.selected.indices);
    out.trace.steps.push_back(to_trace_step(t, session.layout(), session.request().trace_layers));
    if (eos && t.token_id == *eos) break;
  }
  out.final_counts = session.sparc_state().counts;
  return out;
}

}  // namespace sparc
