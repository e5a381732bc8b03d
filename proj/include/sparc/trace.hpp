#pragma once

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparc/errors.hpp"
#include "sparc/intervention.hpp"

namespace sparc {

// One generated token's worth of recorded attention.
struct TraceStep {
  std::size_t step = 0;  // 1-based generation index
  std::size_t token_id = 0;
  std::size_t n_image = 0;
  std::size_t n_inst = 0;
  std::vector<std::size_t> selected;
  std::map<std::size_t, std::vector<double>> rows;  // layer -> head-averaged row

  bool operator==(const TraceStep&) const = default;
};

struct AttentionTrace {
  std::vector<TraceStep> steps;

  bool empty() const { return steps.empty(); }
  std::size_t size() const { return steps.size(); }

  std::vector<std::size_t> layers() const {
    std::vector<std::size_t> out;
    for (const auto& s : steps)
      for (const auto& [l, _] : s.rows)
        if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    std::sort(out.begin(), out.end());
    return out;
  }

  // Row of every step at `layer`, in step order.
  std::vector<std::vector<double>> rows_at(std::size_t layer) const {
    std::vector<std::vector<double>> out;
    out.reserve(steps.size());
    for (const auto& s : steps) {
      auto it = s.rows.find(layer);
      if (it == s.rows.end()) throw RangeError("trace: step " + std::to_string(s.step) + " has no layer " +
                                               std::to_string(layer));
      out.push_back(it->second);
    }
    return out;
  }

  bool operator==(const AttentionTrace&) const = default;
};

// JSONL, one record per (step, layer):
// {"step", "token_id", "layer", "attn": [...], "selected": [...], "n_image", "n_inst"}
inline void write_jsonl(std::ostream& os, const AttentionTrace& trace) {
  for (const auto& s : trace.steps) {
    for (const auto& [layer, row] : s.rows) {
      nlohmann::ordered_json j;
      j["step"] = s.step;
      j["token_id"] = s.token_id;
      j["layer"] = layer;
      j["attn"] = row;
      j["selected"] = s.selected;
      j["n_image"] = s.n_image;
      j["n_inst"] = s.n_inst;
      os << j.dump() << '\n';
    }
  }
}

inline AttentionTrace read_jsonl(std::istream& is) {
  AttentionTrace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto step = j.at("step").get<std::size_t>();
      if (trace.steps.empty() || trace.steps.back().step != step) {
        TraceStep s;
        s.step = step;
        s.token_id = j.at("token_id").get<std::size_t>();
        s.n_image = j.at("n_image").get<std::size_t>();
        s.n_inst = j.at("n_inst").get<std::size_t>();
        s.selected = j.at("selected").get<std::vector<std::size_t>>();
        trace.steps.push_back(std::move(s));
      }
      trace.steps.back().rows[j.at("layer").get<std::size_t>()] = j.at("attn").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trace;
}

}  // namespace sparc
