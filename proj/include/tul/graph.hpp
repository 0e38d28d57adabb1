//
// Copyright 2026 The TUL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Essential graphs over conv channels, their balanced sum and the prune set.

#ifndef TUL_GRAPH_HPP_
#define TUL_GRAPH_HPP_

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tul/binary_io.hpp"
#include "tul/error.hpp"
#include "tul/explain.hpp"
#include "tul/format.hpp"

namespace tul {

enum class TargetKind { kUnlearning, kRemaining };

inline const char* TargetKindName(TargetKind kind) {
  return kind == TargetKind::kUnlearning ? "unlearning" : "remaining";
}

inline int NodeValue(bool is_important, TargetKind kind, std::size_t num_targets) {
  if (num_targets < 2) {
    Fail(ErrorKind::kInvalidArgument, "num_targets", "need at least 2 targets");
  }
  if (!is_important) return 0;
  return kind == TargetKind::kUnlearning ? static_cast<int>(num_targets) : -1;
}

// Edge from channel `from` of layers[layer_pos] to channel `to` of the next
// listed layer. layer_pos indexes the graph's layer list.
struct GraphEdge {
  std::size_t layer_pos = 0;
  std::size_t from = 0;
  std::size_t to = 0;
  auto operator<=>(const GraphEdge&) const = default;
};

// Shared shape of per-target and balanced graphs.
struct GraphBody {
  std::size_t sigma = 0;
  std::size_t num_targets = 0;
  double delta = 0.0;
  std::vector<std::size_t> layers;       // conv layer indices, ascending
  std::vector<std::vector<int>> values;  // [layer_pos][channel]
  std::set<GraphEdge> edges;

  bool operator==(const GraphBody&) const = default;
};

struct EssentialGraph : GraphBody {
  std::size_t target = 0;
  TargetKind kind = TargetKind::kRemaining;
  ImportanceRecord record;

  bool operator==(const EssentialGraph&) const = default;
};

struct BalancedGraph : GraphBody {
  std::vector<std::size_t> unlearning_targets;
  std::vector<std::size_t> remaining_targets;
  std::vector<ImportanceRecord> importance;  // one per target, ascending target

  bool operator==(const BalancedGraph&) const = default;
};

// Conv layer -> pruned channels, both ascending.
using PruneSet = std::map<std::size_t, std::vector<std::size_t>>;

inline std::size_t PruneCount(const PruneSet& set) {
  std::size_t n = 0;
  for (const auto& [layer, channels] : set) n += channels.size();
  return n;
}

inline EssentialGraph BuildGraph(const ImportanceRecord& record, TargetKind kind,
                                 std::size_t num_targets, std::size_t sigma) {
  const std::vector<std::size_t> expected = LastLayers(record.num_conv_layers, sigma);
  if (record.layer_indices() != expected) {
    Fail(ErrorKind::kShapeMismatch, "sigma",
         "record does not cover exactly the last " + std::to_string(sigma) +
             " conv layers");
  }
  EssentialGraph g;
  g.sigma = sigma;
  g.num_targets = num_targets;
  g.delta = record.delta;
  g.layers = expected;
  g.target = record.target;
  g.kind = kind;
  g.record = record;
  for (const auto& li : record.layers) {
    if (li.mask.size() != li.alpha.size()) {
      Fail(ErrorKind::kShapeMismatch, "mask",
           "layer " + std::to_string(li.layer) + " has no selection mask");
    }
    std::vector<int> v(li.mask.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = NodeValue(li.mask[k], kind, num_targets);
    g.values.push_back(std::move(v));
  }
  for (std::size_t p = 0; p + 1 < record.layers.size(); ++p) {
    const auto& a = record.layers[p].mask;
    const auto& b = record.layers[p + 1].mask;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i]) continue;
      for (std::size_t j = 0; j < b.size(); ++j)
        if (b[j]) g.edges.insert({p, i, j});
    }
  }
  return g;
}

// Checks that `unlearning` is a nonempty proper subset of 0..num_targets-1
// and returns the complement.
inline std::vector<std::size_t> RemainingTargets(
    const std::vector<std::size_t>& unlearning, std::size_t num_targets) {
  std::vector<bool> seen(num_targets, false);
  for (std::size_t t : unlearning) {
    if (t >= num_targets) {
      Fail(ErrorKind::kValidation, "unlearn_targets",
           "target " + std::to_string(t) + " out of range");
    }
    if (seen[t]) {
      Fail(ErrorKind::kValidation, "unlearn_targets",
           "duplicate target " + std::to_string(t));
    }
    seen[t] = true;
  }
  if (unlearning.empty() || unlearning.size() >= num_targets) {
    Fail(ErrorKind::kValidation, "unlearn_targets",
         "must be a nonempty proper subset of the targets");
  }
  std::vector<std::size_t> rest;
  for (std::size_t t = 0; t < num_targets; ++t)
    if (!seen[t]) rest.push_back(t);
  return rest;
}

inline BalancedGraph Balance(const std::vector<EssentialGraph>& graphs,
                             const std::vector<std::size_t>& unlearning,
                             const std::vector<std::size_t>& remaining) {
  if (graphs.empty()) Fail(ErrorKind::kInvalidArgument, "graphs", "no graphs");
  const EssentialGraph& first = graphs.front();
  const std::size_t Y = first.num_targets;
  std::vector<std::size_t> u = unlearning, r = remaining;
  std::sort(u.begin(), u.end());
  std::sort(r.begin(), r.end());
  std::vector<std::size_t> all;
  std::merge(u.begin(), u.end(), r.begin(), r.end(), std::back_inserter(all));
  if (RemainingTargets(u, Y) != r) {
    Fail(ErrorKind::kValidation, "remaining_targets",
         "D_u and D_r must partition the targets");
  }
  if (graphs.size() != Y) {
    Fail(ErrorKind::kShapeMismatch, "graphs", "need exactly one graph per target");
  }

  // Fixed target order makes the sum independent of input order.
  std::vector<const EssentialGraph*> by_target(Y, nullptr);
  for (const EssentialGraph& g : graphs) {
    if (g.sigma != first.sigma || g.layers != first.layers ||
        g.num_targets != Y || g.values.size() != first.values.size()) {
      Fail(ErrorKind::kShapeMismatch, "graphs", "graphs differ in sigma or layers");
    }
    for (std::size_t p = 0; p < g.values.size(); ++p) {
      if (g.values[p].size() != first.values[p].size()) {
        Fail(ErrorKind::kShapeMismatch, "graphs",
             "channel count differs at layer " + std::to_string(g.layers[p]));
      }
    }
    if (g.target >= Y || by_target[g.target]) {
      Fail(ErrorKind::kShapeMismatch, "graphs", "duplicate or invalid graph target");
    }
    const bool in_u = std::binary_search(u.begin(), u.end(), g.target);
    if ((g.kind == TargetKind::kUnlearning) != in_u) {
      Fail(ErrorKind::kValidation, "graphs",
           "graph kind disagrees with target sets for target " +
               std::to_string(g.target));
    }
    by_target[g.target] = &g;
  }

  BalancedGraph b;
  b.sigma = first.sigma;
  b.num_targets = Y;
  b.delta = first.delta;
  b.layers = first.layers;
  b.unlearning_targets = u;
  b.remaining_targets = r;
  b.values.resize(first.values.size());
  for (std::size_t p = 0; p < first.values.size(); ++p)
    b.values[p].assign(first.values[p].size(), 0);
  for (const EssentialGraph* g : by_target) {
    for (std::size_t p = 0; p < g->values.size(); ++p)
      for (std::size_t k = 0; k < g->values[p].size(); ++k) b.values[p][k] += g->values[p][k];
    b.edges.insert(g->edges.begin(), g->edges.end());
    b.importance.push_back(g->record);
  }
  return b;
}

inline PruneSet ComputePruneSet(const BalancedGraph& g) {
  PruneSet out;
  const int threshold = static_cast<int>(g.num_targets);
  for (std::size_t p = 0; p < g.layers.size(); ++p) {
    std::vector<std::size_t> channels;
    for (std::size_t k = 0; k < g.values[p].size(); ++k)
      if (g.values[p][k] >= threshold) channels.push_back(k);
    if (!channels.empty()) out[g.layers[p]] = std::move(channels);
  }
  return out;
}

// Every channel marked important by any listed target, optionally restricted
// to one conv layer. This is the prune set without balancing.
inline PruneSet ImportantUnion(const std::vector<ImportanceRecord>& records,
                               const std::vector<std::size_t>& targets,
                               std::optional<std::size_t> only_layer = std::nullopt) {
  std::map<std::size_t, std::set<std::size_t>> acc;
  for (const ImportanceRecord& rec : records) {
    if (std::find(targets.begin(), targets.end(), rec.target) == targets.end()) continue;
    for (const auto& li : rec.layers) {
      if (only_layer && li.layer != *only_layer) continue;
      for (std::size_t k = 0; k < li.mask.size(); ++k)
        if (li.mask[k]) acc[li.layer].insert(k);
    }
  }
  PruneSet out;
  for (auto& [layer, s] : acc) out[layer] = {s.begin(), s.end()};
  return out;
}

// ---- Export ----------------------------------------------------------------

inline std::string GraphToDot(const GraphBody& g, const std::string& name) {
  std::string out = "digraph " + name + " {\n  rankdir=LR;\n  node [shape=box];\n";
  for (std::size_t p = 0; p < g.layers.size(); ++p) {
    const std::string l = std::to_string(g.layers[p]);
    out += "  subgraph cluster_l" + l + " {\n    label=\"layer " + l + "\";\n";
    for (std::size_t k = 0; k < g.values[p].size(); ++k) {
      if (g.values[p][k] == 0) continue;
      const std::string id = "l" + l + "c" + std::to_string(k);
      out += "    " + id + " [label=\"" + id + "=" + std::to_string(g.values[p][k]) +
             "\"];\n";
    }
    out += "  }\n";
  }
  for (const GraphEdge& e : g.edges) {
    out += "  l" + std::to_string(g.layers[e.layer_pos]) + "c" + std::to_string(e.from) +
           " -> l" + std::to_string(g.layers[e.layer_pos + 1]) + "c" +
           std::to_string(e.to) + ";\n";
  }
  return out + "}\n";
}

inline constexpr int kGraphJsonVersion = 1;

namespace detail {

inline Json BodyToJson(const GraphBody& g) {
  Json layers = Json::array();
  for (std::size_t p = 0; p < g.layers.size(); ++p)
    layers.push_back({{"layer", g.layers[p]}, {"values", g.values[p]}});
  Json edges = Json::array();
  for (const GraphEdge& e : g.edges)
    edges.push_back({g.layers[e.layer_pos], e.from, e.to});
  return {{"tulg_version", kGraphJsonVersion},
          {"sigma", g.sigma},
          {"num_targets", g.num_targets},
          {"delta", g.delta},
          {"layers", layers},
          {"edges", edges}};
}

inline void BodyFromJson(const Json& j, GraphBody& g) {
  if (j.at("tulg_version").get<int>() != kGraphJsonVersion) {
    Fail(ErrorKind::kVersionMismatch, "tulg_version", "unsupported graph version");
  }
  g.sigma = j.at("sigma").get<std::size_t>();
  g.num_targets = j.at("num_targets").get<std::size_t>();
  g.delta = j.at("delta").get<double>();
  for (const Json& lj : j.at("layers")) {
    g.layers.push_back(lj.at("layer").get<std::size_t>());
    g.values.push_back(lj.at("values").get<std::vector<int>>());
  }
  for (const Json& ej : j.at("edges")) {
    const auto triple = ej.get<std::vector<std::size_t>>();
    if (triple.size() != 3) Fail(ErrorKind::kValidation, "edges", "edge needs 3 ints");
    const auto it = std::find(g.layers.begin(), g.layers.end(), triple[0]);
    if (it == g.layers.end() || it + 1 == g.layers.end()) {
      Fail(ErrorKind::kValidation, "edges", "edge layer not in graph");
    }
    g.edges.insert({static_cast<std::size_t>(it - g.layers.begin()), triple[1], triple[2]});
  }
}

template <typename Fn>
auto ParseGraphJson(const std::string& text, Fn fn) {
  try {
    return fn(Json::parse(text));
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kValidation, "graph", e.what());
  }
}

}  // namespace detail

inline Json GraphToJson(const EssentialGraph& g) {
  Json j = detail::BodyToJson(g);
  j["kind"] = "essential";
  j["target"] = g.target;
  j["target_kind"] = TargetKindName(g.kind);
  j["importance"] = Json::array({ImportanceToJson(g.record)});
  return j;
}

inline Json GraphToJson(const BalancedGraph& g) {
  Json j = detail::BodyToJson(g);
  j["kind"] = "balanced";
  j["unlearning_targets"] = g.unlearning_targets;
  j["remaining_targets"] = g.remaining_targets;
  Json imp = Json::array();
  for (const auto& rec : g.importance) imp.push_back(ImportanceToJson(rec));
  j["importance"] = imp;
  return j;
}

inline EssentialGraph EssentialGraphFromJson(const std::string& text) {
  return detail::ParseGraphJson(text, [](const Json& j) {
    if (j.at("kind") != "essential") {
      Fail(ErrorKind::kValidation, "kind", "not an essential graph");
    }
    EssentialGraph g;
    detail::BodyFromJson(j, g);
    g.target = j.at("target").get<std::size_t>();
    g.kind = j.at("target_kind") == "unlearning" ? TargetKind::kUnlearning
                                                 : TargetKind::kRemaining;
    g.record = ImportanceFromJson(j.at("importance").at(0));
    return g;
  });
}

inline BalancedGraph BalancedGraphFromJson(const std::string& text) {
  return detail::ParseGraphJson(text, [](const Json& j) {
    if (j.at("kind") != "balanced") {
      Fail(ErrorKind::kValidation, "kind", "not a balanced graph");
    }
    BalancedGraph g;
    detail::BodyFromJson(j, g);
    g.unlearning_targets = j.at("unlearning_targets").get<std::vector<std::size_t>>();
    g.remaining_targets = j.at("remaining_targets").get<std::vector<std::size_t>>();
    for (const Json& r : j.at("importance")) g.importance.push_back(ImportanceFromJson(r));
    return g;
  });
}

enum class GraphFormat { kDot, kJson };

template <typename G>
void ExportGraph(const G& g, GraphFormat format, const std::string& path) {
  if (format == GraphFormat::kDot) {
    WriteFileText(path, GraphToDot(g, "essential"));
  } else {
    WriteFileText(path, DumpJson(GraphToJson(g)));
  }
}

}  // namespace tul

#endif  // TUL_GRAPH_HPP_
