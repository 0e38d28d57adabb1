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

#ifndef TUL_UNLEARN_HPP_
#define TUL_UNLEARN_HPP_

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "tul/dataset.hpp"
#include "tul/error.hpp"
#include "tul/explain.hpp"
#include "tul/format.hpp"
#include "tul/graph.hpp"
#include "tul/network.hpp"
#include "tul/rng.hpp"

namespace tul {

struct UnlearnPlan {
  PruneSet prune;
  std::size_t sigma = 0;
  double delta = 0.0;
  std::vector<std::size_t> unlearning_targets;
  std::vector<std::size_t> remaining_targets;
  std::size_t recover_epochs = 0;
};

// Zeroes the filter and bias of every pruned channel. Indices are checked
// before anything is written.
inline Network ApplyPrune(Network net, const PruneSet& prune) {
  for (const auto& [layer, channels] : prune) {
    if (layer >= net.num_conv_layers()) {
      Fail(ErrorKind::kInvalidArgument, "prune",
           "conv layer " + std::to_string(layer) + " out of range");
    }
    for (std::size_t k : channels) {
      if (k >= net.conv_channels(layer)) {
        Fail(ErrorKind::kInvalidArgument, "prune",
             "channel " + std::to_string(k) + " out of range at layer " +
                 std::to_string(layer));
      }
    }
  }
  for (const auto& [layer, channels] : prune) {
    Layer& conv = net.mutable_conv(layer);
    const std::size_t per_channel = conv.weight.size() / conv.bias.size();
    for (std::size_t k : channels) {
      std::fill_n(conv.weight.raw() + k * per_channel, per_channel, 0.0f);
      conv.bias[k] = 0.0f;
    }
  }
  return net;
}

inline Network ApplyPrune(Network net, const UnlearnPlan& plan) {
  return ApplyPrune(std::move(net), plan.prune);
}

struct RecoverConfig {
  std::size_t epochs = 0;
  float lr = 0.05f;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

// Fine-tunes with the unlearned heads masked out of the loss and the pruned
// channels held at zero.
inline Network Recover(Network net, const Dataset& data,
                       const std::vector<std::size_t>& unlearning_targets,
                       const PruneSet& frozen, const RecoverConfig& config,
                       CostCounters& counters) {
  if (config.epochs == 0) return net;
  TrainOptions options;
  options.active_heads.assign(net.num_targets(), true);
  for (std::size_t t : unlearning_targets) options.active_heads.at(t) = false;
  options.frozen_channels.resize(net.num_conv_layers());
  for (const auto& [layer, channels] : frozen) options.frozen_channels.at(layer) = channels;
  TrainConfig tc{config.epochs, config.batch_size, config.lr, config.seed};
  return Train(std::move(net), data, tc, counters, options);
}

struct CostReport {
  std::uint64_t forward_passes = 0;
  std::uint64_t backward_passes = 0;
  std::size_t num_targets = 0;
  std::size_t n_ref = 0;
  std::size_t importance_floats = 0;  // alphas stored across all records
  std::size_t importance_mask_bits = 0;
  std::size_t pruned_channels = 0;

  double paper_equivalent_units() const {
    return double(forward_passes) + 5.0 * double(backward_passes);
  }
  double paper_bound() const { return 6.0 * double(num_targets); }

  // Deterministic content only; wall-clock figures are reported elsewhere.
  KeyValueReport ToReport() const {
    KeyValueReport r;
    r.Add("forward_passes", forward_passes);
    r.Add("backward_passes", backward_passes);
    r.Add("paper_equivalent_units", paper_equivalent_units());
    r.Add("paper_bound", paper_bound());
    r.Add("within_bound", paper_equivalent_units() <= paper_bound() ? "true" : "false");
    r.Add("num_targets", static_cast<std::uint64_t>(num_targets));
    r.Add("n_ref", static_cast<std::uint64_t>(n_ref));
    r.Add("importance_floats", static_cast<std::uint64_t>(importance_floats));
    r.Add("importance_mask_bits", static_cast<std::uint64_t>(importance_mask_bits));
    r.Add("pruned_channels", static_cast<std::uint64_t>(pruned_channels));
    return r;
  }
};

// Up to n_ref samples containing `target`, drawn by a seeded shuffle.
inline std::vector<std::size_t> PickReferences(const Dataset& data, std::size_t target,
                                               std::size_t n_ref, std::uint64_t seed) {
  std::vector<std::size_t> pool = data.WithTarget(target);
  if (pool.empty()) {
    Fail(ErrorKind::kValidation, "dataset",
         "no sample contains target " + std::to_string(target));
  }
  SplitMix64 rng = SplitMix64(seed).Fork(0x7265660000ULL + target);
  Shuffle(std::span<std::size_t>(pool), rng);
  pool.resize(std::min(pool.size(), n_ref));
  std::sort(pool.begin(), pool.end());
  return pool;
}

struct PipelineConfig {
  std::vector<std::size_t> unlearning_targets{0};
  std::size_t sigma = 5;
  double delta = 0.1;
  std::size_t n_ref = 8;
  bool abs_alpha = false;
  RecoverConfig recover;
  std::uint64_t seed = 1;
};

inline void ValidatePipeline(const Network& net, const PipelineConfig& config) {
  RemainingTargets(config.unlearning_targets, net.num_targets());
  LastLayers(net.num_conv_layers(), config.sigma);
  if (!(config.delta > 0.0 && config.delta <= 1.0)) {
    Fail(ErrorKind::kValidation, "delta", "delta must be in (0, 1]");
  }
  if (config.n_ref == 0) Fail(ErrorKind::kValidation, "n_ref", "n_ref must be >= 1");
}

struct GraphStage {
  std::vector<EssentialGraph> target_graphs;  // ascending target
  BalancedGraph graph;
  CostCounters counters;  // passes spent on importance
};

// Importance for every target on reference instances drawn from `data`,
// one essential graph per target, then their balanced sum.
inline GraphStage BuildGraphs(const Network& net, const Dataset& data,
                              const PipelineConfig& config) {
  ValidatePipeline(net, config);
  if (data.num_targets() != net.num_targets()) {
    Fail(ErrorKind::kValidation, "num_targets", "dataset and network disagree on |Y|");
  }
  const std::size_t Y = net.num_targets();
  const auto layers = LastLayers(net.num_conv_layers(), config.sigma);
  std::vector<std::size_t> unlearning = config.unlearning_targets;
  std::sort(unlearning.begin(), unlearning.end());
  GraphStage stage;
  for (std::size_t t = 0; t < Y; ++t) {
    const auto refs = PickReferences(data, t, config.n_ref, config.seed);
    ImportanceRecord rec = ComputeAlpha(net, data, refs, t, layers, stage.counters);
    SelectMasks(rec, config.delta, config.abs_alpha);
    const TargetKind kind = std::binary_search(unlearning.begin(), unlearning.end(), t)
                                ? TargetKind::kUnlearning
                                : TargetKind::kRemaining;
    stage.target_graphs.push_back(BuildGraph(rec, kind, Y, config.sigma));
  }
  stage.graph = Balance(stage.target_graphs, unlearning, RemainingTargets(unlearning, Y));
  return stage;
}

inline UnlearnPlan MakePlan(const BalancedGraph& graph, const PipelineConfig& config) {
  UnlearnPlan plan;
  plan.prune = ComputePruneSet(graph);
  plan.sigma = config.sigma;
  plan.delta = config.delta;
  plan.unlearning_targets = graph.unlearning_targets;
  plan.remaining_targets = graph.remaining_targets;
  plan.recover_epochs = config.recover.epochs;
  return plan;
}

inline CostReport MakeCostReport(const GraphStage& stage, const UnlearnPlan& plan,
                                 std::size_t n_ref) {
  CostReport cost;
  cost.forward_passes = stage.counters.forward_passes;
  cost.backward_passes = stage.counters.backward_passes;
  cost.num_targets = stage.graph.num_targets;
  cost.n_ref = n_ref;
  for (const auto& rec : stage.graph.importance) {
    for (const auto& li : rec.layers) {
      cost.importance_floats += li.alpha.size();
      cost.importance_mask_bits += li.mask.size();
    }
  }
  cost.pruned_channels = PruneCount(plan.prune);
  return cost;
}

inline std::string PlanText(const UnlearnPlan& plan) {
  KeyValueReport r;
  r.Add("sigma", static_cast<std::uint64_t>(plan.sigma));
  r.Add("delta", FormatG(plan.delta, 17));
  std::string u, rest;
  for (std::size_t t : plan.unlearning_targets) u += (u.empty() ? "" : ",") + std::to_string(t);
  for (std::size_t t : plan.remaining_targets) rest += (rest.empty() ? "" : ",") + std::to_string(t);
  r.Add("unlearning_targets", u);
  r.Add("remaining_targets", rest);
  r.Add("recover_epochs", static_cast<std::uint64_t>(plan.recover_epochs));
  for (const auto& [layer, channels] : plan.prune) {
    std::string list;
    for (std::size_t k : channels) list += (list.empty() ? "" : ",") + std::to_string(k);
    r.Add("prune.layer" + std::to_string(layer), list);
  }
  return r.Text();
}

struct PipelineResult {
  Network network;
  BalancedGraph graph;
  std::vector<EssentialGraph> target_graphs;
  UnlearnPlan plan;
  CostReport cost;
};

// Graph stage, prune, then the optional recovery. `data` supplies reference
// instances and recovery samples.
inline PipelineResult RunPipeline(const Network& net, const Dataset& data,
                                  const PipelineConfig& config) {
  GraphStage stage = BuildGraphs(net, data, config);
  PipelineResult result;
  result.plan = MakePlan(stage.graph, config);
  result.cost = MakeCostReport(stage, result.plan, config.n_ref);
  CostCounters recover_counters;
  result.network = Recover(ApplyPrune(net, result.plan), data,
                           result.plan.unlearning_targets, result.plan.prune,
                           config.recover, recover_counters);
  result.graph = std::move(stage.graph);
  result.target_graphs = std::move(stage.target_graphs);
  return result;
}

}  // namespace tul

#endif  // TUL_UNLEARN_HPP_
