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

// The `tul` command line. Each subcommand reads its inputs from out_dir,
// writes its artifacts and the effective config (config.<command>.txt) back
// there, and keeps no other state.
//
// Exit codes: 0 success, 1 validation or usage error, 2 anything else.

#ifndef TUL_CLI_HPP_
#define TUL_CLI_HPP_

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tul/binary_io.hpp"
#include "tul/config.hpp"
#include "tul/dataset.hpp"
#include "tul/error.hpp"
#include "tul/eval.hpp"
#include "tul/explain.hpp"
#include "tul/format.hpp"
#include "tul/graph.hpp"
#include "tul/network.hpp"
#include "tul/unlearn.hpp"

namespace tul {

inline constexpr std::size_t kHeatmapSize = 32;

// Artifact names inside out_dir.
namespace artifact {
inline constexpr const char* kTrainData = "train.tuld";
inline constexpr const char* kTestData = "test.tuld";
inline constexpr const char* kModel = "model.tulm";
inline constexpr const char* kTrainLog = "train_log.txt";
inline constexpr const char* kAlpha = "alpha.json";
inline constexpr const char* kGraphJson = "graph.json";
inline constexpr const char* kGraphDot = "graph.dot";
inline constexpr const char* kUnlearned = "unlearned.tulm";
inline constexpr const char* kCost = "cost.txt";
inline constexpr const char* kPlan = "plan.txt";
inline constexpr const char* kMetricsText = "metrics.txt";
inline constexpr const char* kMetricsJson = "metrics.json";
inline constexpr const char* kSweep = "sweep.csv";
}  // namespace artifact

// Defaults, then the config file, then TUL_SEED, then each --set in order.
inline RunConfig ResolveConfig(const std::string& config_path,
                               const std::vector<std::string>& sets,
                               const char* env_seed) {
  RunConfig cfg;
  if (!config_path.empty()) {
    if (!std::filesystem::is_regular_file(config_path)) {
      Fail(ErrorKind::kValidation, "config", "cannot read " + config_path);
    }
    cfg = ParseConfig(ReadFileText(config_path), cfg);
  }
  if (env_seed != nullptr) cfg.Set("seed", env_seed);
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) Fail(ErrorKind::kValidation, kv, "--set expects key=value");
    cfg.Set(detail::Trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  cfg.Validate();
  return cfg;
}

class Workspace {
 public:
  explicit Workspace(const RunConfig& cfg) : dir_(cfg.out_dir) {}

  std::string Path(const std::string& name) const { return (dir_ / name).string(); }

  // Missing inputs are a precondition failure, reported before any work.
  std::string Input(const std::string& name) const {
    const std::string p = Path(name);
    if (!std::filesystem::is_regular_file(p)) {
      Fail(ErrorKind::kValidation, name, "missing input " + p);
    }
    return p;
  }

  void Prepare(const RunConfig& cfg, const std::string& command) const {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) Fail(ErrorKind::kIo, "out_dir", ec.message());
    WriteFileText(Path("config." + command + ".txt"), cfg.Text());
  }

 private:
  std::filesystem::path dir_;
};

namespace detail {

inline Dataset LoadMatching(const Workspace& ws, const char* name, const RunConfig& cfg) {
  Dataset d = LoadDataset(ws.Input(name));
  if (d.num_targets() != cfg.num_targets) {
    Fail(ErrorKind::kValidation, "num_targets",
         std::string(name) + " has " + std::to_string(d.num_targets()) + " targets");
  }
  return d;
}

inline Network LoadModel(const Workspace& ws, const char* name, const RunConfig& cfg) {
  Network net = LoadCheckpoint(ws.Input(name));
  if (net.num_targets() != cfg.num_targets) {
    Fail(ErrorKind::kValidation, "num_targets",
         std::string(name) + " has " + std::to_string(net.num_targets()) + " heads");
  }
  if (cfg.sigma > net.num_conv_layers()) {
    Fail(ErrorKind::kValidation, "sigma", "exceeds the model's conv layer count");
  }
  return net;
}

inline double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

inline void CmdGenData(const RunConfig& cfg, const Workspace& ws, std::ostream& out) {
  const Dataset all = Generate(cfg.generate());
  const SplitResult split = Split(all, cfg.train_fraction, cfg.seed);
  SaveDataset(split.train, ws.Path(artifact::kTrainData));
  SaveDataset(split.test, ws.Path(artifact::kTestData));
  out << "train_samples=" << split.train.size() << "\n"
      << "test_samples=" << split.test.size() << "\n";
}

inline void CmdTrain(const RunConfig& cfg, const Workspace& ws, std::ostream& out) {
  const Dataset train = detail::LoadMatching(ws, artifact::kTrainData, cfg);
  const auto start = std::chrono::steady_clock::now();
  std::vector<EpochStats> log;
  TrainOptions options;
  options.log = &log;
  CostCounters counters;
  const Network net = Train(BuildDefaultNetwork(cfg.num_targets, cfg.seed), train,
                            cfg.train(), counters, options);
  SaveCheckpoint(net, ws.Path(artifact::kModel));
  KeyValueReport r;
  for (const EpochStats& e : log) r.Add("epoch" + std::to_string(e.epoch) + ".mean_loss", e.mean_loss);
  WriteFileText(ws.Path(artifact::kTrainLog), r.Text());
  if (!log.empty()) out << "final_mean_loss=" << FormatG(log.back().mean_loss) << "\n";
  out << "train_seconds=" << FormatG(detail::Seconds(start)) << "\n";
}

inline void CmdExplain(const RunConfig& cfg, const Workspace& ws, std::ostream& out) {
  const Network net = detail::LoadModel(ws, artifact::kModel, cfg);
  const Dataset train = detail::LoadMatching(ws, artifact::kTrainData, cfg);
  const auto layers = LastLayers(net.num_conv_layers(), cfg.sigma);
  const std::size_t last = net.num_conv_layers() - 1;
  Json records = Json::array();
  CostCounters counters;
  for (std::size_t t = 0; t < cfg.num_targets; ++t) {
    const auto refs = PickReferences(train, t, cfg.n_ref, cfg.seed);
    ImportanceRecord rec = ComputeAlpha(net, train, refs, t, layers, counters);
    SelectMasks(rec, cfg.delta, cfg.abs_alpha);
    records.push_back(ImportanceToJson(rec));
    const std::vector<std::size_t> first{refs.front()};
    const CamMap cam = ComputeCam(net, train.Batch(first), t, last, counters);
    ExportHeatmap(cam, kHeatmapSize, kHeatmapSize,
                  ws.Path("heatmap_target" + std::to_string(t) + ".pgm"));
  }
  WriteFileText(ws.Path(artifact::kAlpha), DumpJson(Json{{"records", records}}));
  out << "forward_passes=" << counters.forward_passes << "\n"
      << "backward_passes=" << counters.backward_passes << "\n";
}

inline void WriteGraph(const BalancedGraph& g, const Workspace& ws) {
  ExportGraph(g, GraphFormat::kJson, ws.Path(artifact::kGraphJson));
  ExportGraph(g, GraphFormat::kDot, ws.Path(artifact::kGraphDot));
}

inline void CmdBuildGraph(const RunConfig& cfg, const Workspace& ws, std::ostream& out) {
  const Network net = detail::LoadModel(ws, artifact::kModel, cfg);
  const Dataset train = detail::LoadMatching(ws, artifact::kTrainData, cfg);
  const PipelineConfig pc = cfg.pipeline();
  const GraphStage stage = BuildGraphs(net, train, pc);
  WriteGraph(stage.graph, ws);
  out << "pruned_channels=" << PruneCount(ComputePruneSet(stage.graph)) << "\n";
}

inline void CmdUnlearn(const RunConfig& cfg, const Workspace& ws, std::ostream& out) {
  const Network net = detail::LoadModel(ws, artifact::kModel, cfg);
  const Dataset train = detail::LoadMatching(ws, artifact::kTrainData, cfg);
  const PipelineResult result = RunPipeline(net, train, cfg.pipeline());
  SaveCheckpoint(result.network, ws.Path(artifact::kUnlearned));
  WriteGraph(result.graph, ws);
  WriteFileText(ws.Path(artifact::kCost), result.cost.ToReport().Text());
  WriteFileText(ws.Path(artifact::kPlan), PlanText(result.plan));
  // Timed separately so the figure covers the prune step alone.
  const auto start = std::chrono::steady_clock::now();
  static_cast<void>(ApplyPrune(net, result.plan));
  const double latency = detail::Seconds(start);
  out << "pruned_channels=" << result.cost.pruned_channels << "\n"
      << "paper_equivalent_units=" << FormatG(result.cost.paper_equivalent_units()) << "\n"
      << "apply_prune_seconds=" << FormatG(latency) << "\n";
}

inline KeyValueReport EvalReport(const RunConfig& cfg, const Network& original,
                                 const Network& unlearned, const Dataset& train,
                                 const Dataset& test) {
  const std::vector<std::size_t> remaining = RemainingTargets(cfg.unlearn_targets, cfg.num_targets);
  CostCounters counters;
  const RetrainResult retrain =
      RetrainBaseline(train, cfg.unlearn_targets, cfg.train(), cfg.seed, counters);

  KeyValueReport r;
  auto add_model = [&](const std::string& name, const TargetMetrics& m) {
    r.Merge(m.ToReport(name + "."));
    r.Add(name + ".unlearning_mean_recall", MeanRecall(m, cfg.unlearn_targets));
    r.Add(name + ".remaining_mean_recall", MeanRecall(m, remaining));
  };
  add_model("original", Evaluate(original, test));
  add_model("unlearned", Evaluate(unlearned, test));
  add_model("retrain", EvaluateRetrain(retrain, test));
  r.Add("retrain.kept_samples", static_cast<std::uint64_t>(retrain.kept_samples));
  r.Add("retrain.degenerate", retrain.degenerate ? "true" : "false");

  for (std::size_t u : cfg.unlearn_targets) {
    const std::string p = "mia.target" + std::to_string(u) + ".";
    const MiaResult orig = MiaRecalibrated(MiaLosses(original, train, test, u));
    const MiaPopulations un_pop = MiaLosses(unlearned, train, test, u);
    const MiaResult un = MiaRecalibrated(un_pop);
    const MiaResult fixed = MiaFixed(un_pop, orig.threshold);
    r.Add(p + "original.recall", orig.recall);
    r.Add(p + "original.threshold", orig.threshold);
    r.Add(p + "original.calibration_balanced_accuracy", orig.calibration_balanced_accuracy);
    r.Add(p + "unlearned.recall", un.recall);
    r.Add(p + "unlearned.threshold", un.threshold);
    r.Add(p + "unlearned.calibration_balanced_accuracy", un.calibration_balanced_accuracy);
    r.Add(p + "unlearned_fixed_threshold.recall", fixed.recall);
    if (!retrain.degenerate) {
      r.Add(p + "retrain.recall", MiaRecalibrated(MiaLosses(retrain.network, train, test, u)).recall);
    }
    r.Add(p + "evaluated_members", static_cast<std::uint64_t>(orig.evaluated_members));
  }
  return r;
}

inline void CmdEval(const RunConfig& cfg, const Workspace& ws, std::ostream& out) {
  const Network original = detail::LoadModel(ws, artifact::kModel, cfg);
  const Network unlearned = detail::LoadModel(ws, artifact::kUnlearned, cfg);
  const Dataset train = detail::LoadMatching(ws, artifact::kTrainData, cfg);
  const Dataset test = detail::LoadMatching(ws, artifact::kTestData, cfg);
  const KeyValueReport r = EvalReport(cfg, original, unlearned, train, test);
  WriteFileText(ws.Path(artifact::kMetricsText), r.Text());
  WriteFileText(ws.Path(artifact::kMetricsJson), DumpJson(r.ToJson()));
  out << r.Text();
}

inline void CmdSweep(const RunConfig& cfg, const Workspace& ws, std::ostream& out) {
  const Network net = detail::LoadModel(ws, artifact::kModel, cfg);
  const Dataset train = detail::LoadMatching(ws, artifact::kTrainData, cfg);
  const Dataset test = detail::LoadMatching(ws, artifact::kTestData, cfg);
  const std::vector<std::size_t> remaining = RemainingTargets(cfg.unlearn_targets, cfg.num_targets);
  std::string csv = "sigma,delta,unlearned_recall,mean_remaining_recall,pruned_channels\n";
  for (std::size_t sigma : cfg.sweep_sigmas) {
    for (double delta : cfg.sweep_deltas) {
      PipelineConfig pc = cfg.pipeline();
      pc.sigma = sigma;
      pc.delta = delta;
      const PipelineResult result = RunPipeline(net, train, pc);
      const TargetMetrics m = Evaluate(result.network, test);
      const std::string row = std::to_string(sigma) + "," + FormatG(delta) + "," +
                              FormatG(MeanRecall(m, cfg.unlearn_targets)) + "," +
                              FormatG(MeanRecall(m, remaining)) + "," +
                              std::to_string(result.cost.pruned_channels) + "\n";
      csv += row;
      out << row;
    }
  }
  WriteFileText(ws.Path(artifact::kSweep), csv);
}

// Entry point shared by the binary and the tests. `argv[0]` is the program
// name.
inline int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Target-level unlearning on a synthetic multi-target task", "tul"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--set", sets, "override one key, key=value (repeatable)");

  using Command = void (*)(const RunConfig&, const Workspace&, std::ostream&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands = {
      {"gen-data", "generate and split the synthetic dataset", CmdGenData},
      {"train", "train the network on train.tuld", CmdTrain},
      {"explain", "per-target channel importance and CAM heatmaps", CmdExplain},
      {"build-graph", "balanced essential graph", CmdBuildGraph},
      {"unlearn", "prune the unlearning targets' channels", CmdUnlearn},
      {"eval", "metrics for original, unlearned and retrained models", CmdEval},
      {"sweep", "sigma x delta grid", CmdSweep},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig cfg = ResolveConfig(config_path, sets, std::getenv("TUL_SEED"));
    const Workspace ws(cfg);
    for (const auto& [name, help, fn] : commands) {
      if (!app.got_subcommand(name)) continue;
      ws.Prepare(cfg, name);
      fn(cfg, ws, out);
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kValidation ? 1 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace tul

#endif  // TUL_CLI_HPP_
