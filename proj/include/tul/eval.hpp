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

// Utility and forgetting metrics: per-target recall, the retrain baseline,
// a loss-threshold membership attack, ablation scores and mask stability.

#ifndef TUL_EVAL_HPP_
#define TUL_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "tul/dataset.hpp"
#include "tul/error.hpp"
#include "tul/explain.hpp"
#include "tul/format.hpp"
#include "tul/graph.hpp"
#include "tul/network.hpp"

namespace tul {

inline constexpr std::size_t kEvalBatch = 256;

// Sigmoid outputs for every sample, [N, |Y|], forwarded in fixed-size chunks.
inline Tensor PredictAll(const Network& net, const Dataset& data, CostCounters& counters,
                         Tensor* logits_out = nullptr) {
  if (data.empty()) Fail(ErrorKind::kInvalidArgument, "dataset", "empty dataset");
  const std::size_t Y = net.num_targets();
  Tensor probs({data.size(), Y});
  Tensor logits({data.size(), Y});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    const std::size_t stop = std::min(data.size(), start + kEvalBatch);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    ForwardResult fwd = Forward(net, data.Batch(idx), false, counters);
    std::copy(fwd.probs.data().begin(), fwd.probs.data().end(), probs.raw() + start * Y);
    std::copy(fwd.logits.data().begin(), fwd.logits.data().end(), logits.raw() + start * Y);
  }
  if (logits_out) *logits_out = std::move(logits);
  return probs;
}

struct TargetMetrics {
  std::vector<double> positive_recall;    // per target
  std::vector<double> balanced_accuracy;  // per target
  std::vector<std::size_t> positives;     // per target

  KeyValueReport ToReport(const std::string& prefix = "") const {
    KeyValueReport r;
    for (std::size_t t = 0; t < positive_recall.size(); ++t) {
      const std::string p = prefix + "target" + std::to_string(t) + ".";
      r.Add(p + "positive_recall", positive_recall[t]);
      r.Add(p + "balanced_accuracy", balanced_accuracy[t]);
      r.Add(p + "positives", static_cast<std::uint64_t>(positives[t]));
    }
    return r;
  }
};

// Threshold 0.5 on probabilities. A rate with an empty denominator counts as
// 0 for recall and is left out of the balanced-accuracy mean.
inline TargetMetrics MetricsFromProbs(const Tensor& probs, const Dataset& data) {
  const std::size_t N = data.size(), Y = data.num_targets();
  if (probs.size() != N * Y) {
    Fail(ErrorKind::kShapeMismatch, "probs", "prediction count != dataset size");
  }
  TargetMetrics m;
  for (std::size_t t = 0; t < Y; ++t) {
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const bool pred = probs[n * Y + t] >= 0.5f;
      if (data.has_target(n, t)) {
        pred ? ++tp : ++fn;
      } else {
        pred ? ++fp : ++tn;
      }
    }
    const double tpr = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    double ba = 0.0;
    int rates = 0;
    if (tp + fn) { ba += tpr; ++rates; }
    if (tn + fp) { ba += double(tn) / double(tn + fp); ++rates; }
    m.positive_recall.push_back(tpr);
    m.balanced_accuracy.push_back(rates ? ba / rates : 0.0);
    m.positives.push_back(tp + fn);
  }
  return m;
}

inline TargetMetrics Evaluate(const Network& net, const Dataset& test) {
  if (test.num_targets() != net.num_targets()) {
    Fail(ErrorKind::kShapeMismatch, "num_targets", "labels width != |Y|");
  }
  CostCounters counters;
  return MetricsFromProbs(PredictAll(net, test, counters), test);
}

inline double MeanRecall(const TargetMetrics& m, const std::vector<std::size_t>& targets) {
  if (targets.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t t : targets) sum += m.positive_recall.at(t);
  return sum / double(targets.size());
}

// ---- Retrain-from-scratch baseline ----------------------------------------

struct RetrainResult {
  Network network;
  std::size_t kept_samples = 0;
  bool degenerate = false;  // nothing left to train on
};

inline RetrainResult RetrainBaseline(const Dataset& train,
                                     const std::vector<std::size_t>& unlearning,
                                     const TrainConfig& config, std::uint64_t init_seed,
                                     CostCounters& counters) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < train.size(); ++i) {
    bool hit = false;
    for (std::size_t t : unlearning) hit = hit || train.has_target(i, t);
    if (!hit) keep.push_back(i);
  }
  RetrainResult r;
  r.kept_samples = keep.size();
  r.network = BuildDefaultNetwork(train.num_targets(), init_seed);
  if (keep.empty()) {
    r.degenerate = true;
    return r;
  }
  r.network = Train(std::move(r.network), train.Subset(keep), config, counters);
  return r;
}

// A degenerate baseline never saw data, so it is scored as a model that
// predicts every target absent.
inline TargetMetrics EvaluateRetrain(const RetrainResult& r, const Dataset& test) {
  if (!r.degenerate) return Evaluate(r.network, test);
  return MetricsFromProbs(Tensor({test.size(), test.num_targets()}), test);
}

// ---- Loss-threshold membership inference -----------------------------------

// BCE of head `target` against each sample's own label.
inline std::vector<double> TargetLosses(const Network& net, const Dataset& data,
                                        const std::vector<std::size_t>& indices,
                                        std::size_t target) {
  std::vector<double> out;
  out.reserve(indices.size());
  CostCounters counters;
  const std::size_t Y = net.num_targets();
  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const std::size_t stop = std::min(indices.size(), start + kEvalBatch);
    const std::span<const std::size_t> idx(indices.data() + start, stop - start);
    ForwardResult fwd = Forward(net, data.Batch(idx), false, counters);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out.push_back(BceWithLogit(fwd.logits[j * Y + target],
                                 data.has_target(idx[j], target) ? 1.0f : 0.0f));
    }
  }
  return out;
}

struct MiaResult {
  double threshold = 0.0;  // member iff loss <= threshold
  double recall = 0.0;
  double calibration_balanced_accuracy = 0.0;
  std::size_t evaluated_members = 0;
};

namespace detail {

inline double RateAtOrBelow(const std::vector<double>& sorted, double t) {
  return double(std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin()) /
         double(sorted.size());
}

}  // namespace detail

// Recall of `members` under a fixed threshold.
inline MiaResult MiaWithThreshold(const std::vector<double>& members, double threshold) {
  if (members.empty()) Fail(ErrorKind::kInvalidArgument, "members", "no member losses");
  std::size_t hit = 0;
  for (double l : members) hit += l <= threshold;
  MiaResult r;
  r.threshold = threshold;
  r.recall = double(hit) / double(members.size());
  r.evaluated_members = members.size();
  return r;
}

// Even positions of each array calibrate, odd member positions evaluate.
// Balanced accuracy is scored at every cut between distinct calibration
// losses. Plain argmax lands at an essentially random quantile when the two
// populations do not differ, so every cut within a Kolmogorov-Smirnov band
// (95% level) of the best score is treated as equally good and the one
// nearest the pooled calibration median is used.
inline MiaResult MiaThreshold(const std::vector<double>& member_losses,
                              const std::vector<double>& nonmember_losses) {
  if (member_losses.size() < 2) {
    Fail(ErrorKind::kInvalidArgument, "member_losses", "need at least 2 member losses");
  }
  if (nonmember_losses.empty()) {
    Fail(ErrorKind::kInvalidArgument, "nonmember_losses", "no nonmember losses");
  }
  std::vector<double> cal_m, cal_n, eval_m;
  for (std::size_t i = 0; i < member_losses.size(); ++i)
    (i % 2 == 0 ? cal_m : eval_m).push_back(member_losses[i]);
  for (std::size_t i = 0; i < nonmember_losses.size(); i += 2)
    cal_n.push_back(nonmember_losses[i]);
  std::sort(cal_m.begin(), cal_m.end());
  std::sort(cal_n.begin(), cal_n.end());

  std::vector<double> pooled(cal_m);
  pooled.insert(pooled.end(), cal_n.begin(), cal_n.end());
  std::sort(pooled.begin(), pooled.end());
  const double median = pooled.size() % 2
                            ? pooled[pooled.size() / 2]
                            : (pooled[pooled.size() / 2 - 1] + pooled[pooled.size() / 2]) / 2.0;
  std::vector<double> values(pooled);
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> cuts{values.front() - 1.0};
  for (std::size_t i = 0; i + 1 < values.size(); ++i)
    cuts.push_back(values[i] + (values[i + 1] - values[i]) / 2.0);
  cuts.push_back(values.back() + 1.0);

  std::vector<double> ba(cuts.size());
  double best = 0.0;
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    ba[i] = 0.5 * (detail::RateAtOrBelow(cal_m, cuts[i]) +
                   (1.0 - detail::RateAtOrBelow(cal_n, cuts[i])));
    best = std::max(best, ba[i]);
  }
  // Half the two-sample KS critical distance: balanced accuracy moves by half
  // the CDF gap.
  const double band =
      0.5 * 1.358 * std::sqrt(1.0 / double(cal_m.size()) + 1.0 / double(cal_n.size()));
  std::size_t pick = 0;
  double pick_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    if (ba[i] < best - band) continue;
    const double d = std::fabs(cuts[i] - median);
    if (d < pick_dist) {
      pick = i;
      pick_dist = d;
    }
  }
  MiaResult r = MiaWithThreshold(eval_m, cuts[pick]);
  r.calibration_balanced_accuracy = ba[pick];
  return r;
}

// Loss-threshold attack on target `u`: training samples containing u are
// members, test samples containing u are non-members.
struct MiaPopulations {
  std::vector<double> members;
  std::vector<double> nonmembers;
};

inline MiaPopulations MiaLosses(const Network& net, const Dataset& train,
                                const Dataset& test, std::size_t u) {
  return {TargetLosses(net, train, train.WithTarget(u), u),
          TargetLosses(net, test, test.WithTarget(u), u)};
}

inline MiaResult MiaRecalibrated(const MiaPopulations& p) {
  return MiaThreshold(p.members, p.nonmembers);
}

// Recall on the same held-out members MiaThreshold evaluates, under a
// threshold fixed elsewhere (typically the original model's).
inline MiaResult MiaFixed(const MiaPopulations& p, double threshold) {
  std::vector<double> eval_m;
  for (std::size_t i = 1; i < p.members.size(); i += 2) eval_m.push_back(p.members[i]);
  return MiaWithThreshold(eval_m, threshold);
}

// ---- Ablation oracle and stability ----------------------------------------

// score[k] = mean over instances of logit_t(original) - logit_t(channel k
// zeroed). One batched baseline forward, then one forward per (channel,
// instance).
inline std::vector<double> AblationOracle(const Network& net, const Dataset& data,
                                          const std::vector<std::size_t>& instances,
                                          std::size_t target, std::size_t layer,
                                          CostCounters& counters) {
  if (instances.empty()) Fail(ErrorKind::kInvalidArgument, "instances", "no instances");
  if (layer >= net.num_conv_layers()) {
    Fail(ErrorKind::kInvalidArgument, "layer", "conv layer out of range");
  }
  if (target >= net.num_targets()) {
    Fail(ErrorKind::kInvalidArgument, "target", "target out of range");
  }
  const std::size_t Y = net.num_targets();
  const ForwardResult base = Forward(net, data.Batch(instances), false, counters);
  const std::size_t C = net.conv_channels(layer);
  std::vector<double> scores(C, 0.0);
  for (std::size_t k = 0; k < C; ++k) {
    double sum = 0.0;
    for (std::size_t j = 0; j < instances.size(); ++j) {
      const std::size_t one[] = {instances[j]};
      const ForwardResult ab =
          Forward(net, data.Batch(one), false, counters, ChannelAblation{layer, k});
      sum += double(base.logits[j * Y + target]) - double(ab.logits[target]);
    }
    scores[k] = sum / double(instances.size());
  }
  return scores;
}

// |top(a) ∩ top(b)| / k for the k = ceil(fraction * n) largest entries,
// ties to the lower index.
template <typename A, typename B>
double TopOverlap(const std::vector<A>& a, const std::vector<B>& b, double fraction) {
  if (a.size() != b.size() || a.empty()) {
    Fail(ErrorKind::kShapeMismatch, "scores", "score arrays differ in length");
  }
  const std::vector<float> fa(a.begin(), a.end()), fb(b.begin(), b.end());
  const auto ma = SelectImportant(fa, fraction), mb = SelectImportant(fb, fraction);
  std::size_t both = 0, k = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    both += ma[i] && mb[i];
    k += ma[i];
  }
  return double(both) / double(k);
}

inline double Jaccard(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) Fail(ErrorKind::kShapeMismatch, "mask", "mask lengths differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? double(inter) / double(uni) : 1.0;
}

// Jaccard similarity of the top-delta masks computed from two disjoint
// reference batches of the same target.
inline double StabilityCheck(const Network& net, const Dataset& data, std::size_t target,
                             std::size_t layer, double delta,
                             const std::vector<std::size_t>& batch_a,
                             const std::vector<std::size_t>& batch_b,
                             CostCounters& counters) {
  if (batch_a.empty() || batch_b.empty()) {
    Fail(ErrorKind::kInvalidArgument, "batches", "both batches must be nonempty");
  }
  const bool same = batch_a == batch_b;
  if (!same) {
    std::vector<std::size_t> sa(batch_a), sb(batch_b), common;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                          std::back_inserter(common));
    if (!common.empty()) {
      Fail(ErrorKind::kInvalidArgument, "batches", "batches must be disjoint");
    }
  }
  const std::vector<std::size_t> layers{layer};
  const auto ra = ComputeAlpha(net, data, batch_a, target, layers, counters);
  const auto rb = ComputeAlpha(net, data, batch_b, target, layers, counters);
  return Jaccard(SelectImportant(ra.layers[0].alpha, delta),
                 SelectImportant(rb.layers[0].alpha, delta));
}

}  // namespace tul

#endif  // TUL_EVAL_HPP_
