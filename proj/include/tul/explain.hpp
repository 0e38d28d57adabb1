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

// Grad-CAM channel weights, top-delta channel selection and heatmaps.

#ifndef TUL_EXPLAIN_HPP_
#define TUL_EXPLAIN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tul/binary_io.hpp"
#include "tul/dataset.hpp"
#include "tul/error.hpp"
#include "tul/format.hpp"
#include "tul/network.hpp"
#include "tul/tensor.hpp"

namespace tul {

struct LayerImportance {
  std::size_t layer = 0;      // conv layer index
  std::vector<float> alpha;   // one per output channel
  std::vector<bool> mask;     // selected channels; empty until selection runs

  bool operator==(const LayerImportance& other) const {
    if (layer != other.layer || mask != other.mask ||
        alpha.size() != other.alpha.size())
      return false;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
      if (std::bit_cast<std::uint32_t>(alpha[k]) !=
          std::bit_cast<std::uint32_t>(other.alpha[k]))
        return false;
    }
    return true;
  }
};

struct ImportanceRecord {
  std::size_t target = 0;
  std::size_t num_conv_layers = 0;  // L of the network the record came from
  std::size_t n_ref = 0;            // instances averaged
  double delta = 0.0;               // 0 until masks are selected
  bool abs_alpha = false;
  std::vector<LayerImportance> layers;  // ascending layer index

  std::vector<std::size_t> layer_indices() const {
    std::vector<std::size_t> out;
    for (const auto& l : layers) out.push_back(l.layer);
    return out;
  }
  const LayerImportance& at_layer(std::size_t layer) const {
    for (const auto& l : layers)
      if (l.layer == layer) return l;
    Fail(ErrorKind::kInvalidArgument, "layer",
         "layer " + std::to_string(layer) + " not in record");
  }

  bool operator==(const ImportanceRecord&) const = default;
};

// The last sigma conv layers, ascending.
inline std::vector<std::size_t> LastLayers(std::size_t num_conv_layers,
                                           std::size_t sigma) {
  if (sigma == 0 || sigma > num_conv_layers) {
    Fail(ErrorKind::kValidation, "sigma",
         "sigma=" + std::to_string(sigma) + " must be in [1, " +
             std::to_string(num_conv_layers) + "]");
  }
  std::vector<std::size_t> out(sigma);
  std::iota(out.begin(), out.end(), num_conv_layers - sigma);
  return out;
}

// Per-instance alphas: row n holds the spatial mean of d(logit_t)/d(f_l) for
// instance n, one column per channel.
inline std::vector<std::vector<std::vector<float>>> InstanceAlphas(
    const Network& net, const Tensor& batch, std::size_t target,
    const std::vector<std::size_t>& layers, CostCounters& counters) {
  for (std::size_t l : layers) {
    if (l >= net.num_conv_layers()) {
      Fail(ErrorKind::kInvalidArgument, "layer",
           "conv layer " + std::to_string(l) + " out of range");
    }
  }
  ForwardResult fwd = Forward(net, batch, true, counters);
  std::vector<Tensor> grads = GradWrtFeatureMaps(net, *fwd.tape, target, counters);
  const std::size_t N = batch.extent(0);
  std::vector<std::vector<std::vector<float>>> out;  // [layer][n][k]
  for (std::size_t l : layers) {
    const Tensor& g = grads[l];
    const std::size_t C = g.extent(1), Z = g.extent(2) * g.extent(3);
    std::vector<std::vector<float>> rows(N, std::vector<float>(C));
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t k = 0; k < C; ++k) {
        const float* p = g.raw() + (n * C + k) * Z;
        float sum = 0.0f;
        for (std::size_t z = 0; z < Z; ++z) sum += p[z];
        rows[n][k] = sum / static_cast<float>(Z);
      }
    }
    out.push_back(std::move(rows));
  }
  return out;
}

// Alpha for every listed layer, averaged over the batch in index order.
// No label check: callers that hold labels use ComputeAlpha.
inline ImportanceRecord ComputeAlphaOnBatch(const Network& net, const Tensor& batch,
                                            std::size_t target,
                                            const std::vector<std::size_t>& layers,
                                            CostCounters& counters) {
  if (batch.rank() != 4 || batch.extent(0) == 0) {
    Fail(ErrorKind::kInvalidArgument, "instances", "empty batch");
  }
  const std::size_t N = batch.extent(0);
  auto per_instance = InstanceAlphas(net, batch, target, layers, counters);
  ImportanceRecord rec;
  rec.target = target;
  rec.num_conv_layers = net.num_conv_layers();
  rec.n_ref = N;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    LayerImportance li;
    li.layer = layers[j];
    const std::size_t C = per_instance[j][0].size();
    li.alpha.assign(C, 0.0f);
    for (std::size_t k = 0; k < C; ++k) {
      float sum = 0.0f;
      for (std::size_t n = 0; n < N; ++n) sum += per_instance[j][n][k];
      li.alpha[k] = sum / static_cast<float>(N);
    }
    rec.layers.push_back(std::move(li));
  }
  return rec;
}

inline ImportanceRecord ComputeAlpha(const Network& net, const Dataset& data,
                                     const std::vector<std::size_t>& instances,
                                     std::size_t target,
                                     const std::vector<std::size_t>& layers,
                                     CostCounters& counters) {
  if (instances.empty()) {
    Fail(ErrorKind::kInvalidArgument, "instances", "need at least one instance");
  }
  if (target >= data.num_targets()) {
    Fail(ErrorKind::kInvalidArgument, "target", "target out of range");
  }
  for (std::size_t i : instances) {
    if (i >= data.size() || !data.has_target(i, target)) {
      Fail(ErrorKind::kInvalidArgument, "instances",
           "instance " + std::to_string(i) + " does not contain target " +
               std::to_string(target));
    }
  }
  return ComputeAlphaOnBatch(net, data.Batch(instances), target, layers, counters);
}

// Number of channels chosen out of `channels` at proportion delta. The small
// slack keeps products like 0.1 * 30 from rounding up past the exact value.
inline std::size_t SelectionCount(double delta, std::size_t channels) {
  const double raw = std::ceil(delta * static_cast<double>(channels) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1,
                                 channels);
}

inline std::vector<bool> SelectImportant(std::span<const float> alpha, double delta,
                                         bool use_abs = false) {
  if (alpha.empty()) Fail(ErrorKind::kInvalidArgument, "alpha", "empty alpha array");
  if (!(delta > 0.0 && delta <= 1.0)) {
    Fail(ErrorKind::kValidation, "delta", "delta must be in (0, 1]");
  }
  const std::size_t k = SelectionCount(delta, alpha.size());
  auto key = [&](std::size_t i) { return use_abs ? std::fabs(alpha[i]) : alpha[i]; };
  std::vector<std::size_t> order(alpha.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  std::vector<bool> mask(alpha.size(), false);
  for (std::size_t j = 0; j < k; ++j) mask[order[j]] = true;
  return mask;
}

// Fills every layer's mask in place.
inline void SelectMasks(ImportanceRecord& rec, double delta, bool use_abs = false) {
  for (auto& l : rec.layers) l.mask = SelectImportant(l.alpha, delta, use_abs);
  rec.delta = delta;
  rec.abs_alpha = use_abs;
}

struct CamMap {
  std::size_t layer = 0;
  std::size_t target = 0;
  Tensor map;  // [H_l, W_l]
};

// relu(sum_k alpha_k * f_k) over channels in ascending order. feature_map is
// [C,H,W] or [1,C,H,W].
inline Tensor CamFromAlpha(std::span<const float> alpha, const Tensor& feature_map) {
  const std::size_t r = feature_map.rank();
  if ((r != 3 && r != 4) || (r == 4 && feature_map.extent(0) != 1)) {
    Fail(ErrorKind::kShapeMismatch, "feature_map",
         "expected [C,H,W] or [1,C,H,W], got " + ShapeString(feature_map.shape()));
  }
  const std::size_t C = feature_map.extent(r - 3);
  const std::size_t H = feature_map.extent(r - 2), W = feature_map.extent(r - 1);
  if (alpha.size() != C) {
    Fail(ErrorKind::kShapeMismatch, "channels", "alpha count != channel count");
  }
  Tensor map({H, W});
  for (std::size_t z = 0; z < H * W; ++z) {
    float acc = 0.0f;
    for (std::size_t k = 0; k < C; ++k) acc += alpha[k] * feature_map[k * H * W + z];
    map[z] = acc > 0.0f ? acc : 0.0f;
  }
  return map;
}

inline CamMap ComputeCam(const Network& net, const Tensor& instance, std::size_t target,
                         std::size_t layer, CostCounters& counters) {
  if (layer >= net.num_conv_layers()) {
    Fail(ErrorKind::kInvalidArgument, "layer",
         "conv layer " + std::to_string(layer) + " out of range");
  }
  if (instance.rank() != 4 || instance.extent(0) != 1) {
    Fail(ErrorKind::kShapeMismatch, "instance", "expected a [1,1,H,W] instance");
  }
  ForwardResult fwd = Forward(net, instance, true, counters);
  std::vector<Tensor> grads = GradWrtFeatureMaps(net, *fwd.tape, target, counters);
  const Tensor& g = grads[layer];
  const std::size_t C = g.extent(1), Z = g.extent(2) * g.extent(3);
  std::vector<float> alpha(C);
  for (std::size_t k = 0; k < C; ++k) {
    float sum = 0.0f;
    for (std::size_t z = 0; z < Z; ++z) sum += g[k * Z + z];
    alpha[k] = sum / static_cast<float>(Z);
  }
  return {layer, target, CamFromAlpha(alpha, fwd.tape->feature_map(layer))};
}

// Nearest-neighbour upscale plus min-max normalization to 0..255.
inline std::vector<std::uint8_t> HeatmapPixels(const Tensor& map, std::size_t height,
                                               std::size_t width) {
  if (map.rank() != 2) Fail(ErrorKind::kShapeMismatch, "map", "expected rank 2");
  if (height == 0 || width == 0) {
    Fail(ErrorKind::kInvalidArgument, "upscale_to", "zero output extent");
  }
  const std::size_t h = map.extent(0), w = map.extent(1);
  float lo = map[0], hi = map[0];
  for (float v : map.data()) {
    if (!std::isfinite(v)) Fail(ErrorKind::kNumeric, "map", "non-finite CAM value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<std::uint8_t> px(height * width, 0);
  if (!(hi > lo)) return px;
  const double range = double(hi) - double(lo);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const float v = map[(r * h / height) * w + (c * w / width)];
      px[r * width + c] =
          static_cast<std::uint8_t>(std::lround((double(v) - lo) / range * 255.0));
    }
  }
  return px;
}

inline std::vector<std::uint8_t> EncodePgm(const std::vector<std::uint8_t>& px,
                                           std::size_t height, std::size_t width) {
  const std::string header =
      "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

inline void ExportHeatmap(const CamMap& cam, std::size_t height, std::size_t width,
                          const std::string& path) {
  WriteFileBytes(path, EncodePgm(HeatmapPixels(cam.map, height, width), height, width));
}

// JSON form used inside graph files and by the explain command.
inline Json ImportanceToJson(const ImportanceRecord& rec) {
  Json layers = Json::array();
  for (const auto& l : rec.layers) {
    Json alpha = Json::array();
    for (float a : l.alpha) alpha.push_back(Exact9(a));
    Json mask = Json::array();
    for (bool m : l.mask) mask.push_back(m);
    layers.push_back({{"layer", l.layer}, {"alpha", alpha}, {"mask", mask}});
  }
  return {{"target", rec.target},       {"num_conv_layers", rec.num_conv_layers},
          {"n_ref", rec.n_ref},         {"delta", rec.delta},
          {"abs_alpha", rec.abs_alpha}, {"layers", layers}};
}

inline ImportanceRecord ImportanceFromJson(const Json& j) {
  try {
    ImportanceRecord rec;
    rec.target = j.at("target").get<std::size_t>();
    rec.num_conv_layers = j.at("num_conv_layers").get<std::size_t>();
    rec.n_ref = j.at("n_ref").get<std::size_t>();
    rec.delta = j.at("delta").get<double>();
    rec.abs_alpha = j.at("abs_alpha").get<bool>();
    for (const Json& lj : j.at("layers")) {
      LayerImportance li;
      li.layer = lj.at("layer").get<std::size_t>();
      for (const Json& a : lj.at("alpha")) li.alpha.push_back(static_cast<float>(a.get<double>()));
      for (const Json& m : lj.at("mask")) li.mask.push_back(m.get<bool>());
      if (!li.mask.empty() && li.mask.size() != li.alpha.size()) {
        Fail(ErrorKind::kShapeMismatch, "mask", "mask and alpha lengths differ");
      }
      rec.layers.push_back(std::move(li));
    }
    return rec;
  } catch (const Json::exception& e) {
    Fail(ErrorKind::kValidation, "importance", e.what());
  }
}

}  // namespace tul

#endif  // TUL_EXPLAIN_HPP_
