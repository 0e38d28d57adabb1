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

// A small sequential CNN with a multi-label sigmoid head.
//
// Conv layers are numbered 0..L-1 in forward order, independently of the
// relu/gap/dense layers in between. The feature map f_l of conv layer l is
// its raw output, before any activation. Importance gradients are taken with
// respect to the pre-sigmoid logit of the chosen target.

#ifndef TUL_NETWORK_HPP_
#define TUL_NETWORK_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tul/binary_io.hpp"
#include "tul/dataset.hpp"
#include "tul/error.hpp"
#include "tul/rng.hpp"
#include "tul/tensor.hpp"

namespace tul {

enum class LayerKind : std::uint8_t {
  kConv = 0,
  kRelu = 1,
  kGap = 2,
  kDense = 3,
  kSigmoidHead = 4,
};

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  // conv
  std::uint32_t out_channels = 0;
  std::uint32_t in_channels = 0;
  std::uint32_t kernel = 0;
  std::uint32_t stride = 1;
  std::uint32_t pad = 0;
  // dense; sigmoid_head uses out_features as its width
  std::uint32_t in_features = 0;
  std::uint32_t out_features = 0;

  static LayerSpec Conv(std::uint32_t out, std::uint32_t in, std::uint32_t k,
                        std::uint32_t stride, std::uint32_t pad) {
    LayerSpec s;
    s.kind = LayerKind::kConv;
    s.out_channels = out;
    s.in_channels = in;
    s.kernel = k;
    s.stride = stride;
    s.pad = pad;
    return s;
  }
  static LayerSpec Relu() { return {}; }
  static LayerSpec Gap() {
    LayerSpec s;
    s.kind = LayerKind::kGap;
    return s;
  }
  static LayerSpec Dense(std::uint32_t in, std::uint32_t out) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.in_features = in;
    s.out_features = out;
    return s;
  }
  static LayerSpec SigmoidHead(std::uint32_t width) {
    LayerSpec s;
    s.kind = LayerKind::kSigmoidHead;
    s.out_features = width;
    return s;
  }

  // Integers stored in the checkpoint, in order.
  std::vector<std::uint32_t> Ints() const {
    switch (kind) {
      case LayerKind::kConv: return {out_channels, in_channels, kernel, stride, pad};
      case LayerKind::kDense: return {in_features, out_features};
      case LayerKind::kSigmoidHead: return {out_features};
      default: return {};
    }
  }
  static std::size_t IntCount(LayerKind kind) {
    switch (kind) {
      case LayerKind::kConv: return 5;
      case LayerKind::kDense: return 2;
      case LayerKind::kSigmoidHead: return 1;
      default: return 0;
    }
  }
  static LayerSpec FromInts(LayerKind kind, const std::vector<std::uint32_t>& v) {
    switch (kind) {
      case LayerKind::kConv: return Conv(v[0], v[1], v[2], v[3], v[4]);
      case LayerKind::kDense: return Dense(v[0], v[1]);
      case LayerKind::kSigmoidHead: return SigmoidHead(v[0]);
      case LayerKind::kGap: return Gap();
      default: return Relu();
    }
  }

  bool operator==(const LayerSpec&) const = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // conv [O,I,K,K], dense [out,in]; empty otherwise
  Tensor bias;    // [O] / [out]; empty otherwise
};

struct CostCounters {
  std::uint64_t forward_passes = 0;
  std::uint64_t backward_passes = 0;
};

class Network {
 public:
  Network() = default;

  // Validates the layer chain: single-channel input, conv channel counts
  // compose, gap precedes dense, the head is last and as wide as the
  // preceding dense layer.
  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
    Validate();
  }

  // Glorot-uniform weights from a SplitMix64 stream; zero biases.
  static Network Build(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<Layer> layers;
    for (const LayerSpec& s : specs) {
      Layer layer{s, {}, {}};
      if (s.kind == LayerKind::kConv) {
        const double area = double(s.kernel) * s.kernel;
        const float a = static_cast<float>(
            std::sqrt(6.0 / (s.in_channels * area + s.out_channels * area)));
        layer.weight = Tensor({s.out_channels, s.in_channels, s.kernel, s.kernel});
        for (float& w : layer.weight.data()) w = rng.Uniform(-a, a);
        layer.bias = Tensor({s.out_channels});
      } else if (s.kind == LayerKind::kDense) {
        const float a = static_cast<float>(
            std::sqrt(6.0 / (double(s.in_features) + s.out_features)));
        layer.weight = Tensor({s.out_features, s.in_features});
        for (float& w : layer.weight.data()) w = rng.Uniform(-a, a);
        layer.bias = Tensor({s.out_features});
      }
      layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
  }

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& mutable_layer(std::size_t i) { return layers_.at(i); }

  std::size_t num_targets() const { return layers_.back().spec.out_features; }
  std::size_t num_conv_layers() const { return conv_positions_.size(); }
  // Position in layers() of conv layer l.
  std::size_t conv_position(std::size_t l) const { return conv_positions_.at(l); }
  const Layer& conv(std::size_t l) const { return layers_[conv_position(l)]; }
  Layer& mutable_conv(std::size_t l) { return layers_[conv_position(l)]; }
  std::size_t conv_channels(std::size_t l) const { return conv(l).spec.out_channels; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_)
      if (!l.weight.empty()) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Hash of every parameter bit; identifies the weights a tape was taken on.
  std::uint64_t Fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Layer& l : layers_) {
      if (l.weight.empty()) continue;
      h = Fnv1a(l.weight.raw(), l.weight.size() * sizeof(float), h);
      h = Fnv1a(l.bias.raw(), l.bias.size() * sizeof(float), h);
    }
    return h;
  }

  bool BitwiseEquals(const Network& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& a = layers_[i];
      const Layer& b = other.layers_[i];
      if (!(a.spec == b.spec)) return false;
      if (a.weight.empty() != b.weight.empty()) return false;
      if (!a.weight.empty() &&
          (!BitwiseEqual(a.weight, b.weight) || !BitwiseEqual(a.bias, b.bias)))
        return false;
    }
    return true;
  }

 private:
  void Validate() {
    if (layers_.empty()) Fail(ErrorKind::kInvalidArgument, "layers", "empty network");
    conv_positions_.clear();
    std::size_t channels = 1;
    std::size_t features = 0;
    bool pooled = false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      const LayerSpec& s = l.spec;
      const std::string where = "layer " + std::to_string(i);
      switch (s.kind) {
        case LayerKind::kConv:
          if (pooled) Fail(ErrorKind::kShapeMismatch, where, "conv after gap");
          if (s.in_channels != channels) {
            Fail(ErrorKind::kShapeMismatch, where,
                 "in_channels " + std::to_string(s.in_channels) +
                     " != incoming " + std::to_string(channels));
          }
          if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) {
            Fail(ErrorKind::kShapeMismatch, where, "zero conv extent");
          }
          RequireParams(l, {s.out_channels, s.in_channels, s.kernel, s.kernel},
                        s.out_channels, where);
          channels = s.out_channels;
          conv_positions_.push_back(i);
          break;
        case LayerKind::kRelu:
          break;
        case LayerKind::kGap:
          if (pooled) Fail(ErrorKind::kShapeMismatch, where, "second gap");
          pooled = true;
          features = channels;
          break;
        case LayerKind::kDense:
          if (!pooled) Fail(ErrorKind::kShapeMismatch, where, "dense before gap");
          if (s.in_features != features) {
            Fail(ErrorKind::kShapeMismatch, where,
                 "in_features " + std::to_string(s.in_features) +
                     " != incoming " + std::to_string(features));
          }
          RequireParams(l, {s.out_features, s.in_features}, s.out_features, where);
          features = s.out_features;
          break;
        case LayerKind::kSigmoidHead:
          if (i + 1 != layers_.size()) {
            Fail(ErrorKind::kShapeMismatch, where, "sigmoid_head must be last");
          }
          if (!pooled || s.out_features != features || features == 0) {
            Fail(ErrorKind::kShapeMismatch, where,
                 "head width " + std::to_string(s.out_features) +
                     " != incoming " + std::to_string(features));
          }
          break;
        default:
          Fail(ErrorKind::kInvalidArgument, where, "unknown layer kind");
      }
    }
    if (layers_.back().spec.kind != LayerKind::kSigmoidHead) {
      Fail(ErrorKind::kShapeMismatch, "layers", "final layer must be sigmoid_head");
    }
    if (conv_positions_.empty()) {
      Fail(ErrorKind::kShapeMismatch, "layers", "network has no conv layer");
    }
  }

  static void RequireParams(const Layer& l, const Shape& weight_shape,
                            std::size_t bias_size, const std::string& where) {
    if (l.weight.shape() != weight_shape) {
      Fail(ErrorKind::kShapeMismatch, where,
           "weight shape " + ShapeString(l.weight.shape()) + " != " +
               ShapeString(weight_shape));
    }
    if (l.bias.shape() != Shape{bias_size}) {
      Fail(ErrorKind::kShapeMismatch, where,
           "bias shape " + ShapeString(l.bias.shape()));
    }
  }

  std::vector<Layer> layers_;
  std::vector<std::size_t> conv_positions_;
};

// conv(8) conv(16) conv(16,s2) conv(32) conv(32,s2), each 3x3 pad 1 + relu,
// then gap, dense(32 -> |Y|), sigmoid head.
inline std::vector<LayerSpec> DefaultArchitecture(std::size_t num_targets) {
  const auto y = static_cast<std::uint32_t>(num_targets);
  return {
      LayerSpec::Conv(8, 1, 3, 1, 1),   LayerSpec::Relu(),
      LayerSpec::Conv(16, 8, 3, 1, 1),  LayerSpec::Relu(),
      LayerSpec::Conv(16, 16, 3, 2, 1), LayerSpec::Relu(),
      LayerSpec::Conv(32, 16, 3, 1, 1), LayerSpec::Relu(),
      LayerSpec::Conv(32, 32, 3, 2, 1), LayerSpec::Relu(),
      LayerSpec::Gap(),                 LayerSpec::Dense(32, y),
      LayerSpec::SigmoidHead(y),
  };
}

inline Network BuildDefaultNetwork(std::size_t num_targets, std::uint64_t seed) {
  if (num_targets < 2) {
    Fail(ErrorKind::kInvalidArgument, "num_targets", "must be >= 2");
  }
  return Network::Build(DefaultArchitecture(num_targets), seed);
}

// Values recorded by a forward pass. values[0] is the input and values[i+1]
// the output of layer i; the sigmoid head's input is the logit tensor.
struct ActivationTape {
  std::vector<Tensor> values;
  std::vector<std::size_t> conv_positions;
  std::uint64_t fingerprint = 0;

  std::size_t num_conv_layers() const { return conv_positions.size(); }
  const Tensor& feature_map(std::size_t l) const {
    return values.at(conv_positions.at(l) + 1);
  }
  const Tensor& logits() const { return values[values.size() - 2]; }
  const Tensor& probs() const { return values.back(); }
};

// Zeroes one channel of a conv layer's feature map during forward.
struct ChannelAblation {
  std::size_t conv_layer = 0;
  std::size_t channel = 0;
};

struct ForwardResult {
  Tensor probs;   // [N, |Y|]
  Tensor logits;  // [N, |Y|]
  std::optional<ActivationTape> tape;
};

namespace detail {

inline Tensor DenseForward(const Tensor& x, const Layer& layer) {
  const std::size_t N = x.extent(0);
  const std::size_t in = layer.spec.in_features, out = layer.spec.out_features;
  if (x.size() != N * in) {
    Fail(ErrorKind::kShapeMismatch, "in_features", "dense input width mismatch");
  }
  Tensor y({N, out});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < out; ++o) {
      float acc = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i)
        acc += layer.weight[o * in + i] * x[n * in + i];
      y[n * out + o] = acc;
    }
  }
  return y;
}

}  // namespace detail

inline ForwardResult Forward(const Network& net, const Tensor& batch,
                             bool tape_wanted, CostCounters& counters,
                             std::optional<ChannelAblation> ablation = std::nullopt) {
  detail::RequireRank(batch, 4, "batch");
  if (batch.extent(1) != 1) {
    Fail(ErrorKind::kShapeMismatch, "channels",
         "expected single-channel input, got " + ShapeString(batch.shape()));
  }
  std::vector<Tensor> values;
  values.reserve(net.layers().size() + 1);
  values.push_back(batch);
  std::size_t conv_index = 0;
  for (const Layer& layer : net.layers()) {
    const Tensor& x = values.back();
    Tensor y;
    switch (layer.spec.kind) {
      case LayerKind::kConv:
        y = Conv2dForward(x, layer.weight, layer.bias.data(), layer.spec.stride,
                          layer.spec.pad);
        if (ablation && ablation->conv_layer == conv_index) {
          const std::size_t C = y.extent(1), Z = y.extent(2) * y.extent(3);
          if (ablation->channel >= C) {
            Fail(ErrorKind::kInvalidArgument, "channel", "ablation channel out of range");
          }
          for (std::size_t n = 0; n < y.extent(0); ++n) {
            float* p = y.raw() + (n * C + ablation->channel) * Z;
            std::fill(p, p + Z, 0.0f);
          }
        }
        ++conv_index;
        break;
      case LayerKind::kRelu: y = Relu(x); break;
      case LayerKind::kGap: y = ReduceGap(x).mean; break;
      case LayerKind::kDense: y = detail::DenseForward(x, layer); break;
      case LayerKind::kSigmoidHead: y = Sigmoid(x); break;
    }
    values.push_back(std::move(y));
  }
  ++counters.forward_passes;
  ForwardResult result;
  result.probs = values.back();
  result.logits = values[values.size() - 2];
  if (tape_wanted) {
    ActivationTape tape;
    tape.values = std::move(values);
    for (std::size_t l = 0; l < net.num_conv_layers(); ++l)
      tape.conv_positions.push_back(net.conv_position(l));
    tape.fingerprint = net.Fingerprint();
    result.tape = std::move(tape);
  }
  return result;
}

struct ParamGrads {
  std::vector<Tensor> weight;  // aligned with net.layers(); empty where paramless
  std::vector<Tensor> bias;
};

namespace detail {

inline void CheckTape(const Network& net, const ActivationTape& tape) {
  if (tape.values.size() != net.layers().size() + 1 ||
      tape.fingerprint != net.Fingerprint()) {
    Fail(ErrorKind::kStaleTape, "tape",
         "tape was recorded on different network parameters");
  }
}

// Reverse sweep from d(objective)/d(logits). Optionally collects parameter
// gradients and the gradient at every conv feature map.
inline ParamGrads BackwardPass(const Network& net, const ActivationTape& tape,
                               const Tensor& grad_logits, bool want_params,
                               std::vector<Tensor>* feature_grads) {
  const auto& layers = net.layers();
  ParamGrads grads;
  if (want_params) {
    grads.weight.resize(layers.size());
    grads.bias.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.empty()) continue;
      grads.weight[i] = Tensor(layers[i].weight.shape());
      grads.bias[i] = Tensor(layers[i].bias.shape());
    }
  }
  if (feature_grads) feature_grads->assign(net.num_conv_layers(), Tensor());

  Tensor g = grad_logits;
  std::size_t conv_index = net.num_conv_layers();
  for (std::size_t i = layers.size() - 1; i-- > 0;) {
    const Layer& layer = layers[i];
    const Tensor& x = tape.values[i];
    switch (layer.spec.kind) {
      case LayerKind::kConv: {
        --conv_index;
        if (feature_grads) (*feature_grads)[conv_index] = g;
        const bool need_input = i > 0;
        if (!need_input && !want_params) break;
        const ConvGeometry geo = detail::CheckConv(
            x, layer.weight, layer.bias.size(), layer.spec.stride, layer.spec.pad);
        Tensor gx = need_input ? Tensor(x.shape()) : Tensor();
        detail::Conv2dBackwardInto(
            geo, x, layer.weight, g, {need_input, want_params},
            need_input ? &gx : nullptr,
            want_params ? grads.weight[i].raw() : nullptr,
            want_params ? grads.bias[i].raw() : nullptr);
        g = std::move(gx);
        break;
      }
      case LayerKind::kRelu:
        g = ReluBackward(x, g);
        break;
      case LayerKind::kGap:
        g = GapBackward(g, x.shape());
        break;
      case LayerKind::kDense: {
        const std::size_t N = x.extent(0);
        const std::size_t in = layer.spec.in_features, out = layer.spec.out_features;
        if (want_params) {
          float* gw = grads.weight[i].raw();
          float* gb = grads.bias[i].raw();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t o = 0; o < out; ++o) {
              const float d = g[n * out + o];
              gb[o] += d;
              for (std::size_t k = 0; k < in; ++k) gw[o * in + k] += d * x[n * in + k];
            }
          }
        }
        Tensor gx({N, in});
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t k = 0; k < in; ++k) {
            float acc = 0.0f;
            for (std::size_t o = 0; o < out; ++o)
              acc += g[n * out + o] * layer.weight[o * in + k];
            gx[n * in + k] = acc;
          }
        }
        g = std::move(gx);
        break;
      }
      case LayerKind::kSigmoidHead:
        break;
    }
    if (i == 0) break;
  }
  return grads;
}

}  // namespace detail

// d(logit_target)/d(f_l) for every conv layer l, from one reverse sweep.
// Entry l has the shape of tape.feature_map(l).
inline std::vector<Tensor> GradWrtFeatureMaps(const Network& net,
                                              const ActivationTape& tape,
                                              std::size_t target,
                                              CostCounters& counters) {
  if (target >= net.num_targets()) {
    Fail(ErrorKind::kInvalidArgument, "target",
         "target " + std::to_string(target) + " out of range");
  }
  detail::CheckTape(net, tape);
  const std::size_t N = tape.values[0].extent(0);
  const std::size_t Y = net.num_targets();
  Tensor seed({N, Y});
  for (std::size_t n = 0; n < N; ++n) seed[n * Y + target] = 1.0f;
  std::vector<Tensor> feature_grads;
  detail::BackwardPass(net, tape, seed, /*want_params=*/false, &feature_grads);
  ++counters.backward_passes;
  return feature_grads;
}

// Numerically stable binary cross-entropy on a logit.
inline double BceWithLogit(float logit, float label) {
  const double z = logit;
  return std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  float lr = 0.05f;
  std::uint64_t seed = 1;
  // Rescales a step whose global gradient L2 norm exceeds this; 0 disables.
  float max_grad_norm = 10.0f;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct TrainOptions {
  // Heads that contribute to the loss; empty means all.
  std::vector<bool> active_heads;
  // Per conv layer, channels whose filter and bias are held fixed.
  std::vector<std::vector<std::size_t>> frozen_channels;
  std::vector<EpochStats>* log = nullptr;
};

// Plain minibatch SGD. The objective is the batch mean of each sample's
// binary cross-entropy summed over the active heads, so a head's gradient
// scale does not depend on how many heads are trained. Logged losses are per
// head.
inline Network Train(Network net, const Dataset& data, const TrainConfig& config,
                     CostCounters& counters, const TrainOptions& options = {}) {
  if (data.empty()) Fail(ErrorKind::kInvalidArgument, "dataset", "empty dataset");
  if (data.num_targets() != net.num_targets()) {
    Fail(ErrorKind::kShapeMismatch, "num_targets",
         "dataset and network disagree on |Y|");
  }
  if (config.batch_size == 0) Fail(ErrorKind::kInvalidArgument, "batch_size", "must be > 0");
  const std::size_t Y = net.num_targets();
  std::vector<bool> active = options.active_heads;
  if (active.empty()) active.assign(Y, true);
  const auto active_count =
      static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
  if (active.size() != Y || active_count == 0) {
    Fail(ErrorKind::kInvalidArgument, "active_heads", "need at least one active head");
  }

  // Per-layer bitmap of frozen output channels.
  std::vector<std::vector<bool>> frozen(net.layers().size());
  for (std::size_t l = 0; l < options.frozen_channels.size(); ++l) {
    if (options.frozen_channels[l].empty()) continue;
    auto& mask = frozen[net.conv_position(l)];
    mask.assign(net.conv_channels(l), false);
    for (std::size_t k : options.frozen_channels[l]) mask.at(k) = true;
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(config.seed);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Shuffle(std::span<std::size_t>(order), rng);
    double loss_sum = 0.0;
    std::size_t loss_terms = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const std::size_t N = idx.size();
      ForwardResult fwd = Forward(net, data.Batch(idx), true, counters);
      Tensor grad_logits({N, Y});
      const float scale = 1.0f / static_cast<float>(N);
      double batch_loss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const auto labels = data.labels(idx[n]);
        for (std::size_t t = 0; t < Y; ++t) {
          if (!active[t]) continue;
          const float z = fwd.logits[n * Y + t];
          const float y = labels[t] ? 1.0f : 0.0f;
          batch_loss += BceWithLogit(z, y);
          grad_logits[n * Y + t] = (fwd.probs[n * Y + t] - y) * scale;
        }
      }
      if (!std::isfinite(batch_loss)) {
        Fail(ErrorKind::kNumeric, "loss",
             "non-finite loss at epoch " + std::to_string(epoch) +
                 ", batch starting at " + std::to_string(start));
      }
      loss_sum += batch_loss;
      loss_terms += N * active_count;
      ParamGrads grads =
          detail::BackwardPass(net, *fwd.tape, grad_logits, true, nullptr);
      ++counters.backward_passes;

      float step = config.lr;
      if (config.max_grad_norm > 0.0f) {
        double sq = 0.0;
        for (std::size_t i = 0; i < grads.weight.size(); ++i) {
          for (float v : grads.weight[i].data()) sq += double(v) * v;
          for (float v : grads.bias[i].data()) sq += double(v) * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > config.max_grad_norm)
          step = static_cast<float>(config.lr * (config.max_grad_norm / norm));
      }
      for (std::size_t i = 0; i < net.layers().size(); ++i) {
        Layer& layer = net.mutable_layer(i);
        if (layer.weight.empty()) continue;
        const std::size_t per_channel = layer.weight.size() / layer.bias.size();
        const auto& mask = frozen[i];
        for (std::size_t c = 0; c < layer.bias.size(); ++c) {
          if (!mask.empty() && mask[c]) continue;
          float* w = layer.weight.raw() + c * per_channel;
          const float* gw = grads.weight[i].raw() + c * per_channel;
          for (std::size_t j = 0; j < per_channel; ++j) w[j] -= step * gw[j];
          layer.bias[c] -= step * grads.bias[i][c];
        }
      }
    }
    if (options.log) options.log->push_back({epoch, loss_sum / double(loss_terms)});
  }
  return net;
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void WriteTensor(ByteWriter& w, const Tensor& t) {
  w.U8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) w.U32(static_cast<std::uint32_t>(e));
  for (float v : t.data()) w.F32(v);
}

inline Tensor ReadTensor(ByteReader& r) {
  const std::uint8_t rank = r.U8("tensor rank");
  if (rank == 0) return {};
  if (rank > 4) Fail(ErrorKind::kInvalidArgument, "tensor rank", "rank > 4");
  Shape shape(rank);
  for (auto& e : shape) e = r.U32("tensor extent");
  for (auto e : shape) {
    if (e == 0) Fail(ErrorKind::kInvalidArgument, "tensor extent", "zero extent");
  }
  const std::size_t count = Tensor::Product(shape);
  r.Need(count * 4, "tensor payload");
  std::vector<float> data(count);
  for (float& v : data) v = r.F32("tensor payload");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

inline std::vector<std::uint8_t> SerializeNetwork(const Network& net) {
  ByteWriter w;
  w.Magic("TULM");
  w.U32(kCheckpointVersion);
  w.U32(static_cast<std::uint32_t>(net.num_targets()));
  w.U32(static_cast<std::uint32_t>(net.layers().size()));
  for (const Layer& layer : net.layers()) {
    w.U8(static_cast<std::uint8_t>(layer.spec.kind));
    for (std::uint32_t v : layer.spec.Ints()) w.U32(v);
    detail::WriteTensor(w, layer.weight);
    detail::WriteTensor(w, layer.bias);
  }
  return w.bytes();
}

// Either returns a fully validated network or throws; never a partial one.
inline Network DeserializeNetwork(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.ExpectMagic("TULM");
  const std::uint32_t version = r.U32("version");
  if (version != kCheckpointVersion) {
    Fail(ErrorKind::kVersionMismatch, "version",
         "checkpoint version " + std::to_string(version) + " unsupported");
  }
  const std::uint32_t num_targets = r.U32("num_targets");
  const std::uint32_t count = r.U32("layer_count");
  std::vector<Layer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t kind = r.U8("layer kind");
    if (kind > static_cast<std::uint8_t>(LayerKind::kSigmoidHead)) {
      Fail(ErrorKind::kInvalidArgument, "layer kind",
           "unknown kind " + std::to_string(kind));
    }
    const auto k = static_cast<LayerKind>(kind);
    std::vector<std::uint32_t> ints(LayerSpec::IntCount(k));
    for (auto& v : ints) v = r.U32("layer spec");
    Layer layer{LayerSpec::FromInts(k, ints), {}, {}};
    layer.weight = detail::ReadTensor(r);
    layer.bias = detail::ReadTensor(r);
    layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) {
    Fail(ErrorKind::kInvalidArgument, "checkpoint", "trailing bytes after last layer");
  }
  Network net(std::move(layers));
  if (net.num_targets() != num_targets) {
    Fail(ErrorKind::kShapeMismatch, "num_targets", "header disagrees with head width");
  }
  return net;
}

inline void SaveCheckpoint(const Network& net, const std::string& path) {
  WriteFileBytes(path, SerializeNetwork(net));
}

inline Network LoadCheckpoint(const std::string& path) {
  return DeserializeNetwork(ReadFileBytes(path));
}

}  // namespace tul

#endif  // TUL_NETWORK_HPP_
