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

#include "tul/explain.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <numeric>
#include <vector>

#include "test_util.hpp"

namespace tul {
namespace {

using testing::HashBytes;
using testing::Hex;

constexpr std::uint64_t kHeatmapPgmHash = 0xbf6d4018218f6e7aULL;

std::vector<std::size_t> Selected(const std::vector<bool>& mask) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (mask[k]) out.push_back(k);
  return out;
}

// conv -> relu -> conv -> [relu] -> gap -> dense -> head.
Network GapHeadNetwork(bool relu_after_last, std::uint64_t seed) {
  std::vector<LayerSpec> specs{LayerSpec::Conv(3, 1, 3, 1, 1), LayerSpec::Relu(),
                               LayerSpec::Conv(4, 3, 3, 2, 1)};
  if (relu_after_last) specs.push_back(LayerSpec::Relu());
  specs.push_back(LayerSpec::Gap());
  specs.push_back(LayerSpec::Dense(4, 3));
  specs.push_back(LayerSpec::SigmoidHead(3));
  return Network::Build(specs, seed);
}

TEST(SelectImportantTest, TopHalf) {
  const std::vector<float> a{0.9f, 0.1f, 0.5f, 0.3f};
  EXPECT_EQ(Selected(SelectImportant(a, 0.5)), (std::vector<std::size_t>{0, 2}));
}

TEST(SelectImportantTest, FloorGuardKeepsOne) {
  const std::vector<float> a{0.9f, 0.1f, 0.5f, 0.3f};
  EXPECT_EQ(Selected(SelectImportant(a, 0.1)), (std::vector<std::size_t>{0}));
}

TEST(SelectImportantTest, TiesGoToLowerIndex) {
  const std::vector<float> a{0.5f, 0.5f, 0.1f};
  EXPECT_EQ(Selected(SelectImportant(a, 1.0 / 3.0)), (std::vector<std::size_t>{0}));
}

TEST(SelectImportantTest, SignedVersusAbsolute) {
  const std::vector<float> a{0.2f, -0.9f, 0.1f};
  EXPECT_EQ(Selected(SelectImportant(a, 0.3)), (std::vector<std::size_t>{0}));
  EXPECT_EQ(Selected(SelectImportant(a, 0.3, true)), (std::vector<std::size_t>{1}));
}

TEST(SelectImportantTest, Errors) {
  EXPECT_THROW(SelectImportant(std::vector<float>{}, 0.5), Error);
  EXPECT_THROW(SelectImportant(std::vector<float>{1.0f}, 0.0), Error);
  EXPECT_THROW(SelectImportant(std::vector<float>{1.0f}, 1.5), Error);
}

TEST(SelectionCountTest, ExactProducts) {
  EXPECT_EQ(SelectionCount(0.1, 30), 3u);
  EXPECT_EQ(SelectionCount(0.1, 8), 1u);
  EXPECT_EQ(SelectionCount(0.1, 16), 2u);
  EXPECT_EQ(SelectionCount(0.3, 10), 3u);
  EXPECT_EQ(SelectionCount(1e-6, 32), 1u);
  EXPECT_EQ(SelectionCount(1.0, 32), 32u);
}

// Count, ranking, tie order and scale invariance against a sort-based oracle.
TEST(SelectImportantTest, RandomizedProperties) {
  SplitMix64 rng(41);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t O = 1 + rng.Below(40);
    std::vector<float> a(O);
    // Coarse values so ties are common.
    for (float& v : a) v = static_cast<float>(static_cast<int>(rng.Below(9)) - 4) * 0.25f;
    const double delta = 0.01 + 0.99 * double(rng.UniformFloat());
    const auto mask = SelectImportant(a, delta);
    const std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(delta * static_cast<double>(O) - 1e-9)));
    ASSERT_EQ(std::count(mask.begin(), mask.end(), true), static_cast<long>(std::min(k, O)));
    for (std::size_t i = 0; i < O; ++i) {
      for (std::size_t j = 0; j < O; ++j) {
        if (mask[i] && !mask[j]) {
          EXPECT_TRUE(a[i] > a[j] || (a[i] == a[j] && i < j));
        }
      }
    }
    std::vector<float> scaled(a);
    const float c = 0.1f + 5.0f * rng.UniformFloat();
    for (float& v : scaled) v *= c;
    EXPECT_EQ(SelectImportant(scaled, delta), mask);
  }
}

TEST(LastLayersTest, RangeAndErrors) {
  EXPECT_EQ(LastLayers(5, 1), (std::vector<std::size_t>{4}));
  EXPECT_EQ(LastLayers(5, 3), (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_EQ(LastLayers(5, 5), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_THROW(LastLayers(5, 0), Error);
  EXPECT_THROW(LastLayers(5, 6), Error);
}

TEST(ComputeAlphaTest, GapHeadReducesToDenseWeight) {
  SplitMix64 rng(3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = GapHeadNetwork(false, seed);
    const Tensor x = testing::RandomInput(2, 8, 8, rng);
    CostCounters c;
    const Layer& dense = net.layer(net.layers().size() - 2);
    const float Z = 16.0f;  // 4x4 after stride 2
    for (std::size_t t = 0; t < 3; ++t) {
      const ImportanceRecord rec = ComputeAlphaOnBatch(net, x, t, {1}, c);
      ASSERT_EQ(rec.layers[0].alpha.size(), 4u);
      std::vector<std::size_t> by_alpha(4), by_weight(4);
      std::iota(by_alpha.begin(), by_alpha.end(), std::size_t{0});
      std::iota(by_weight.begin(), by_weight.end(), std::size_t{0});
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(rec.layers[0].alpha[k], dense.weight[t * 4 + k] / Z, 1e-7f);
      }
      const auto& a = rec.layers[0].alpha;
      std::stable_sort(by_alpha.begin(), by_alpha.end(),
                       [&](auto i, auto j) { return a[i] > a[j]; });
      std::stable_sort(by_weight.begin(), by_weight.end(), [&](auto i, auto j) {
        return dense.weight[t * 4 + i] > dense.weight[t * 4 + j];
      });
      EXPECT_EQ(by_alpha, by_weight);
    }
  }
}

// With a ReLU after the last conv, each position contributes only when its
// pre-activation is positive.
TEST(ComputeAlphaTest, GapHeadWithReluCountsActivePositions) {
  SplitMix64 rng(4);
  const Network net = GapHeadNetwork(true, 9);
  const Tensor x = testing::RandomInput(1, 8, 8, rng);
  CostCounters c;
  const ImportanceRecord rec = ComputeAlphaOnBatch(net, x, 2, {1}, c);
  const Tensor f = Forward(net, x, true, c).tape->feature_map(1);
  const Layer& dense = net.layer(net.layers().size() - 2);
  for (std::size_t k = 0; k < 4; ++k) {
    std::size_t active = 0;
    for (std::size_t z = 0; z < 16; ++z) active += f[k * 16 + z] > 0.0f;
    EXPECT_NEAR(rec.layers[0].alpha[k], dense.weight[2 * 4 + k] * float(active) / 256.0f, 1e-7f);
  }
}

TEST(ComputeAlphaTest, DeadPathGivesZero) {
  Network net = GapHeadNetwork(false, 2);
  Layer& dense = net.mutable_layer(net.layers().size() - 2);
  dense.weight[1 * 4 + 3] = 0.0f;
  SplitMix64 rng(5);
  CostCounters c;
  const ImportanceRecord rec = ComputeAlphaOnBatch(net, testing::RandomInput(3, 8, 8, rng), 1, {1}, c);
  EXPECT_EQ(rec.layers[0].alpha[3], 0.0f);
  EXPECT_NE(rec.layers[0].alpha[2], 0.0f);
}

// Shifting channel k of f_l by s at every position moves the logit by
// s * Z * N * alpha_k as long as no downstream ReLU changes side. The step
// starts at 1e-2 and halves until the activation pattern is preserved on
// both sides; channels still crossing a kink at 1e-2/64 are skipped.
TEST(ComputeAlphaTest, MatchesUniformChannelShift) {
  SplitMix64 rng(77);
  std::size_t checked = 0, skipped = 0;
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t Y = 2 + rng.Below(3);
    const Network net = testing::RandomMicroNetwork(rng, Y);
    const std::size_t N = 1 + rng.Below(3);
    const Tensor x = testing::RandomInput(N, 8, 8, rng);
    const std::size_t t = rng.Below(Y);
    const auto layers = LastLayers(net.num_conv_layers(), net.num_conv_layers());
    CostCounters c;
    const ImportanceRecord rec = ComputeAlphaOnBatch(net, x, t, layers, c);
    const ForwardResult fwd = Forward(net, x, true, c);
    for (std::size_t l : layers) {
      const Tensor& f = fwd.tape->feature_map(l);
      const std::size_t C = f.extent(1), Z = f.extent(2) * f.extent(3);
      std::vector<bool> base, up_p, down_p;
      testing::TailLogits(net, l, f, &base);
      double diff2 = 0.0, ref2 = 0.0;
      for (std::size_t k = 0; k < C; ++k) {
        bool ok = false;
        double fd = 0.0;
        for (float s = 1e-2f; s >= 1e-2f / 64 && !ok; s *= 0.5f) {
          Tensor up = f, down = f;
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t z = 0; z < Z; ++z) {
              up[(n * C + k) * Z + z] += s;
              down[(n * C + k) * Z + z] -= s;
            }
          }
          const double yu = testing::TargetLogitSum(testing::TailLogits(net, l, up, &up_p), t, Y);
          const double yd =
              testing::TargetLogitSum(testing::TailLogits(net, l, down, &down_p), t, Y);
          ok = up_p == base && down_p == base;
          fd = (yu - yd) / (2.0 * s * double(Z) * double(N));
        }
        if (!ok) {
          ++skipped;
          continue;
        }
        ++checked;
        const double a = rec.at_layer(l).alpha[k];
        diff2 += (fd - a) * (fd - a);
        ref2 += a * a;
      }
      if (ref2 > 0.0) EXPECT_LE(std::sqrt(diff2 / ref2), 1e-2) << "trial " << trial << " layer " << l;
    }
  }
  EXPECT_GE(checked, 2 * skipped);
  EXPECT_GE(checked, 40u);
}

TEST(ComputeAlphaTest, BatchMeanEqualsMeanOfSingles) {
  SplitMix64 rng(12);
  const Network net = BuildDefaultNetwork(3, 4);
  const Tensor x = testing::RandomInput(4, 32, 32, rng);
  CostCounters c;
  const auto layers = LastLayers(5, 3);
  const ImportanceRecord batch = ComputeAlphaOnBatch(net, x, 1, layers, c);
  EXPECT_EQ(batch.n_ref, 4u);
  std::vector<ImportanceRecord> singles;
  for (std::size_t n = 0; n < 4; ++n) {
    Tensor one({1, 1, 32, 32});
    std::copy_n(x.raw() + n * 1024, 1024, one.raw());
    singles.push_back(ComputeAlphaOnBatch(net, one, 1, layers, c));
  }
  for (std::size_t j = 0; j < layers.size(); ++j) {
    for (std::size_t k = 0; k < batch.layers[j].alpha.size(); ++k) {
      float mean = 0.0f;
      for (const auto& s : singles) mean += s.layers[j].alpha[k];
      mean /= 4.0f;
      EXPECT_NEAR(batch.layers[j].alpha[k], mean, 1e-6f * (1.0f + std::fabs(mean)));
    }
  }
}

TEST(ComputeAlphaTest, CountsOneForwardAndOneBackward) {
  SplitMix64 rng(1);
  const Network net = BuildDefaultNetwork(3, 4);
  CostCounters c;
  ComputeAlphaOnBatch(net, testing::RandomInput(8, 32, 32, rng), 0, LastLayers(5, 2), c);
  EXPECT_EQ(c.forward_passes, 1u);
  EXPECT_EQ(c.backward_passes, 1u);
}

TEST(ComputeAlphaTest, RejectsInstancesWithoutTarget) {
  const Network net = BuildDefaultNetwork(3, 4);
  Dataset d(3);
  std::vector<float> img(1024, 0.5f);
  d.Add(img, std::vector<std::uint8_t>{1, 0, 0});
  d.Add(img, std::vector<std::uint8_t>{0, 1, 0});
  CostCounters c;
  EXPECT_NO_THROW(ComputeAlpha(net, d, {0}, 0, {4}, c));
  EXPECT_THROW(ComputeAlpha(net, d, {0, 1}, 0, {4}, c), Error);
  EXPECT_THROW(ComputeAlpha(net, d, {}, 0, {4}, c), Error);
  EXPECT_THROW(ComputeAlpha(net, d, {0}, 3, {4}, c), Error);
  EXPECT_THROW(ComputeAlpha(net, d, {0}, 0, {5}, c), Error);
}

TEST(CamTest, ZeroAlphaGivesZeroMap) {
  SplitMix64 rng(2);
  Tensor f({3, 4, 5});
  for (float& v : f.data()) v = rng.Uniform(-1.0f, 1.0f);
  const Tensor map = CamFromAlpha(std::vector<float>(3, 0.0f), f);
  EXPECT_EQ(map.shape(), (Shape{4, 5}));
  for (float v : map.data()) EXPECT_EQ(v, 0.0f);
}

TEST(CamTest, SingleChannelUnitAlphaIsRelu) {
  SplitMix64 rng(3);
  Tensor f({1, 1, 3, 3});
  for (float& v : f.data()) v = rng.Uniform(-1.0f, 1.0f);
  const Tensor map = CamFromAlpha(std::vector<float>{1.0f}, f);
  for (std::size_t z = 0; z < 9; ++z) EXPECT_EQ(map[z], std::max(f[z], 0.0f));
}

TEST(CamTest, ShapeErrors) {
  Tensor f({2, 3, 3});
  EXPECT_THROW(CamFromAlpha(std::vector<float>{1.0f}, f), Error);
  EXPECT_THROW(CamFromAlpha(std::vector<float>{1.0f}, Tensor({2, 2})), Error);
  const Network net = BuildDefaultNetwork(3, 1);
  CostCounters c;
  EXPECT_THROW(ComputeCam(net, Tensor({1, 1, 32, 32}), 0, 5, c), Error);
}

TEST(CamTest, MatchesAlphaWeightedFeatureMap) {
  SplitMix64 rng(8);
  const Network net = BuildDefaultNetwork(3, 2);
  const Tensor x = testing::RandomInput(1, 32, 32, rng);
  CostCounters c;
  for (std::size_t l = 0; l < 5; ++l) {
    const CamMap cam = ComputeCam(net, x, 1, l, c);
    const ImportanceRecord rec = ComputeAlphaOnBatch(net, x, 1, {l}, c);
    const Tensor f = Forward(net, x, true, c).tape->feature_map(l);
    const Tensor expected = CamFromAlpha(rec.layers[0].alpha, f);
    ASSERT_EQ(cam.map.shape(), expected.shape());
    for (std::size_t z = 0; z < expected.size(); ++z) {
      EXPECT_GE(cam.map[z], 0.0f);
      EXPECT_EQ(cam.map[z], expected[z]);
    }
  }
}

TEST(HeatmapTest, ConstantMapIsAllZero) {
  Tensor map({3, 3});
  map.Fill(0.7f);
  const auto px = HeatmapPixels(map, 6, 6);
  EXPECT_EQ(px, std::vector<std::uint8_t>(36, 0));
}

TEST(HeatmapTest, NearestNeighbourBlocks) {
  Tensor map({2, 2});
  map[1] = 1.0f;
  map[2] = 1.0f;
  const auto px = HeatmapPixels(map, 4, 4);
  const std::vector<std::uint8_t> expected{0,   0,   255, 255, 0,   0,   255, 255,
                                           255, 255, 0,   0,   255, 255, 0,   0};
  EXPECT_EQ(px, expected);
}

TEST(HeatmapTest, NonFiniteIsAnError) {
  Tensor map({2, 2});
  map[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(HeatmapPixels(map, 4, 4), Error);
}

TEST(HeatmapTest, PgmFileAndGoldenHash) {
  const Network net = BuildDefaultNetwork(3, 1);
  const Dataset d = Generate(GenerateConfig{8, 3, 7, 0.6});
  const std::size_t i = d.WithTarget(0).front();
  CostCounters c;
  const CamMap cam = ComputeCam(net, d.Batch(std::vector<std::size_t>{i}), 0, 2, c);
  const auto path = (std::filesystem::temp_directory_path() / "tul_explain_test.pgm").string();
  ExportHeatmap(cam, 32, 32, path);
  const auto bytes = ReadFileBytes(path);
  std::filesystem::remove(path);
  const std::string header = "P5\n32 32\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 1024);
  EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
  EXPECT_TRUE(std::any_of(bytes.begin() + header.size(), bytes.end(), [](auto b) { return b != 0; }));
  EXPECT_EQ(Hex(HashBytes(bytes)), Hex(kHeatmapPgmHash));
}

TEST(ImportanceJsonTest, RoundTripIsBitwise) {
  SplitMix64 rng(6);
  const Network net = BuildDefaultNetwork(4, 3);
  CostCounters c;
  ImportanceRecord rec = ComputeAlphaOnBatch(net, testing::RandomInput(2, 32, 32, rng), 3,
                                             LastLayers(5, 3), c);
  SelectMasks(rec, 0.25);
  const ImportanceRecord back = ImportanceFromJson(Json::parse(ImportanceToJson(rec).dump()));
  EXPECT_EQ(back, rec);
  EXPECT_EQ(back.layer_indices(), (std::vector<std::size_t>{2, 3, 4}));
  EXPECT_THROW(back.at_layer(0), Error);
}

TEST(ImportanceJsonTest, MalformedIsValidationError) {
  try {
    ImportanceFromJson(Json::parse(R"({"target": 0})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
  }
}

}  // namespace
}  // namespace tul
