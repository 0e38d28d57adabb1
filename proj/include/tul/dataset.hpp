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

// Synthetic multi-target glyph images.
//
// Each 32x32 grayscale image carries one 8x8 glyph per present target on a
// faint noise background. Target t always uses glyph kind t, so a target is
// a shape the network has to find anywhere in the canvas. Glyphs sit in
// distinct cells of a 3x3 grid with a small random jitter, so they never
// overlap.

#ifndef TUL_DATASET_HPP_
#define TUL_DATASET_HPP_

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tul/binary_io.hpp"
#include "tul/error.hpp"
#include "tul/rng.hpp"
#include "tul/tensor.hpp"

namespace tul {

enum class GlyphKind : std::uint8_t {
  kSquare = 0,
  kCross = 1,
  kDiagStripes = 2,
  kRing = 3,
  kTriangleFill = 4,
};

inline constexpr std::size_t kGlyphSize = 8;
inline constexpr std::size_t kMaxTargets = 5;

using GlyphMask = std::array<std::array<bool, kGlyphSize>, kGlyphSize>;

inline GlyphMask MakeGlyphMask(GlyphKind kind) {
  GlyphMask m{};
  for (std::size_t r = 0; r < kGlyphSize; ++r) {
    for (std::size_t c = 0; c < kGlyphSize; ++c) {
      switch (kind) {
        case GlyphKind::kSquare:
          m[r][c] = r == 0 || c == 0 || r == 7 || c == 7;
          break;
        case GlyphKind::kCross:
          m[r][c] = r == 3 || r == 4 || c == 3 || c == 4;
          break;
        case GlyphKind::kDiagStripes:
          m[r][c] = (r + c) % 3 == 0;
          break;
        case GlyphKind::kRing: {
          const double dr = r - 3.5, dc = c - 3.5;
          const double d2 = dr * dr + dc * dc;
          m[r][c] = d2 >= 4.0 && d2 <= 13.0;
          break;
        }
        case GlyphKind::kTriangleFill:
          m[r][c] = c <= r;
          break;
      }
    }
  }
  return m;
}

struct GlyphSpec {
  int target = 0;
  GlyphKind glyph = GlyphKind::kSquare;
  int row = 0;  // top-left
  int col = 0;
  float intensity = 1.0f;
};

// Everything needed to re-render one sample.
struct SampleScene {
  std::uint64_t noise_seed = 0;
  std::vector<GlyphSpec> glyphs;
};

class Dataset {
 public:
  static constexpr std::size_t kHeight = 32;
  static constexpr std::size_t kWidth = 32;

  Dataset() = default;
  Dataset(std::size_t num_targets, std::size_t height = kHeight,
          std::size_t width = kWidth)
      : num_targets_(num_targets), height_(height), width_(width) {}

  std::size_t size() const { return labels_.size() / std::max<std::size_t>(num_targets_, 1); }
  bool empty() const { return size() == 0; }
  std::size_t num_targets() const { return num_targets_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixels() const { return height_ * width_; }

  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images_).subspan(i * pixels(), pixels());
  }
  std::span<const std::uint8_t> labels(std::size_t i) const {
    return std::span<const std::uint8_t>(labels_).subspan(i * num_targets_,
                                                          num_targets_);
  }
  bool has_target(std::size_t i, std::size_t t) const {
    return labels_[i * num_targets_ + t] != 0;
  }
  // Empty for datasets loaded from disk.
  const std::vector<SampleScene>& scenes() const { return scenes_; }

  void Add(std::span<const float> image, std::span<const std::uint8_t> labels,
           SampleScene scene = {}) {
    if (image.size() != pixels()) {
      Fail(ErrorKind::kShapeMismatch, "image", "wrong pixel count");
    }
    if (labels.size() != num_targets_) {
      Fail(ErrorKind::kShapeMismatch, "labels", "wrong label width");
    }
    images_.insert(images_.end(), image.begin(), image.end());
    labels_.insert(labels_.end(), labels.begin(), labels.end());
    if (!scene.glyphs.empty() || !scenes_.empty()) scenes_.push_back(std::move(scene));
  }

  Tensor Batch(std::span<const std::size_t> indices) const {
    Tensor out({indices.size(), 1, height_, width_});
    for (std::size_t j = 0; j < indices.size(); ++j) {
      auto src = image(indices[j]);
      std::copy(src.begin(), src.end(), out.raw() + j * pixels());
    }
    return out;
  }

  Dataset Subset(std::span<const std::size_t> indices) const {
    Dataset out(num_targets_, height_, width_);
    const bool keep_scenes = scenes_.size() == size();
    for (std::size_t i : indices)
      out.Add(image(i), labels(i), keep_scenes ? scenes_[i] : SampleScene{});
    return out;
  }

  // Indices of samples containing target t, ascending.
  std::vector<std::size_t> WithTarget(std::size_t t) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (has_target(i, t)) out.push_back(i);
    return out;
  }

  bool BitwiseEquals(const Dataset& other) const {
    return num_targets_ == other.num_targets_ && height_ == other.height_ &&
           width_ == other.width_ && labels_ == other.labels_ &&
           images_.size() == other.images_.size() &&
           std::memcmp(images_.data(), other.images_.data(),
                       images_.size() * sizeof(float)) == 0;
  }

 private:
  std::size_t num_targets_ = 0;
  std::size_t height_ = kHeight;
  std::size_t width_ = kWidth;
  std::vector<float> images_;
  std::vector<std::uint8_t> labels_;
  std::vector<SampleScene> scenes_;
};

// Renders a scene; glyphs of `omit_target` (if >= 0) are skipped.
inline std::vector<float> RenderScene(const SampleScene& scene,
                                      int omit_target = -1,
                                      std::size_t height = Dataset::kHeight,
                                      std::size_t width = Dataset::kWidth) {
  std::vector<float> image(height * width);
  SplitMix64 noise(scene.noise_seed);
  for (float& v : image) v = noise.Uniform(0.0f, 0.1f);
  for (const GlyphSpec& g : scene.glyphs) {
    if (g.target == omit_target) continue;
    const GlyphMask mask = MakeGlyphMask(g.glyph);
    for (std::size_t r = 0; r < kGlyphSize; ++r)
      for (std::size_t c = 0; c < kGlyphSize; ++c)
        if (mask[r][c]) image[(g.row + r) * width + g.col + c] = g.intensity;
  }
  return image;
}

struct GenerateConfig {
  std::size_t num_samples = 4096;
  std::size_t num_targets = 3;
  std::uint64_t seed = 7;
  double cooccurrence = 0.6;
};

// Partner target dragged in by the co-occurrence rule.
inline std::size_t PartnerTarget(std::size_t t, std::size_t num_targets) {
  return (t + 1) % num_targets;
}

inline Dataset Generate(const GenerateConfig& config) {
  if (config.num_targets < 2 || config.num_targets > kMaxTargets) {
    Fail(ErrorKind::kInvalidArgument, "num_targets", "must be in [2,5]");
  }
  if (config.num_samples < 1) {
    Fail(ErrorKind::kInvalidArgument, "num_samples", "must be >= 1");
  }
  if (!(config.cooccurrence >= 0.0 && config.cooccurrence <= 1.0)) {
    Fail(ErrorKind::kInvalidArgument, "cooccurrence", "must be in [0,1]");
  }
  const std::size_t Y = config.num_targets;
  constexpr std::size_t kGridCells = 9;
  constexpr int kCellStride = 10;
  constexpr int kMaxJitter = 3;  // offsets 0..2

  Dataset data(Y);
  SplitMix64 master(config.seed);
  std::vector<std::uint8_t> present(Y);
  for (std::size_t i = 0; i < config.num_samples; ++i) {
    SplitMix64 rng = master.Fork(i);
    SampleScene scene;
    scene.noise_seed = rng.Next();

    for (std::size_t t = 0; t < Y; ++t) present[t] = rng.Bernoulli(0.5);
    if (std::none_of(present.begin(), present.end(), [](auto v) { return v; })) {
      present[rng.Below(Y)] = 1;
    }
    const std::vector<std::uint8_t> drawn = present;
    for (std::size_t t = 0; t < Y; ++t) {
      if (drawn[t] && rng.Bernoulli(config.cooccurrence))
        present[PartnerTarget(t, Y)] = 1;
    }

    std::array<std::size_t, kGridCells> cells{};
    std::iota(cells.begin(), cells.end(), std::size_t{0});
    Shuffle(std::span<std::size_t>(cells), rng);
    std::size_t next_cell = 0;
    for (std::size_t t = 0; t < Y; ++t) {
      if (!present[t]) continue;
      const std::size_t cell = cells[next_cell++];
      GlyphSpec g;
      g.target = static_cast<int>(t);
      g.glyph = static_cast<GlyphKind>(t);
      g.row = 1 + kCellStride * static_cast<int>(cell / 3) +
              static_cast<int>(rng.Below(kMaxJitter));
      g.col = 1 + kCellStride * static_cast<int>(cell % 3) +
              static_cast<int>(rng.Below(kMaxJitter));
      g.intensity = rng.Uniform(0.5f, 1.0f);
      scene.glyphs.push_back(g);
    }
    const auto image = RenderScene(scene);
    data.Add(image, present, std::move(scene));
  }
  return data;
}

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

inline SplitResult Split(const Dataset& data, double train_fraction,
                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    Fail(ErrorKind::kInvalidArgument, "train_fraction", "must be in (0,1)");
  }
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(n));
  if (n_train == 0 || n_train == n) {
    Fail(ErrorKind::kInvalidArgument, "train_fraction",
         "split of " + std::to_string(n) + " samples leaves an empty side");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(seed);
  Shuffle(std::span<std::size_t>(order), rng);
  SplitResult out;
  out.train_indices.assign(order.begin(), order.begin() + n_train);
  out.test_indices.assign(order.begin() + n_train, order.end());
  out.train = data.Subset(out.train_indices);
  out.test = data.Subset(out.test_indices);
  return out;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> SerializeDataset(const Dataset& data) {
  ByteWriter w;
  w.Magic("TULD");
  w.U32(kDatasetVersion);
  w.U32(static_cast<std::uint32_t>(data.size()));
  w.U32(static_cast<std::uint32_t>(data.num_targets()));
  w.U32(static_cast<std::uint32_t>(data.height()));
  w.U32(static_cast<std::uint32_t>(data.width()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (float v : data.image(i)) w.F32(v);
    for (std::uint8_t l : data.labels(i)) w.U8(l);
  }
  return w.bytes();
}

inline Dataset DeserializeDataset(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.ExpectMagic("TULD");
  const std::uint32_t version = r.U32("version");
  if (version != kDatasetVersion) {
    Fail(ErrorKind::kVersionMismatch, "version",
         "dataset version " + std::to_string(version) + " unsupported");
  }
  const std::uint32_t n = r.U32("num_samples");
  const std::uint32_t y = r.U32("num_targets");
  const std::uint32_t h = r.U32("height");
  const std::uint32_t w = r.U32("width");
  if (y == 0 || h == 0 || w == 0) {
    Fail(ErrorKind::kInvalidArgument, "header", "zero dimension in header");
  }
  const std::size_t per_sample = std::size_t{h} * w * 4 + y;
  r.Need(per_sample * n, "samples");
  Dataset data(y, h, w);
  std::vector<float> image(std::size_t{h} * w);
  std::vector<std::uint8_t> labels(y);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (float& v : image) v = r.F32("pixel");
    for (auto& l : labels) l = r.U8("label");
    data.Add(image, labels);
  }
  return data;
}

inline void SaveDataset(const Dataset& data, const std::string& path) {
  WriteFileBytes(path, SerializeDataset(data));
}

inline Dataset LoadDataset(const std::string& path) {
  return DeserializeDataset(ReadFileBytes(path));
}

}  // namespace tul

#endif  // TUL_DATASET_HPP_
