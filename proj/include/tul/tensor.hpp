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

// Dense row-major float tensors and the handful of kernels the CNN needs.
//
// All reductions run in a fixed sequential order so that repeated calls on
// identical inputs are bitwise identical. Convolution is cross-correlation
// (no kernel flip). The per-output accumulation order of Conv2dForward is
// `bias, then taps in (input channel, kernel row, kernel column) order`,
// which is the same order a naive six-loop implementation uses.

#ifndef TUL_TENSOR_HPP_
#define TUL_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tul/error.hpp"

namespace tul {

using Shape = std::vector<std::size_t>;

inline std::string ShapeString(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
    CheckShape(shape_);
    data_.assign(Product(shape_), fill);
  }

  Tensor(Shape shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    CheckShape(shape_);
    if (data_.size() != Product(shape_)) {
      Fail(ErrorKind::kShapeMismatch, "data",
           "payload has " + std::to_string(data_.size()) +
               " elements, shape " + ShapeString(shape_) + " needs " +
               std::to_string(Product(shape_)));
    }
  }

  bool empty() const { return shape_.empty(); }
  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Rank-4 indexing: ((n*C + c)*H + h)*W + w.
  std::size_t Offset(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[Offset(n, c, h, w)];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[Offset(n, c, h, w)];
  }

  void Fill(float value) { std::fill(data_.begin(), data_.end(), value); }

  static std::size_t Product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  static void CheckShape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
      Fail(ErrorKind::kShapeMismatch, "rank",
           "tensor rank must be 1..4, got " + std::to_string(shape.size()));
    }
    for (std::size_t axis = 0; axis < shape.size(); ++axis) {
      if (shape[axis] == 0) {
        Fail(ErrorKind::kShapeMismatch, "axis " + std::to_string(axis),
             "extents must be positive");
      }
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

// Compares shapes and raw bit patterns (distinguishes -0 from +0, NaN payloads).
inline bool BitwiseEqual(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 ||
          std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)) == 0);
}

namespace detail {

inline void RequireRank(const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    Fail(ErrorKind::kShapeMismatch, name,
         std::string(name) + " must be rank " + std::to_string(rank) +
             ", got " + ShapeString(t.shape()));
  }
}

inline void RequireSameShape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    Fail(ErrorKind::kShapeMismatch, "operands",
         "shapes differ: " + ShapeString(a.shape()) + " vs " +
             ShapeString(b.shape()));
  }
}

}  // namespace detail

// Output extent of a strided, padded window. Floor division, matching the
// usual deep-learning convention for strided convolutions.
inline std::size_t ConvOutputExtent(std::size_t in, std::size_t kernel,
                                    std::size_t stride, std::size_t pad,
                                    const char* axis = "height") {
  if (stride == 0) Fail(ErrorKind::kInvalidArgument, "stride", "must be > 0");
  if (kernel > in + 2 * pad) {
    Fail(ErrorKind::kShapeMismatch, axis,
         "kernel " + std::to_string(kernel) + " exceeds padded extent " +
             std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t out_c, kernel, stride, pad;
  std::size_t out_h, out_w;

  std::size_t taps() const { return in_c * kernel * kernel; }
  std::size_t pixels() const { return out_h * out_w; }
};

namespace detail {

inline ConvGeometry CheckConv(const Tensor& input, const Tensor& weights,
                              std::size_t bias_size, std::size_t stride,
                              std::size_t pad) {
  RequireRank(input, 4, "input");
  RequireRank(weights, 4, "weights");
  if (weights.extent(1) != input.extent(1)) {
    Fail(ErrorKind::kShapeMismatch, "in_channels",
         "weights expect " + std::to_string(weights.extent(1)) +
             " input channels, input has " + std::to_string(input.extent(1)));
  }
  if (weights.extent(2) != weights.extent(3)) {
    Fail(ErrorKind::kShapeMismatch, "kernel",
         "kernels must be square, got " + ShapeString(weights.shape()));
  }
  if (bias_size != weights.extent(0)) {
    Fail(ErrorKind::kShapeMismatch, "bias",
         "bias has " + std::to_string(bias_size) + " entries for " +
             std::to_string(weights.extent(0)) + " output channels");
  }
  ConvGeometry g{};
  g.batch = input.extent(0);
  g.in_c = input.extent(1);
  g.in_h = input.extent(2);
  g.in_w = input.extent(3);
  g.out_c = weights.extent(0);
  g.kernel = weights.extent(2);
  g.stride = stride;
  g.pad = pad;
  g.out_h = ConvOutputExtent(g.in_h, g.kernel, stride, pad, "height");
  g.out_w = ConvOutputExtent(g.in_w, g.kernel, stride, pad, "width");
  return g;
}

// Output columns [lo, hi) whose tap at kernel column kw lands inside the row.
inline std::pair<std::size_t, std::size_t> ValidColumns(const ConvGeometry& g,
                                                        std::size_t kw) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  const auto first = pad - static_cast<std::ptrdiff_t>(kw);  // ow*stride >= first
  std::ptrdiff_t lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  // ow*stride + kw - pad <= in_w - 1
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(g.in_w) - 1 + pad -
                              static_cast<std::ptrdiff_t>(kw);
  std::ptrdiff_t hi = last < 0 ? 0 : last / stride + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(g.out_w));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// cols[r * P + p], r = (i*K + kh)*K + kw, p = oh*OW + ow. Out-of-range taps are 0.
inline void Im2Col(const ConvGeometry& g, const float* image, float* cols) {
  const std::size_t P = g.pixels();
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t i = 0; i < g.in_c; ++i) {
    const float* plane = image + i * g.in_h * g.in_w;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        float* row = cols + ((i * g.kernel + kh) * g.kernel + kw) * P;
        const auto [lo, hi] = ValidColumns(g, kw);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
          float* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + ih * g.in_w + kw - pad;
          std::fill(dst, dst + lo, 0.0f);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, 0.0f);
        }
      }
    }
  }
}

// Scatter-add of Im2Col's adjoint, fixed (r, p) order.
inline void Col2ImAdd(const ConvGeometry& g, const float* cols, float* image) {
  const std::size_t P = g.pixels();
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t i = 0; i < g.in_c; ++i) {
    float* plane = image + i * g.in_h * g.in_w;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const float* row = cols + ((i * g.kernel + kh) * g.kernel + kw) * P;
        const auto [lo, hi] = ValidColumns(g, kw);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          float* dst = plane + ih * g.in_w + kw - pad;
          const float* src = row + oh * g.out_w;
          if (g.stride == 1) {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow * g.stride] += src[ow];
          }
        }
      }
    }
  }
}

// Sixteen floats handled as one value; lowered to whatever vector width the
// target has. Lanes never mix, so per-element arithmetic is unchanged.
typedef float Lanes16 __attribute__((vector_size(64)));
typedef float Lanes8 __attribute__((vector_size(32)));

inline Lanes16 LoadLanes(const float* p) {
  Lanes16 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void StoreLanes(float* p, Lanes16 v) { std::memcpy(p, &v, sizeof v); }

inline Lanes8 LoadLanes8(const float* p) {
  Lanes8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void StoreLanes8(float* p, Lanes8 v) { std::memcpy(p, &v, sizeof v); }

// C[m][p] += sum_k A[m][k] * B[k][p] with k ascending for every element.
// A is M x K, B is K x P, C is M x P, all row-major. Register tiles of
// 4 rows by 32 columns; the edges fall back to scalar loops with the same
// per-element order, so results do not depend on the tiling.
inline void GemmAccumulate(std::size_t M, std::size_t K, std::size_t P,
                           const float* A, const float* B, float* C) {
  std::size_t m = 0;
  for (; m + 4 <= M; m += 4) {
    const float* a0 = A + (m + 0) * K;
    const float* a1 = A + (m + 1) * K;
    const float* a2 = A + (m + 2) * K;
    const float* a3 = A + (m + 3) * K;
    float* c0 = C + (m + 0) * P;
    float* c1 = C + (m + 1) * P;
    float* c2 = C + (m + 2) * P;
    float* c3 = C + (m + 3) * P;
    std::size_t p = 0;
    for (; p + 32 <= P; p += 32) {
      Lanes16 x0 = LoadLanes(c0 + p), y0 = LoadLanes(c0 + p + 16);
      Lanes16 x1 = LoadLanes(c1 + p), y1 = LoadLanes(c1 + p + 16);
      Lanes16 x2 = LoadLanes(c2 + p), y2 = LoadLanes(c2 + p + 16);
      Lanes16 x3 = LoadLanes(c3 + p), y3 = LoadLanes(c3 + p + 16);
      for (std::size_t k = 0; k < K; ++k) {
        const Lanes16 b0 = LoadLanes(B + k * P + p);
        const Lanes16 b1 = LoadLanes(B + k * P + p + 16);
        x0 += a0[k] * b0; y0 += a0[k] * b1;
        x1 += a1[k] * b0; y1 += a1[k] * b1;
        x2 += a2[k] * b0; y2 += a2[k] * b1;
        x3 += a3[k] * b0; y3 += a3[k] * b1;
      }
      StoreLanes(c0 + p, x0); StoreLanes(c0 + p + 16, y0);
      StoreLanes(c1 + p, x1); StoreLanes(c1 + p + 16, y1);
      StoreLanes(c2 + p, x2); StoreLanes(c2 + p + 16, y2);
      StoreLanes(c3 + p, x3); StoreLanes(c3 + p + 16, y3);
    }
    for (; p + 16 <= P; p += 16) {
      Lanes16 x0 = LoadLanes(c0 + p), x1 = LoadLanes(c1 + p);
      Lanes16 x2 = LoadLanes(c2 + p), x3 = LoadLanes(c3 + p);
      for (std::size_t k = 0; k < K; ++k) {
        const Lanes16 b = LoadLanes(B + k * P + p);
        x0 += a0[k] * b;
        x1 += a1[k] * b;
        x2 += a2[k] * b;
        x3 += a3[k] * b;
      }
      StoreLanes(c0 + p, x0); StoreLanes(c1 + p, x1);
      StoreLanes(c2 + p, x2); StoreLanes(c3 + p, x3);
    }
    for (; p + 8 <= P; p += 8) {
      Lanes8 x0 = LoadLanes8(c0 + p), x1 = LoadLanes8(c1 + p);
      Lanes8 x2 = LoadLanes8(c2 + p), x3 = LoadLanes8(c3 + p);
      for (std::size_t k = 0; k < K; ++k) {
        const Lanes8 b = LoadLanes8(B + k * P + p);
        x0 += a0[k] * b;
        x1 += a1[k] * b;
        x2 += a2[k] * b;
        x3 += a3[k] * b;
      }
      StoreLanes8(c0 + p, x0); StoreLanes8(c1 + p, x1);
      StoreLanes8(c2 + p, x2); StoreLanes8(c3 + p, x3);
    }
    for (; p < P; ++p) {
      float s0 = c0[p], s1 = c1[p], s2 = c2[p], s3 = c3[p];
      for (std::size_t k = 0; k < K; ++k) {
        const float b = B[k * P + p];
        s0 += a0[k] * b;
        s1 += a1[k] * b;
        s2 += a2[k] * b;
        s3 += a3[k] * b;
      }
      c0[p] = s0; c1[p] = s1; c2[p] = s2; c3[p] = s3;
    }
  }
  for (; m < M; ++m) {
    const float* a = A + m * K;
    float* c = C + m * P;
    for (std::size_t k = 0; k < K; ++k) {
      const float* b = B + k * P;
      for (std::size_t p = 0; p < P; ++p) c[p] += a[k] * b[p];
    }
  }
}

// out[o][p] = bias[o] + sum_r w[o][r] * cols[r][p], r ascending.
inline void ConvGemm(const ConvGeometry& g, const float* weights,
                     const float* bias, const float* cols, float* out) {
  const std::size_t P = g.pixels();
  for (std::size_t o = 0; o < g.out_c; ++o) std::fill(out + o * P, out + (o + 1) * P, bias[o]);
  GemmAccumulate(g.out_c, g.taps(), P, weights, cols, out);
}

struct ConvBackwardRequest {
  bool input = true;
  bool weights = true;
};

// Accumulates into grad_weights / grad_bias (which must be pre-sized) and
// overwrites grad_input. Samples are visited in ascending order.
inline void Conv2dBackwardInto(const ConvGeometry& g, const Tensor& input,
                               const Tensor& weights, const Tensor& grad_output,
                               ConvBackwardRequest want, Tensor* grad_input,
                               float* grad_weights, float* grad_bias) {
  const std::size_t P = g.pixels();
  const std::size_t R = g.taps();
  const std::size_t in_plane = g.in_c * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_c * P;
  // Weight gradients are accumulated transposed, grad_w_t[r][o], so the
  // GEMM's vector dimension is the output channel count.
  std::vector<float> cols(want.weights ? R * P : 0);
  std::vector<float> gy_t(want.weights ? P * g.out_c : 0);
  std::vector<float> grad_w_t(want.weights ? R * g.out_c : 0);
  std::vector<float> dcols(want.input ? R * P : 0);
  std::vector<float> weights_t(want.input ? R * g.out_c : 0);
  if (want.input) {
    grad_input->Fill(0.0f);
    for (std::size_t o = 0; o < g.out_c; ++o)
      for (std::size_t r = 0; r < R; ++r) weights_t[r * g.out_c + o] = weights[o * R + r];
  }
  if (want.weights) {
    for (std::size_t o = 0; o < g.out_c; ++o)
      for (std::size_t r = 0; r < R; ++r) grad_w_t[r * g.out_c + o] = grad_weights[o * R + r];
  }

  for (std::size_t n = 0; n < g.batch; ++n) {
    const float* gy = grad_output.raw() + n * out_plane;
    if (want.weights) {
      Im2Col(g, input.raw() + n * in_plane, cols.data());
      for (std::size_t o = 0; o < g.out_c; ++o)
        for (std::size_t p = 0; p < P; ++p) gy_t[p * g.out_c + o] = gy[o * P + p];
      // grad_w[o][r] += sum_p cols[r][p] * gy[o][p], p ascending.
      GemmAccumulate(R, P, g.out_c, cols.data(), gy_t.data(), grad_w_t.data());
      for (std::size_t o = 0; o < g.out_c; ++o) {
        float gb = grad_bias[o];
        for (std::size_t p = 0; p < P; ++p) gb += gy[o * P + p];
        grad_bias[o] = gb;
      }
    }
    if (want.input) {
      std::fill(dcols.begin(), dcols.end(), 0.0f);
      GemmAccumulate(R, g.out_c, P, weights_t.data(), gy, dcols.data());
      Col2ImAdd(g, dcols.data(), grad_input->raw() + n * in_plane);
    }
  }
  if (want.weights) {
    for (std::size_t o = 0; o < g.out_c; ++o)
      for (std::size_t r = 0; r < R; ++r) grad_weights[o * R + r] = grad_w_t[r * g.out_c + o];
  }
}

}  // namespace detail

// Cross-correlation. input [N,I,H,W], weights [O,I,K,K], bias [O].
inline Tensor Conv2dForward(const Tensor& input, const Tensor& weights,
                            std::span<const float> bias, std::size_t stride,
                            std::size_t pad) {
  const ConvGeometry g =
      detail::CheckConv(input, weights, bias.size(), stride, pad);
  Tensor out({g.batch, g.out_c, g.out_h, g.out_w});
  std::vector<float> cols(g.taps() * g.pixels());
  const std::size_t in_plane = g.in_c * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_c * g.pixels();
  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::Im2Col(g, input.raw() + n * in_plane, cols.data());
    detail::ConvGemm(g, weights.raw(), bias.data(), cols.data(),
                     out.raw() + n * out_plane);
  }
  return out;
}

struct ConvGrads {
  Tensor input;
  Tensor weights;
  std::vector<float> bias;
};

// Exact adjoint of Conv2dForward. grad_input is the full correlation of
// grad_output with the flipped kernels.
inline ConvGrads Conv2dBackward(const Tensor& input, const Tensor& weights,
                                const Tensor& grad_output, std::size_t stride,
                                std::size_t pad) {
  const ConvGeometry g =
      detail::CheckConv(input, weights, weights.extent(0), stride, pad);
  const Shape expected{g.batch, g.out_c, g.out_h, g.out_w};
  if (grad_output.shape() != expected) {
    Fail(ErrorKind::kShapeMismatch, "grad_output",
         "expected " + ShapeString(expected) + ", got " +
             ShapeString(grad_output.shape()));
  }
  ConvGrads grads{Tensor(input.shape()), Tensor(weights.shape()),
                  std::vector<float>(g.out_c, 0.0f)};
  detail::Conv2dBackwardInto(g, input, weights, grad_output, {}, &grads.input,
                             grads.weights.raw(), grads.bias.data());
  return grads;
}

struct GapResult {
  Tensor mean;        // [N, C]
  std::size_t area;   // Z = H * W
};

inline GapResult ReduceGap(const Tensor& input) {
  detail::RequireRank(input, 4, "input");
  const std::size_t N = input.extent(0), C = input.extent(1);
  const std::size_t Z = input.extent(2) * input.extent(3);
  GapResult result{Tensor({N, C}), Z};
  const float* src = input.raw();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    float sum = 0.0f;
    for (std::size_t i = 0; i < Z; ++i) sum += src[nc * Z + i];
    result.mean[nc] = sum / static_cast<float>(Z);
  }
  return result;
}

// Adjoint of ReduceGap: spreads grad[n,c] / Z over the spatial plane.
inline Tensor GapBackward(const Tensor& grad, const Shape& input_shape) {
  Tensor out(input_shape);
  const std::size_t Z = input_shape[2] * input_shape[3];
  for (std::size_t nc = 0; nc < grad.size(); ++nc) {
    const float v = grad[nc] / static_cast<float>(Z);
    std::fill(out.raw() + nc * Z, out.raw() + (nc + 1) * Z, v);
  }
  return out;
}

inline Tensor Relu(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

// Gradient passes only where the pre-activation is strictly positive.
inline Tensor ReluBackward(const Tensor& pre_activation, const Tensor& grad) {
  detail::RequireSameShape(pre_activation, grad);
  Tensor out(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i)
    out[i] = pre_activation[i] > 0.0f ? grad[i] : 0.0f;
  return out;
}

inline float Sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

inline Tensor Sigmoid(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) v = Sigmoid(v);
  return out;
}

inline Tensor Add(const Tensor& a, const Tensor& b) {
  detail::RequireSameShape(a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor Mul(const Tensor& a, const Tensor& b) {
  detail::RequireSameShape(a, b);
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor Scale(const Tensor& a, float factor) {
  Tensor out = a;
  for (float& v : out.data()) v *= factor;
  return out;
}

}  // namespace tul

#endif  // TUL_TENSOR_HPP_
