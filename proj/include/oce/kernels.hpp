#pragma once

// Forward and backward kernels for the layers of the mini U-Net. These are
// pure functions over tensors; autograd.hpp wires them into a tape.

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "oce/error.hpp"
#include "oce/tensor.hpp"

namespace oce::kernels {

// Output pixels are processed in fixed-width column chunks so that every
// output element goes through the same GEMM path regardless of image size.
// The forward product is stored column-major, which keeps pixels on the
// GEMM's column axis where every column takes the same micro-kernel. This
// makes tiled and untiled inference bitwise identical.
inline constexpr std::size_t kConvChunk = 256;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::size_t channels, height, width, filters, kernel, out_height, out_width;
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t out_pixels() const { return out_height * out_width; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (input.ndim() != 3) throw PreconditionError("conv2d_valid: input must be (C,H,W), got " + shape_str(input.shape()));
  if (weights.ndim() != 4 || weights.dim(2) != weights.dim(3)) {
    throw PreconditionError("conv2d_valid: weights must be (F,C,k,k), got " + shape_str(weights.shape()));
  }
  if (weights.dim(1) != input.dim(0)) {
    throw PreconditionError("conv2d_valid: input has " + std::to_string(input.dim(0)) + " channels, weights expect " +
                            std::to_string(weights.dim(1)));
  }
  const std::size_t k = weights.dim(2);
  if (k != 1 && k != 3) throw PreconditionError("conv2d_valid: kernel size must be 1 or 3");
  if (bias.ndim() != 1 || bias.dim(0) != weights.dim(0)) {
    throw PreconditionError("conv2d_valid: bias must be (F), got " + shape_str(bias.shape()));
  }
  if (input.dim(1) < k || input.dim(2) < k) {
    throw PreconditionError("conv2d_valid: input " + shape_str(input.shape()) + " smaller than kernel");
  }
  return {input.dim(0), input.dim(1), input.dim(2), weights.dim(0), k, input.dim(1) - k + 1, input.dim(2) - k + 1};
}

namespace detail {

// Calls fn(j, offset, len) for each run of output pixels p0+j .. p0+j+len-1
// lying on one output row; offset is the flat input index of the first pixel.
template <typename Fn>
void for_each_row_run(const ConvGeometry& g, std::size_t p0, std::size_t count, Fn&& fn) {
  std::size_t j = 0;
  while (j < count) {
    const std::size_t p = p0 + j, oy = p / g.out_width, ox = p % g.out_width;
    const std::size_t len = std::min(count - j, g.out_width - ox);
    fn(j, oy * g.width + ox, len);
    j += len;
  }
}

// cols(row = (c*k + dy)*k + dx, j) = input[c, oy+dy, ox+dx] for output pixel p0+j.
template <typename T>
void im2col_chunk(const ConvGeometry& g, const T* input, std::size_t p0, std::size_t count, T* cols) {
  const std::size_t plane = g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t dy = 0; dy < g.kernel; ++dy) {
      for (std::size_t dx = 0; dx < g.kernel; ++dx) {
        T* row = cols + ((c * g.kernel + dy) * g.kernel + dx) * kConvChunk;
        const T* src = input + c * plane + dy * g.width + dx;
        for_each_row_run(g, p0, count, [&](std::size_t j, std::size_t off, std::size_t len) {
          std::copy(src + off, src + off + len, row + j);
        });
        std::fill(row + count, row + kConvChunk, T{});
      }
    }
  }
}

template <typename T>
void col2im_chunk(const ConvGeometry& g, const T* cols, std::size_t p0, std::size_t count, T* input_grad) {
  const std::size_t plane = g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t dy = 0; dy < g.kernel; ++dy) {
      for (std::size_t dx = 0; dx < g.kernel; ++dx) {
        const T* row = cols + ((c * g.kernel + dy) * g.kernel + dx) * kConvChunk;
        T* dst = input_grad + c * plane + dy * g.width + dx;
        for_each_row_run(g, p0, count, [&](std::size_t j, std::size_t off, std::size_t len) {
          for (std::size_t i = 0; i < len; ++i) dst[off + i] += row[j + i];
        });
      }
    }
  }
}

}  // namespace detail

/// Valid cross-correlation: (C,H,W) * (F,C,k,k) + (F) -> (F,H-k+1,W-k+1).
template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  const ConvGeometry g = conv_geometry(input, weights, bias);
  Tensor<T> out({g.filters, g.out_height, g.out_width});
  const std::size_t n = g.out_pixels();
  std::vector<T> cols(g.patch() * kConvChunk);
  ColMatrix<T> result(g.filters, kConvChunk);
  ConstMatrixMap<T> w(weights.data().data(), g.filters, g.patch());
  ConstMatrixMap<T> c(cols.data(), g.patch(), kConvChunk);
  for (std::size_t p0 = 0; p0 < n; p0 += kConvChunk) {
    const std::size_t count = std::min(kConvChunk, n - p0);
    detail::im2col_chunk(g, input.data().data(), p0, count, cols.data());
    result.noalias() = w * c;
    for (std::size_t f = 0; f < g.filters; ++f) {
      T* dst = out.data().data() + f * n + p0;
      const T b = bias[f];
      for (std::size_t j = 0; j < count; ++j) dst[j] = result(f, j) + b;
    }
  }
  return out;
}

/// Accumulates gradients of conv2d_valid. Any of the gradient spans may be
/// empty, in which case that gradient is skipped.
template <typename T>
void conv2d_valid_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                           std::span<const T> out_grad, std::span<T> input_grad, std::span<T> weight_grad,
                           std::span<T> bias_grad) {
  const ConvGeometry g = conv_geometry(input, weights, bias);
  const std::size_t n = g.out_pixels();
  std::vector<T> cols(g.patch() * kConvChunk);
  std::vector<T> dcols(input_grad.empty() ? 0 : g.patch() * kConvChunk);
  RowMatrix<T> dy(g.filters, kConvChunk);
  ConstMatrixMap<T> w(weights.data().data(), g.filters, g.patch());
  ConstMatrixMap<T> c(cols.data(), g.patch(), kConvChunk);
  const bool want_weights = !weight_grad.empty();
  for (std::size_t p0 = 0; p0 < n; p0 += kConvChunk) {
    const std::size_t count = std::min(kConvChunk, n - p0);
    dy.setZero();
    for (std::size_t f = 0; f < g.filters; ++f) {
      const T* src = out_grad.data() + f * n + p0;
      T sum{};
      for (std::size_t j = 0; j < count; ++j) {
        dy(f, j) = src[j];
        sum += src[j];
      }
      if (!bias_grad.empty()) bias_grad[f] += sum;
    }
    if (want_weights) {
      detail::im2col_chunk(g, input.data().data(), p0, count, cols.data());
      MatrixMap<T> dw(weight_grad.data(), g.filters, g.patch());
      dw.noalias() += dy * c.transpose();
    }
    if (!input_grad.empty()) {
      MatrixMap<T> dc(dcols.data(), g.patch(), kConvChunk);
      dc.noalias() = w.transpose() * dy;
      detail::col2im_chunk(g, dcols.data(), p0, count, input_grad.data());
    }
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{} ? input[i] : T{};
  return out;
}

/// Subgradient 0 at exactly 0.
template <typename T>
void relu_backward(const Tensor<T>& input, std::span<const T> out_grad, std::span<T> input_grad) {
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (input[i] > T{}) input_grad[i] += out_grad[i];
  }
}

/// 2x2 max pooling. `argmax`, when given, receives the flat input index of
/// each window's maximum (first in row-major order on ties).
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input, std::vector<std::size_t>* argmax = nullptr) {
  if (input.ndim() != 3) throw PreconditionError("maxpool2: input must be (C,H,W)");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw PreconditionError("maxpool2: spatial dims must be even, got " + shape_str(input.shape()));
  }
  Tensor<T> out({c, h / 2, w / 2});
  if (argmax) argmax->resize(out.size());
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h / 2; ++y) {
      for (std::size_t x = 0; x < w / 2; ++x, ++o) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& input) {
  if (input.ndim() != 3) throw PreconditionError("upsample_nearest2: input must be (C,H,W)");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) out.at(ch, y, x) = input.at(ch, y / 2, x / 2);
    }
  }
  return out;
}

template <typename T>
void upsample_nearest2_backward(const Shape& in_shape, std::span<const T> out_grad, std::span<T> input_grad) {
  const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t x = 0; x < 2 * w; ++x) {
        input_grad[(ch * h + y / 2) * w + x / 2] += out_grad[(ch * 2 * h + y) * 2 * w + x];
      }
    }
  }
}

struct CropWindow {
  std::size_t top, left;
};

inline CropWindow center_crop_offset(const Shape& from, const Shape& to) {
  if (from[1] < to[1] || from[2] < to[2]) {
    throw PreconditionError("crop_concat: skip " + shape_str(from) + " smaller than " + shape_str(to));
  }
  return {(from[1] - to[1]) / 2, (from[2] - to[2]) / 2};
}

/// Center-crops `skip` to the spatial size of `up` and stacks channels [skip, up].
template <typename T>
Tensor<T> crop_concat(const Tensor<T>& skip, const Tensor<T>& up) {
  if (skip.ndim() != 3 || up.ndim() != 3) throw PreconditionError("crop_concat: inputs must be (C,H,W)");
  const CropWindow win = center_crop_offset(skip.shape(), up.shape());
  const std::size_t c1 = skip.dim(0), c2 = up.dim(0), h = up.dim(1), w = up.dim(2);
  Tensor<T> out({c1 + c2, h, w});
  for (std::size_t c = 0; c < c1; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      const T* src = &skip.at(c, y + win.top, win.left);
      std::copy(src, src + w, &out.at(c, y, 0));
    }
  }
  std::copy(up.data().begin(), up.data().end(), out.data().begin() + c1 * h * w);
  return out;
}

template <typename T>
void crop_concat_backward(const Shape& skip_shape, const Shape& up_shape, std::span<const T> out_grad,
                          std::span<T> skip_grad, std::span<T> up_grad) {
  const CropWindow win = center_crop_offset(skip_shape, up_shape);
  const std::size_t c1 = skip_shape[0], h = up_shape[1], w = up_shape[2];
  const std::size_t sh = skip_shape[1], sw = skip_shape[2];
  if (!skip_grad.empty()) {
    for (std::size_t c = 0; c < c1; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          skip_grad[(c * sh + y + win.top) * sw + x + win.left] += out_grad[(c * h + y) * w + x];
        }
      }
    }
  }
  if (!up_grad.empty()) {
    const std::size_t offset = c1 * h * w;
    for (std::size_t i = 0; i < up_grad.size(); ++i) up_grad[i] += out_grad[offset + i];
  }
}

/// Extracts the 2-vectors field[:, row, col] into an (N,2) tensor.
template <typename T>
Tensor<T> gather_coords(const Tensor<T>& field, std::span<const Coord> coords) {
  if (field.ndim() != 3 || field.dim(0) != 2) {
    throw PreconditionError("gather_coords: field must be (2,H,W), got " + shape_str(field.shape()));
  }
  const std::size_t h = field.dim(1), w = field.dim(2);
  Tensor<T> out({coords.size(), 2});
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Coord& p = coords[i];
    if (p.row < 0 || p.col < 0 || static_cast<std::size_t>(p.row) >= h || static_cast<std::size_t>(p.col) >= w) {
      throw PreconditionError("gather_coords: coordinate (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                              ") outside field " + shape_str(field.shape()));
    }
    out[2 * i] = field.at(0, p.row, p.col);
    out[2 * i + 1] = field.at(1, p.row, p.col);
  }
  return out;
}

template <typename T>
void gather_coords_backward(const Shape& field_shape, std::span<const Coord> coords, std::span<const T> out_grad,
                            std::span<T> field_grad) {
  const std::size_t h = field_shape[1], w = field_shape[2];
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const std::size_t idx = static_cast<std::size_t>(coords[i].row) * w + static_cast<std::size_t>(coords[i].col);
    field_grad[idx] += out_grad[2 * i];
    field_grad[h * w + idx] += out_grad[2 * i + 1];
  }
}

}  // namespace oce::kernels
