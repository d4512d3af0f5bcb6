#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "oce/error.hpp"
#include "oce/tensor.hpp"

namespace oce {

/// Percentile (0..100) of already sorted values, interpolating linearly
/// between order statistics at position q/100 * (n - 1).
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw PreconditionError("percentile: empty input");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

struct NormalizationRange {
  double low_percentile = 1.0;
  double high_percentile = 99.8;
};

/// Per channel, maps the low percentile to 0 and the high percentile to 1.
/// No clipping. Accepts (C,H,W) or (H,W).
inline Tensor<float> normalize_percentile(const Tensor<float>& image, const NormalizationRange& range = {}) {
  const std::size_t channels = image.ndim() == 3 ? image.dim(0) : 1;
  const std::size_t plane = image.size() / channels;
  Tensor<float> out(image.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<double> values(image.data().begin() + c * plane, image.data().begin() + (c + 1) * plane);
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const double lo = percentile_sorted(sorted, range.low_percentile);
    const double hi = percentile_sorted(sorted, range.high_percentile);
    if (!(hi > lo)) {
      throw DataError("normalize_percentile: channel " + std::to_string(c) + " has no intensity spread");
    }
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = static_cast<float>((values[i] - lo) / (hi - lo));
    }
  }
  return out;
}

inline std::size_t scaled_extent(std::size_t extent, double factor) {
  if (!(factor > 0)) throw PreconditionError("rescale: factor must be positive");
  const double scaled = std::round(static_cast<double>(extent) * factor);
  if (scaled < 1) throw PreconditionError("rescale: output smaller than one pixel");
  return static_cast<std::size_t>(scaled);
}

/// Bilinear resampling of a (C,H,W) image to (C,out_h,out_w), pixel-center aligned.
inline Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  if (image.ndim() != 3) throw PreconditionError("resize_bilinear: image must be (C,H,W)");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h == 0 || out_w == 0) throw PreconditionError("resize_bilinear: output smaller than one pixel");
  if (out_h == h && out_w == w) return image;
  Tensor<float> out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = image.at(ch, y0, x0) * (1 - tx) + image.at(ch, y0, x1) * tx;
        const double bottom = image.at(ch, y1, x0) * (1 - tx) + image.at(ch, y1, x1) * tx;
        out.at(ch, y, x) = static_cast<float>(top * (1 - ty) + bottom * ty);
      }
    }
  }
  return out;
}

/// Nearest-neighbour resampling of a (H,W) label map.
inline LabelMask resize_nearest(const LabelMask& labels, std::size_t out_h, std::size_t out_w) {
  if (labels.ndim() != 2) throw PreconditionError("resize_nearest: labels must be (H,W)");
  if (out_h == 0 || out_w == 0) throw PreconditionError("resize_nearest: output smaller than one pixel");
  const std::size_t h = labels.dim(0), w = labels.dim(1);
  LabelMask out({out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto sy = std::min(h - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * h / out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto sx = std::min(w - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * w / out_w));
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

inline Tensor<float> rescale(const Tensor<float>& image, double factor) {
  return resize_bilinear(image, scaled_extent(image.dim(1), factor), scaled_extent(image.dim(2), factor));
}

inline LabelMask rescale(const LabelMask& labels, double factor) {
  return resize_nearest(labels, scaled_extent(labels.dim(0), factor), scaled_extent(labels.dim(1), factor));
}

}  // namespace oce
