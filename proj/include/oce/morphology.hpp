#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "oce/tensor.hpp"

namespace oce {

namespace detail {

// 1-D squared distance transform of a sampled function (lower envelope of
// parabolas), Felzenszwalb & Huttenlocher.
inline void edt_1d(const double* f, std::size_t n, std::size_t stride, double* out, std::vector<double>& z,
                   std::vector<std::size_t>& v) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  z.resize(n + 1);
  v.resize(n);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q * stride] < inf) {
      first = q;
      break;
    }
  }
  if (first == n) {
    for (std::size_t q = 0; q < n; ++q) out[q * stride] = inf;
    return;
  }
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = first + 1; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == inf) continue;
    auto intersect = [&](std::size_t p) {
      return ((fq + double(q) * double(q)) - (f[p * stride] + double(p) * double(p))) / (2.0 * (double(q) - double(p)));
    };
    double s = intersect(v[k]);
    while (s <= z[k]) {  // terminates: z[0] = -inf
      --k;
      s = intersect(v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double d = double(q) - double(v[k]);
    out[q * stride] = d * d + f[v[k] * stride];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// where `source` is non-zero (infinity when there is none).
template <typename M>
Tensor<double> squared_distance_to(const Tensor<M>& source) {
  const std::size_t h = source.dim(0), w = source.dim(1);
  constexpr double inf = std::numeric_limits<double>::infinity();
  Tensor<double> f({h, w});
  for (std::size_t i = 0; i < source.size(); ++i) f[i] = source[i] ? 0.0 : inf;
  Tensor<double> tmp({h, w});
  std::vector<double> z;
  std::vector<std::size_t> v;
  for (std::size_t x = 0; x < w; ++x) detail::edt_1d(&f[x], h, w, &tmp[x], z, v);
  for (std::size_t y = 0; y < h; ++y) detail::edt_1d(&tmp[y * w], w, 1, &f[y * w], z, v);
  return f;
}

/// Relabels ids to 1..N in order of first appearance in a raster scan,
/// dropping instances smaller than `min_size` pixels.
inline LabelMask relabel_consecutive(const LabelMask& labels, std::size_t min_size = 0) {
  std::map<std::int32_t, std::size_t> sizes;
  for (std::int32_t id : labels.data()) {
    if (id > 0) ++sizes[id];
  }
  std::map<std::int32_t, std::int32_t> remap;
  LabelMask out(labels.shape());
  std::int32_t next = 1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t id = labels[i];
    if (id <= 0 || sizes[id] < min_size) continue;
    auto [it, inserted] = remap.try_emplace(id, next);
    if (inserted) ++next;
    out[i] = it->second;
  }
  return out;
}

/// Splits every instance into its 4-connected components.
inline LabelMask split_connected(const LabelMask& labels) {
  const std::size_t h = labels.dim(0), w = labels.dim(1);
  LabelMask out(labels.shape());
  std::int32_t next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (labels[start] <= 0 || out[start] != 0) continue;
    const std::int32_t id = labels[start];
    out[start] = ++next;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t y = p / w, x = p % w;
      auto visit = [&](std::size_t q) {
        if (labels[q] == id && out[q] == 0) {
          out[q] = next;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
    }
  }
  return out;
}

/// Erodes each instance: removes pixels whose Euclidean distance to the
/// nearest pixel outside the instance (another label or background) is at
/// most `distance`. Pixels beyond the image border do not count as outside.
/// Instances that vanish are removed; surviving ids are kept.
inline LabelMask shrink_instances(const LabelMask& labels, double distance) {
  if (distance < 0) throw PreconditionError("shrink_instances: distance must be >= 0");
  if (distance == 0) return labels;
  const std::size_t h = labels.dim(0), w = labels.dim(1);
  struct Box {
    std::size_t y0 = std::numeric_limits<std::size_t>::max(), x0 = y0, y1 = 0, x1 = 0;
  };
  std::map<std::int32_t, Box> boxes;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::int32_t id = labels.at(y, x);
      if (id <= 0) continue;
      Box& b = boxes[id];
      b.y0 = std::min(b.y0, y);
      b.x0 = std::min(b.x0, x);
      b.y1 = std::max(b.y1, y);
      b.x1 = std::max(b.x1, x);
    }
  }
  LabelMask out = labels;
  const auto margin = static_cast<std::size_t>(std::ceil(distance)) + 1;
  const double limit = distance * distance;
  for (const auto& [id, b] : boxes) {
    const std::size_t y0 = b.y0 > margin ? b.y0 - margin : 0, x0 = b.x0 > margin ? b.x0 - margin : 0;
    const std::size_t y1 = std::min(h - 1, b.y1 + margin), x1 = std::min(w - 1, b.x1 + margin);
    BoolMask outside({y1 - y0 + 1, x1 - x0 + 1});
    for (std::size_t y = y0; y <= y1; ++y) {
      for (std::size_t x = x0; x <= x1; ++x) outside.at(y - y0, x - x0) = labels.at(y, x) != id;
    }
    const Tensor<double> d2 = squared_distance_to(outside);
    for (std::size_t y = b.y0; y <= b.y1; ++y) {
      for (std::size_t x = b.x0; x <= b.x1; ++x) {
        if (labels.at(y, x) == id && d2.at(y - y0, x - x0) <= limit) out.at(y, x) = 0;
      }
    }
  }
  return out;
}

}  // namespace oce
