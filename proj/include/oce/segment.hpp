#pragma once

// Dense prediction to instance masks: tiled inference, noise-variance
// foreground detection, Otsu thresholding, mean-shift clustering of the
// per-pixel center estimates, and shrinkage.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "oce/morphology.hpp"
#include "oce/net.hpp"
#include "oce/tensor.hpp"

namespace oce {

struct SegmenterConfig {
  std::size_t noise_rounds = 5;
  double noise_fraction = 0.01;
  double bandwidth = 8.0;
  double shrink_distance = 0.0;
  std::size_t min_instance_size = 10;
  bool connectivity_relabel = false;
  /// Largest input tile fed to the network (rounded down to even).
  std::size_t max_tile = 252;

  void validate() const {
    if (noise_rounds < 2) throw PreconditionError("segmenter: noise_rounds must be >= 2");
    if (!(noise_fraction > 0 && noise_fraction < 0.5)) throw PreconditionError("segmenter: noise_fraction must be in (0, 0.5)");
    if (!(bandwidth > 0)) throw PreconditionError("segmenter: bandwidth must be > 0");
    if (!(shrink_distance >= 0 && shrink_distance <= 6)) throw PreconditionError("segmenter: shrink_distance must be in [0, 6]");
    if (max_tile < 20) throw PreconditionError("segmenter: max_tile must be >= 20");
  }
};

namespace detail {

inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

// Output tile origins covering [0, extent) with tiles of `tile` pixels.
// Origins are even so every tile sees the same pooling phase.
inline std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile) {
  std::vector<std::size_t> out;
  for (std::size_t o = 0;; o += tile) {
    if (o + tile >= extent) {
      out.push_back(extent - tile);
      break;
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace detail

/// Pads by reflection: `top`/`left` rows/columns before and `bottom`/`right` after.
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& image, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<T> out({c, h + top + bottom, w + left + right});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < out.dim(1); ++y) {
      const std::size_t sy = detail::reflect_index(static_cast<std::ptrdiff_t>(y) - static_cast<std::ptrdiff_t>(top), h);
      for (std::size_t x = 0; x < out.dim(2); ++x) {
        const std::size_t sx = detail::reflect_index(static_cast<std::ptrdiff_t>(x) - static_cast<std::ptrdiff_t>(left), w);
        out.at(ch, y, x) = image.at(ch, sy, sx);
      }
    }
  }
  return out;
}

/// Dense OCE field (2,H,W) aligned with the input grid. The image is
/// reflect-padded by the network context and processed in overlapping tiles
/// of at most `max_tile` input pixels per side; each output pixel is computed
/// exactly once per tile and all tiles agree where they overlap.
template <typename T>
Tensor<T> predict_full(const ModelParams<T>& params, const Tensor<T>& image, std::size_t max_tile = 252) {
  if (image.ndim() != 3) throw PreconditionError("predict_full: image must be (C,H,W)");
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h < 20 || w < 20) throw PreconditionError("predict_full: image must be at least 20x20, got " + shape_str(image.shape()));
  if (max_tile < 20) throw PreconditionError("predict_full: max_tile must be >= 20");
  const std::size_t ctx = ModelConfig::kContext;
  const Tensor<T> padded = reflect_pad(image, ctx, ctx + h % 2, ctx, ctx + w % 2);
  const std::size_t out_h = h + h % 2, out_w = w + w % 2;
  const std::size_t tile = max_tile - max_tile % 2 - 2 * ctx;
  const std::size_t tile_h = std::min(tile, out_h), tile_w = std::min(tile, out_w);
  Tensor<T> field({params.config.out_channels, h, w});
  for (std::size_t oy : detail::tile_origins(out_h, tile_h)) {
    for (std::size_t ox : detail::tile_origins(out_w, tile_w)) {
      Tensor<T> patch({padded.dim(0), tile_h + 2 * ctx, tile_w + 2 * ctx});
      for (std::size_t ch = 0; ch < padded.dim(0); ++ch) {
        for (std::size_t y = 0; y < patch.dim(1); ++y) {
          const T* src = &padded.at(ch, oy + y, ox);
          std::copy(src, src + patch.dim(2), &patch.at(ch, y, 0));
        }
      }
      const Tensor<T> out = forward(params, patch);
      for (std::size_t ch = 0; ch < field.dim(0); ++ch) {
        for (std::size_t y = 0; y < tile_h && oy + y < h; ++y) {
          for (std::size_t x = 0; x < tile_w && ox + x < w; ++x) field.at(ch, oy + y, ox + x) = out.at(ch, y, x);
        }
      }
    }
  }
  return field;
}

/// Sets floor(p*H*W/2) random pixels to 0 and as many other pixels to 1,
/// across all channels.
template <typename T, typename Rng>
Tensor<T> salt_pepper(const Tensor<T>& image, double p, Rng& rng) {
  if (image.ndim() != 3) throw PreconditionError("salt_pepper: image must be (C,H,W)");
  if (!(p >= 0 && p < 1)) throw PreconditionError("salt_pepper: fraction must be in [0, 1)");
  const std::size_t plane = image.dim(1) * image.dim(2);
  const auto count = static_cast<std::size_t>(std::floor(p * static_cast<double>(plane) / 2.0));
  Tensor<T> out = image;
  if (count == 0) return out;
  std::vector<std::size_t> idx(plane);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < 2 * count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, plane - 1);
    std::swap(idx[i], idx[pick(rng)]);
    const T value = i < count ? T{0} : T{1};
    for (std::size_t ch = 0; ch < image.dim(0); ++ch) out[ch * plane + idx[i]] = value;
  }
  return out;
}

/// Per-pixel unbiased variance of the embeddings over `rounds` salt-and-pepper
/// corruptions, summed over embedding channels. Returns (H,W).
template <typename T>
Tensor<double> embedding_variance(const ModelParams<T>& params, const Tensor<T>& image, std::size_t rounds,
                                  double fraction, std::uint64_t seed, std::size_t max_tile = 252) {
  if (rounds < 2) throw PreconditionError("embedding_variance: need at least 2 rounds");
  std::mt19937_64 rng(seed);
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::size_t channels = params.config.out_channels;
  std::vector<double> mean(channels * h * w, 0.0), m2(channels * h * w, 0.0);
  for (std::size_t k = 0; k < rounds; ++k) {
    const Tensor<T> field = predict_full(params, salt_pepper(image, fraction, rng), max_tile);
    for (std::size_t i = 0; i < field.size(); ++i) {
      const double v = static_cast<double>(field[i]);
      const double delta = v - mean[i];
      mean[i] += delta / static_cast<double>(k + 1);
      m2[i] += delta * (v - mean[i]);
    }
  }
  Tensor<double> var({h, w});
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t p = 0; p < h * w; ++p) var[p] += m2[ch * h * w + p] / static_cast<double>(rounds - 1);
  }
  return var;
}

struct OtsuResult {
  double threshold;     // values <= threshold form the lower class
  std::size_t boundary;  // bin boundary index in 1..bins-1
};

/// Otsu's threshold on a `bins`-bin histogram spanning [min, max]. Bin j
/// holds values in (e_j, e_{j+1}] (the minimum falls in bin 0), so splitting
/// at boundary k puts exactly the values <= e_k in the lower class. Ties go to
/// the lowest boundary.
inline OtsuResult otsu(std::span<const double> values, std::size_t bins = 256) {
  if (values.empty()) throw DataError("otsu_threshold: no values");
  if (bins < 2) throw PreconditionError("otsu_threshold: need at least 2 bins");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(std::isfinite(lo) && std::isfinite(hi))) throw DataError("otsu_threshold: non-finite values");
  if (!(hi > lo)) throw DataError("otsu_threshold: constant input has no threshold");
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> edges(bins - 1);
  for (std::size_t k = 1; k < bins; ++k) edges[k - 1] = lo + static_cast<double>(k) * width;
  std::vector<double> count(bins, 0.0), total(bins, 0.0);
  for (double v : values) {
    const auto j = static_cast<std::size_t>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
    count[j] += 1;
    total[j] += v;
  }
  const double n = static_cast<double>(values.size());
  double all = 0;
  for (double t : total) all += t;
  double n0 = 0, s0 = 0, best = -1;
  std::size_t best_k = 1;
  for (std::size_t k = 1; k < bins; ++k) {
    n0 += count[k - 1];
    s0 += total[k - 1];
    const double n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const double diff = s0 / n0 - (all - s0) / n1;
    const double between = n0 * n1 * diff * diff;
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  return {edges[best_k - 1], best_k};
}

inline double otsu_threshold(std::span<const double> values, std::size_t bins = 256) { return otsu(values, bins).threshold; }

/// Foreground = low embedding variance. The Otsu threshold is taken on log
/// variance, where the stable and unstable populations form two comparable
/// modes; on the linear scale the heavy upper tail dominates the histogram.
inline BoolMask detect_foreground(const Tensor<double>& variance) {
  if (variance.size() == 0) throw DataError("detect_foreground: empty variance map");
  const double top = *std::max_element(variance.storage().begin(), variance.storage().end());
  const double floor = top > 0 ? top * 1e-12 : 1.0;
  std::vector<double> logs(variance.size());
  for (std::size_t i = 0; i < variance.size(); ++i) {
    if (!(variance[i] >= 0)) throw DataError("detect_foreground: variance must be non-negative and finite");
    logs[i] = std::log(variance[i] + floor);
  }
  const double t = otsu_threshold(logs);
  BoolMask mask(variance.shape());
  for (std::size_t i = 0; i < variance.size(); ++i) mask[i] = logs[i] <= t;
  return mask;
}

using Point2 = std::array<double, 2>;

struct MeanShiftResult {
  std::vector<Point2> modes;           // sorted by support, descending
  std::vector<std::size_t> support;    // points within bandwidth at convergence
  std::vector<std::int32_t> labels;    // index into modes for every point
};

struct MeanShiftOptions {
  std::size_t max_iterations = 300;
  double tolerance = 1e-3;  // relative to the bandwidth
};

namespace detail {

// Uniform grid with cell size = bandwidth; a disc query visits 3x3 cells.
class PointGrid {
 public:
  PointGrid(std::span<const Point2> points, double cell) : points_(points), cell_(cell) {
    for (std::size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i][0]), cell_of(points[i][1]))].push_back(i);
  }

  template <typename Fn>
  void within(const Point2& c, double radius, Fn&& fn) const {
    const double r2 = radius * radius;
    const std::int64_t cy = cell_of(c[0]), cx = cell_of(c[1]);
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        auto it = cells_.find(key(cy + dy, cx + dx));
        if (it == cells_.end()) continue;
        for (std::size_t i : it->second) {
          const double a = points_[i][0] - c[0], b = points_[i][1] - c[1];
          if (a * a + b * b <= r2) fn(i);
        }
      }
    }
  }

 private:
  std::int64_t cell_of(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }
  static std::uint64_t key(std::int64_t y, std::int64_t x) {
    return (static_cast<std::uint64_t>(y) << 32) ^ (static_cast<std::uint64_t>(x) & 0xffffffffu);
  }

  std::span<const Point2> points_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace detail

/// Flat-kernel mean shift with bin seeding. Seeds are the occupied cells of a
/// bandwidth-sized grid (round(p / bandwidth) * bandwidth). Each seed moves to
/// the mean of the points within the bandwidth until it moves less than
/// tolerance * bandwidth. Converged modes are visited by decreasing support
/// and a mode closer than the bandwidth to an already kept mode is dropped.
/// Every point is assigned to its nearest kept mode (lowest index on ties).
inline MeanShiftResult mean_shift(std::span<const Point2> points, double bandwidth, const MeanShiftOptions& opt = {}) {
  if (!(bandwidth > 0)) throw PreconditionError("mean_shift: bandwidth must be > 0");
  MeanShiftResult result;
  if (points.empty()) return result;

  std::vector<std::array<std::int64_t, 2>> bins;
  bins.reserve(points.size());
  for (const Point2& p : points) {
    bins.push_back({std::llround(p[0] / bandwidth), std::llround(p[1] / bandwidth)});
  }
  std::sort(bins.begin(), bins.end());
  bins.erase(std::unique(bins.begin(), bins.end()), bins.end());

  const detail::PointGrid grid(points, bandwidth);
  struct Mode {
    Point2 at;
    std::size_t support;
  };
  std::vector<Mode> converged;
  const double stop = opt.tolerance * bandwidth;
  std::vector<std::size_t> neighbours;
  for (const auto& bin : bins) {
    Point2 mean{static_cast<double>(bin[0]) * bandwidth, static_cast<double>(bin[1]) * bandwidth};
    std::size_t support = 0;
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
      // Sum in index order so the result does not depend on the grid layout.
      neighbours.clear();
      grid.within(mean, bandwidth, [&](std::size_t i) { neighbours.push_back(i); });
      std::sort(neighbours.begin(), neighbours.end());
      double sy = 0, sx = 0;
      for (std::size_t i : neighbours) {
        sy += points[i][0];
        sx += points[i][1];
      }
      const std::size_t n = neighbours.size();
      if (n == 0) break;
      const Point2 next{sy / static_cast<double>(n), sx / static_cast<double>(n)};
      const double shift = std::hypot(next[0] - mean[0], next[1] - mean[1]);
      mean = next;
      support = n;
      if (shift < stop) break;
    }
    if (support > 0) converged.push_back({mean, support});
  }

  std::stable_sort(converged.begin(), converged.end(), [](const Mode& a, const Mode& b) {
    if (a.support != b.support) return a.support > b.support;
    return a.at < b.at;
  });
  for (const Mode& m : converged) {
    bool keep = true;
    for (const Point2& k : result.modes) {
      if (std::hypot(m.at[0] - k[0], m.at[1] - k[1]) < bandwidth) {
        keep = false;
        break;
      }
    }
    if (keep) {
      result.modes.push_back(m.at);
      result.support.push_back(m.support);
    }
  }

  result.labels.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::int32_t arg = 0;
    for (std::size_t k = 0; k < result.modes.size(); ++k) {
      const double a = points[i][0] - result.modes[k][0], b = points[i][1] - result.modes[k][1];
      const double d = a * a + b * b;
      if (d < best) {
        best = d;
        arg = static_cast<std::int32_t>(k);
      }
    }
    result.labels[i] = arg;
  }
  return result;
}

/// Center estimates c_i = i - r_i of the foreground pixels, in raster order.
template <typename T>
std::vector<Point2> center_points(const Tensor<T>& field, const BoolMask& foreground) {
  if (field.ndim() != 3 || field.dim(0) != 2) throw PreconditionError("segment: field must be (2,H,W)");
  if (foreground.ndim() != 2 || foreground.dim(0) != field.dim(1) || foreground.dim(1) != field.dim(2)) {
    throw PreconditionError("segment: foreground " + shape_str(foreground.shape()) + " does not match field " +
                            shape_str(field.shape()));
  }
  const std::size_t h = field.dim(1), w = field.dim(2);
  std::vector<Point2> points;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!foreground.at(y, x)) continue;
      points.push_back({static_cast<double>(y) - static_cast<double>(field.at(0, y, x)),
                        static_cast<double>(x) - static_cast<double>(field.at(1, y, x))});
    }
  }
  return points;
}

/// Clusters the center estimates and returns one id per cluster (not yet
/// shrunk). Clusters smaller than `min_instance_size` are dropped; ids are
/// consecutive.
template <typename T>
LabelMask cluster_instances(const Tensor<T>& field, const BoolMask& foreground, const SegmenterConfig& cfg) {
  const std::vector<Point2> points = center_points(field, foreground);
  LabelMask labels({field.dim(1), field.dim(2)});
  if (points.empty()) return labels;
  const MeanShiftResult ms = mean_shift(points, cfg.bandwidth);
  std::size_t k = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (foreground[i]) labels[i] = ms.labels[k++] + 1;
  }
  if (cfg.connectivity_relabel) labels = split_connected(labels);
  return relabel_consecutive(labels, cfg.min_instance_size);
}

/// Shrinks by `distance` and relabels to consecutive ids.
inline LabelMask finish_instances(const LabelMask& clusters, double distance) {
  if (distance == 0) return clusters;
  return relabel_consecutive(shrink_instances(clusters, distance));
}

template <typename T>
LabelMask segment(const Tensor<T>& field, const BoolMask& foreground, const SegmenterConfig& cfg) {
  cfg.validate();
  return finish_instances(cluster_instances(field, foreground, cfg), cfg.shrink_distance);
}

/// Everything the segmenter needs from the network for one image.
struct Prediction {
  Tensor<float> field;        // (2,H,W)
  Tensor<double> variance;    // (H,W)
  BoolMask foreground;        // (H,W)
};

inline Prediction predict(const ModelParams<float>& params, const Tensor<float>& image, const SegmenterConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  Prediction p;
  p.field = predict_full(params, image, cfg.max_tile);
  p.variance = embedding_variance(params, image, cfg.noise_rounds, cfg.noise_fraction, seed, cfg.max_tile);
  p.foreground = detect_foreground(p.variance);
  return p;
}

/// Scores a set of predicted labelings against ground truth; higher is better.
using SegmentationMetric = std::function<double(const std::vector<LabelMask>& gt, const std::vector<LabelMask>& pred)>;

struct SweepEntry {
  double bandwidth, shrink, score;
};

struct BandwidthSearchResult {
  double bandwidth = 0, shrink = 0, score = 0;
  std::vector<SweepEntry> table;  // every evaluated (bandwidth, shrink) in search order
};

/// Grid search over bandwidth candidates x integer shrink distances in
/// [0, max_shrink]. The best score wins; ties go to the smaller bandwidth,
/// then the smaller shrink distance.
inline BandwidthSearchResult bandwidth_search(const std::vector<Prediction>& predictions,
                                              const std::vector<LabelMask>& gt, std::vector<double> candidates,
                                              const SegmentationMetric& metric, const SegmenterConfig& base,
                                              int max_shrink = 6) {
  if (predictions.empty()) throw DataError("bandwidth_search: empty validation set");
  if (predictions.size() != gt.size()) throw PreconditionError("bandwidth_search: prediction and GT counts differ");
  if (candidates.empty()) throw PreconditionError("bandwidth_search: no bandwidth candidates");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  BandwidthSearchResult best;
  best.score = -std::numeric_limits<double>::infinity();
  for (double bw : candidates) {
    SegmenterConfig cfg = base;
    cfg.bandwidth = bw;
    cfg.shrink_distance = 0;
    cfg.validate();
    std::vector<LabelMask> clusters;
    for (const Prediction& p : predictions) clusters.push_back(cluster_instances(p.field, p.foreground, cfg));
    for (int s = 0; s <= max_shrink; ++s) {
      std::vector<LabelMask> pred;
      for (const LabelMask& c : clusters) pred.push_back(finish_instances(c, s));
      const double score = metric(gt, pred);
      best.table.push_back({bw, static_cast<double>(s), score});
      if (score > best.score) {
        best.score = score;
        best.bandwidth = bw;
        best.shrink = s;
      }
    }
  }
  return best;
}

}  // namespace oce
