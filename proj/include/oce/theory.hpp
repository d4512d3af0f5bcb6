#pragma once

// Monte-Carlo check of the expected-offset argument: in scenes of identical,
// randomly placed objects, offsets between occurrences of two patches that
// lie on different objects average to zero, so the mean over all occurrence
// pairs is proportional to the offset of the patches within one object.

#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/tensor.hpp"

namespace oce::theory {

/// Square template with a disc-shaped object; every object pixel holds a
/// distinct positive value and the background is 0.
struct Template {
  int size = 0;
  Tensor<std::int32_t> pixels;  // (size, size)
};

inline Template make_template(int diameter = 16) {
  if (diameter < 3) throw PreconditionError("theory: template diameter must be >= 3");
  Template t{diameter, Tensor<std::int32_t>({static_cast<std::size_t>(diameter), static_cast<std::size_t>(diameter)})};
  const double c = (diameter - 1) / 2.0, r = diameter / 2.0;
  std::int32_t next = 1;
  for (int y = 0; y < diameter; ++y) {
    for (int x = 0; x < diameter; ++x) {
      if ((y - c) * (y - c) + (x - c) * (x - c) <= r * r) t.pixels.at(y, x) = next++;
    }
  }
  return t;
}

enum class Boundary { Periodic, Bounded };

/// 3x3 patch identified by the template pixel at its center.
struct PatchRef {
  int row, col;
};

/// Object pixels in the middle row of the template at its left and right ends.
inline std::pair<PatchRef, PatchRef> extreme_patches(const Template& t) {
  const int row = t.size / 2;
  int left = -1, right = -1;
  for (int x = 0; x < t.size; ++x) {
    if (t.pixels.at(row, x) == 0) continue;
    if (left < 0) left = x;
    right = x;
  }
  return {{row, left}, {row, right}};
}

struct Scene {
  int extent = 0;
  Boundary boundary = Boundary::Periodic;
  Tensor<std::int32_t> pixels;    // (extent, extent) template values
  Tensor<std::int32_t> objects;   // (extent, extent) object index + 1, 0 = empty
  std::vector<Coord> origins;     // top-left template corner per object
};

/// Places `count` copies of the template at uniform random positions. Object
/// centers are at least size + 2 apart, so no 3x3 patch sees two objects. In
/// periodic mode positions and distances wrap around the canvas.
template <typename Rng>
Scene place_scene(const Template& t, int count, int extent, Rng& rng, Boundary boundary,
                  std::size_t max_attempts = 100000) {
  if (extent < t.size + 2) throw PreconditionError("place_scene: canvas smaller than template");
  Scene s{extent, boundary, Tensor<std::int32_t>({std::size_t(extent), std::size_t(extent)}),
          Tensor<std::int32_t>({std::size_t(extent), std::size_t(extent)}), {}};
  const int hi = boundary == Boundary::Periodic ? extent - 1 : extent - t.size;
  std::uniform_int_distribution<int> pos(0, hi);
  const double min_dist = t.size + 2;
  auto delta = [&](int a, int b) {
    int d = std::abs(a - b);
    if (boundary == Boundary::Periodic) d = std::min(d, extent - d);
    return static_cast<double>(d);
  };
  std::size_t attempts = 0;
  while (static_cast<int>(s.origins.size()) < count) {
    if (++attempts > max_attempts) {
      throw DataError("place_scene: could not place " + std::to_string(count) + " objects after " +
                      std::to_string(max_attempts) + " attempts");
    }
    const Coord c{pos(rng), pos(rng)};
    bool ok = true;
    for (const Coord& o : s.origins) {
      if (std::hypot(delta(c.row, o.row), delta(c.col, o.col)) < min_dist) {
        ok = false;
        break;
      }
    }
    if (ok) s.origins.push_back(c);
  }
  for (std::size_t k = 0; k < s.origins.size(); ++k) {
    for (int y = 0; y < t.size; ++y) {
      for (int x = 0; x < t.size; ++x) {
        const std::int32_t v = t.pixels.at(y, x);
        if (v == 0) continue;
        const auto py = static_cast<std::size_t>((s.origins[k].row + y) % extent);
        const auto px = static_cast<std::size_t>((s.origins[k].col + x) % extent);
        s.pixels.at(py, px) = v;
        s.objects.at(py, px) = static_cast<std::int32_t>(k + 1);
      }
    }
  }
  return s;
}

using PatchKey = std::vector<std::int32_t>;

inline PatchKey template_patch(const Template& t, PatchRef p) {
  if (p.row < 0 || p.col < 0 || p.row >= t.size || p.col >= t.size || t.pixels.at(p.row, p.col) == 0) {
    throw PreconditionError("theory: patch center must lie on the template object");
  }
  PatchKey key;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int y = p.row + dy, x = p.col + dx;
      const bool inside = y >= 0 && x >= 0 && y < t.size && x < t.size;
      key.push_back(inside ? t.pixels.at(y, x) : 0);
    }
  }
  return key;
}

inline PatchKey scene_patch(const Scene& s, int row, int col) {
  PatchKey key;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      int y = row + dy, x = col + dx;
      if (s.boundary == Boundary::Periodic) {
        y = (y + s.extent) % s.extent;
        x = (x + s.extent) % s.extent;
      } else if (y < 0 || x < 0 || y >= s.extent || x >= s.extent) {
        key.push_back(0);
        continue;
      }
      key.push_back(s.pixels.at(y, x));
    }
  }
  return key;
}

/// Locations of each queried patch appearance in a scene (the set of all
/// locations showing that patch).
struct OccurrenceIndex {
  std::map<PatchKey, std::vector<Coord>> locations;

  const std::vector<Coord>& at(const PatchKey& key) const {
    static const std::vector<Coord> none;
    auto it = locations.find(key);
    return it == locations.end() ? none : it->second;
  }
};

/// Scans the scene for the given patches. Only pixels whose value equals a
/// patch's center value are compared in full.
inline OccurrenceIndex index_occurrences(const Scene& s, const std::vector<PatchKey>& patches) {
  std::map<std::int32_t, std::vector<const PatchKey*>> by_center;
  for (const PatchKey& p : patches) by_center[p[4]].push_back(&p);
  OccurrenceIndex index;
  for (const PatchKey& p : patches) index.locations[p];
  for (int y = 0; y < s.extent; ++y) {
    for (int x = 0; x < s.extent; ++x) {
      auto it = by_center.find(s.pixels.at(y, x));
      if (it == by_center.end()) continue;
      const PatchKey here = scene_patch(s, y, x);
      for (const PatchKey* p : it->second) {
        if (here == *p) index.locations[*p].push_back({y, x});
      }
    }
  }
  return index;
}

/// Offset j - i; periodic offsets are mapped to (-L/2, L/2].
inline std::int64_t wrap_offset(std::int64_t d, const Scene& s) {
  if (s.boundary != Boundary::Periodic) return d;
  const std::int64_t L = s.extent;
  d %= L;
  if (d < 0) d += L;
  if (2 * d > L) d -= L;
  return d;
}

struct Vec2 {
  double y = 0, x = 0;
};

/// Exact integer sums of offsets over a set of occurrence pairs.
struct OffsetSum {
  std::int64_t y = 0, x = 0;
  std::int64_t count = 0;

  Vec2 mean() const {
    if (count == 0) return {};
    return {static_cast<double>(y) / static_cast<double>(count), static_cast<double>(x) / static_cast<double>(count)};
  }
  OffsetSum& operator+=(const OffsetSum& o) {
    y += o.y;
    x += o.x;
    count += o.count;
    return *this;
  }
};

/// Same-object and different-object offset sums of one scene.
struct SceneOffsets {
  OffsetSum same, cross;
  OffsetSum all() const {
    OffsetSum a = same;
    a += cross;
    return a;
  }
};

inline SceneOffsets scene_offsets(const Scene& s, const std::vector<Coord>& occ_a, const std::vector<Coord>& occ_b) {
  SceneOffsets out;
  for (const Coord& i : occ_a) {
    const std::int32_t obj = s.objects.at(i.row, i.col);
    for (const Coord& j : occ_b) {
      const std::int64_t dy = wrap_offset(j.row - i.row, s), dx = wrap_offset(j.col - i.col, s);
      OffsetSum& dst = s.objects.at(j.row, j.col) == obj ? out.same : out.cross;
      dst.y += dy;
      dst.x += dx;
      ++dst.count;
    }
  }
  return out;
}

/// Mean and standard error of per-scene means (scenes are independent,
/// pairs within a scene are not).
struct Estimate {
  Vec2 mean, se;
};

inline Estimate scene_estimate(const std::vector<Vec2>& per_scene) {
  Estimate e;
  const double n = static_cast<double>(per_scene.size());
  if (per_scene.empty()) return e;
  for (const Vec2& v : per_scene) {
    e.mean.y += v.y;
    e.mean.x += v.x;
  }
  e.mean.y /= n;
  e.mean.x /= n;
  if (per_scene.size() < 2) return e;
  double vy = 0, vx = 0;
  for (const Vec2& v : per_scene) {
    vy += (v.y - e.mean.y) * (v.y - e.mean.y);
    vx += (v.x - e.mean.x) * (v.x - e.mean.x);
  }
  e.se = {std::sqrt(vy / (n - 1) / n), std::sqrt(vx / (n - 1) / n)};
  return e;
}

struct Decomposition {
  OffsetSum same, cross, all;  // exact sums over all scenes
  Estimate same_est, cross_est, all_est;
  std::size_t scenes = 0;
};

/// Splits all occurrence pairs of patches a and b by shared object membership.
inline Decomposition decompose_offsets(const Template& t, PatchRef a, PatchRef b, const std::vector<Scene>& scenes) {
  const PatchKey ka = template_patch(t, a), kb = template_patch(t, b);
  Decomposition d;
  d.scenes = scenes.size();
  std::vector<Vec2> same, cross, all;
  for (const Scene& s : scenes) {
    const OccurrenceIndex idx = index_occurrences(s, {ka, kb});
    const auto& oa = idx.at(ka);
    const auto& ob = idx.at(kb);
    if (oa.empty() || ob.empty()) throw DataError("theory: patch does not occur in every scene");
    const SceneOffsets so = scene_offsets(s, oa, ob);
    d.same += so.same;
    d.cross += so.cross;
    d.all += so.all();
    if (so.same.count) same.push_back(so.same.mean());
    if (so.cross.count) cross.push_back(so.cross.mean());
    all.push_back(so.all().mean());
  }
  d.same_est = scene_estimate(same);
  d.cross_est = scene_estimate(cross);
  d.all_est = scene_estimate(all);
  return d;
}

/// Mean offset over all occurrence pairs with its standard error.
inline Estimate expected_offset_mc(const Template& t, PatchRef a, PatchRef b, const std::vector<Scene>& scenes) {
  return decompose_offsets(t, a, b, scenes).all_est;
}

/// Offset of patch b relative to patch a within one object.
inline Vec2 intra_offset(PatchRef a, PatchRef b) {
  return {static_cast<double>(b.row - a.row), static_cast<double>(b.col - a.col)};
}

/// Sample skewness of each component of the different-object offsets. Under
/// a distribution symmetric about zero both are near 0 (standard error
/// roughly sqrt(6 / pairs)).
inline Vec2 cross_offset_skew(const Template& t, PatchRef a, PatchRef b, const std::vector<Scene>& scenes) {
  const PatchKey ka = template_patch(t, a), kb = template_patch(t, b);
  std::vector<std::int64_t> ys, xs;
  for (const Scene& s : scenes) {
    const OccurrenceIndex idx = index_occurrences(s, {ka, kb});
    for (const Coord& i : idx.at(ka)) {
      for (const Coord& j : idx.at(kb)) {
        if (s.objects.at(i.row, i.col) == s.objects.at(j.row, j.col)) continue;
        ys.push_back(wrap_offset(j.row - i.row, s));
        xs.push_back(wrap_offset(j.col - i.col, s));
      }
    }
  }
  auto skew = [](const std::vector<std::int64_t>& v) {
    if (v.size() < 3) return 0.0;
    double m = 0;
    for (auto x : v) m += static_cast<double>(x);
    m /= static_cast<double>(v.size());
    double m2 = 0, m3 = 0;
    for (auto x : v) {
      const double d = static_cast<double>(x) - m;
      m2 += d * d;
      m3 += d * d * d;
    }
    m2 /= static_cast<double>(v.size());
    m3 /= static_cast<double>(v.size());
    return m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  };
  return {skew(ys), skew(xs)};
}

struct TheoryConfig {
  int scenes = 500;
  int objects = 30;
  int extent = 511;
  int template_size = 16;
  Boundary boundary = Boundary::Periodic;
  std::uint64_t seed = 0;
};

/// Generates the scenes of a run; scene k uses its own seed so scenes can be
/// produced independently.
inline std::vector<Scene> generate_scenes(const Template& t, const TheoryConfig& cfg) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.scenes));
  for (int k = 0; k < cfg.scenes; ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(k), 0x7e0au};
    std::mt19937_64 rng(seq);
    scenes.push_back(place_scene(t, cfg.objects, cfg.extent, rng, cfg.boundary));
  }
  return scenes;
}

inline const char* to_string(Boundary b) { return b == Boundary::Periodic ? "periodic" : "bounded"; }

/// One tab-separated row per patch pair; the header names every column.
inline void write_theory_header(std::ostream& os) {
  os << "pair\tboundary\tintra_y\tintra_x\tsame_y\tsame_x\tcross_y\tcross_x\tcross_se_y\tcross_se_x\tall_y\tall_x"
        "\tall_se_y\tall_se_x\texpected_y\texpected_x\tn_same\tn_cross\tskew_y\tskew_x\n";
}

inline void write_theory_row(std::ostream& os, const std::string& name, Boundary boundary, const Vec2& intra,
                             const Decomposition& d, const Vec2& skew) {
  const double n = static_cast<double>(d.all.count);
  const double ratio = n > 0 ? static_cast<double>(d.same.count) / n : 0.0;
  const Vec2 same = d.same.mean(), cross = d.cross.mean(), all = d.all.mean();
  os << name << '\t' << to_string(boundary) << '\t' << intra.y << '\t' << intra.x << '\t' << same.y << '\t'
     << same.x << '\t' << cross.y << '\t' << cross.x << '\t' << d.cross_est.se.y << '\t' << d.cross_est.se.x << '\t'
     << all.y << '\t' << all.x << '\t' << d.all_est.se.y << '\t' << d.all_est.se.x << '\t' << ratio * intra.y
     << '\t' << ratio * intra.x << '\t' << d.same.count << '\t' << d.cross.count << '\t' << skew.y << '\t' << skew.x
     << '\n';
}

}  // namespace oce::theory
