#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "oce/error.hpp"
#include "oce/tensor.hpp"

namespace oce {

/// Procedural scene: identical textured ellipses on a noisy background.
/// Template geometry (radius, eccentricity, orientation) is drawn once per
/// scene, so all objects within one image are exact translated copies.
struct SceneSpec {
  std::size_t height = 252;
  std::size_t width = 252;
  std::size_t object_count = 24;
  double min_radius = 8.0;
  double max_radius = 14.0;
  double min_eccentricity = 0.0;
  double max_eccentricity = 0.6;
  double gradient_angle = 0.5;  // radians; fixed orientation of the linear intensity gradient
  double background_mean = 0.1;
  double background_std = 0.03;
  std::size_t min_gap = 2;  // pixels between neighbouring objects
  std::size_t max_attempts = 10000;
  std::uint64_t seed = 0;
};

struct ObjectTemplate {
  int half_extent = 0;  // template covers [-half, half]^2 around the center
  std::vector<float> intensity;  // row-major (2h+1)^2, 0 outside the object
  std::vector<std::uint8_t> inside;
  double radius = 0, eccentricity = 0, orientation = 0;

  int side() const { return 2 * half_extent + 1; }
};

struct SynthSample {
  Tensor<float> image;  // (1, H, W)
  LabelMask labels;     // (H, W)
  std::vector<Coord> centers;
  ObjectTemplate object;
};

/// Renders the textured ellipse: a radial ramp (bright center) multiplied by
/// a linear gradient along `gradient_angle`. Values lie in [0.37, 1].
inline ObjectTemplate render_template(double radius, double eccentricity, double orientation, double gradient_angle) {
  ObjectTemplate t;
  t.radius = radius;
  t.eccentricity = eccentricity;
  t.orientation = orientation;
  t.half_extent = static_cast<int>(std::ceil(radius));
  const double a = radius, b = radius * std::sqrt(1.0 - eccentricity * eccentricity);
  const int side = t.side();
  t.intensity.assign(static_cast<std::size_t>(side * side), 0.0f);
  t.inside.assign(static_cast<std::size_t>(side * side), 0);
  const double co = std::cos(orientation), so = std::sin(orientation);
  const double cg = std::cos(gradient_angle), sg = std::sin(gradient_angle);
  for (int dy = -t.half_extent; dy <= t.half_extent; ++dy) {
    for (int dx = -t.half_extent; dx <= t.half_extent; ++dx) {
      const double u = dx * co + dy * so, v = -dx * so + dy * co;
      const double rho2 = (u / a) * (u / a) + (v / b) * (v / b);
      if (rho2 > 1.0) continue;
      const double ramp = 1.0 - 0.6 * std::sqrt(rho2);
      const double gradient = 0.7 + 0.3 * (dx * cg + dy * sg) / a;
      const std::size_t idx = static_cast<std::size_t>((dy + t.half_extent) * side + dx + t.half_extent);
      t.intensity[idx] = static_cast<float>(0.25 + 0.75 * ramp * gradient);
      t.inside[idx] = 1;
    }
  }
  return t;
}

/// Generates one image with exact instance labels. Objects are placed
/// uniformly at integer centers, fully inside the canvas, with at least
/// `min_gap` pixels between bounding circles. Background pixels are
/// Gaussian noise; object pixels are noise-free.
inline SynthSample synth_generate(const SceneSpec& spec) {
  if (spec.min_radius <= 0 || spec.max_radius < spec.min_radius) throw PreconditionError("synth: bad radius range");
  if (spec.min_eccentricity < 0 || spec.max_eccentricity >= 1 || spec.max_eccentricity < spec.min_eccentricity) {
    throw PreconditionError("synth: bad eccentricity range");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double radius = spec.min_radius + (spec.max_radius - spec.min_radius) * unit(rng);
  const double ecc = spec.min_eccentricity + (spec.max_eccentricity - spec.min_eccentricity) * unit(rng);
  const double orientation = std::numbers::pi * unit(rng);

  SynthSample out;
  out.object = render_template(radius, ecc, orientation, spec.gradient_angle);
  const int half = out.object.half_extent;
  const int side = out.object.side();
  const int h = static_cast<int>(spec.height), w = static_cast<int>(spec.width);
  if (spec.object_count > 0 && (h < side || w < side)) throw DataError("synth: canvas smaller than one object");

  const double min_dist = 2.0 * radius + static_cast<double>(spec.min_gap);
  std::size_t attempts = 0;
  while (out.centers.size() < spec.object_count) {
    if (attempts++ >= spec.max_attempts) {
      throw DataError("synth: placed only " + std::to_string(out.centers.size()) + " of " +
                      std::to_string(spec.object_count) + " objects after " + std::to_string(spec.max_attempts) +
                      " attempts");
    }
    std::uniform_int_distribution<int> ry(half, h - 1 - half), rx(half, w - 1 - half);
    const Coord c{ry(rng), rx(rng)};
    bool clear = true;
    for (const Coord& o : out.centers) {
      const double dy = c.row - o.row, dx = c.col - o.col;
      if (dy * dy + dx * dx < min_dist * min_dist) {
        clear = false;
        break;
      }
    }
    if (clear) out.centers.push_back(c);
  }

  out.image = Tensor<float>({1, spec.height, spec.width});
  out.labels = LabelMask({spec.height, spec.width});
  std::normal_distribution<double> noise(spec.background_mean, spec.background_std);
  for (auto& v : out.image.storage()) v = static_cast<float>(noise(rng));
  for (std::size_t k = 0; k < out.centers.size(); ++k) {
    const Coord& c = out.centers[k];
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) {
        const std::size_t idx = static_cast<std::size_t>((dy + half) * side + dx + half);
        if (!out.object.inside[idx]) continue;
        const auto y = static_cast<std::size_t>(c.row + dy), x = static_cast<std::size_t>(c.col + dx);
        out.image.at(0, y, x) = out.object.intensity[idx];
        out.labels.at(y, x) = static_cast<std::int32_t>(k + 1);
      }
    }
  }
  return out;
}

}  // namespace oce
