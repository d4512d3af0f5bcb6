#pragma once

// Shared helpers for the test suites: finite-difference gradient checks and
// brute-force reference implementations used as oracles.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "oce/autograd.hpp"
#include "oce/segment.hpp"
#include "oce/tensor.hpp"

namespace oce::testkit {

template <typename T, typename Rng>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

/// Relative error ||a - n|| / max(||a||, ||n||) between analytic and numeric gradients.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  return scale > 0 ? std::sqrt(diff) / scale : 0.0;
}

/// Compares tape gradients of a scalar function of `inputs` against central
/// differences. `build(tape, vars)` must return a scalar Var.
template <typename T, typename Build>
double gradient_error(const std::vector<Tensor<T>>& inputs, Build build, T eps) {
  std::vector<double> analytic, numeric;
  {
    Tape<T> tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x, true));
    const Var out = build(tape, vars);
    tape.backward(out);
    for (const Var& v : vars) {
      auto g = tape.grad(v);
      const std::size_t n = tape.value(v).size();
      for (std::size_t i = 0; i < n; ++i) analytic.push_back(g.empty() ? 0.0 : static_cast<double>(g[i]));
    }
  }
  auto eval = [&](const std::vector<Tensor<T>>& xs) {
    Tape<T> tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x, true));
    return static_cast<double>(tape.value(build(tape, vars))[0]);
  };
  std::vector<Tensor<T>> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const T saved = xs[k][i];
      xs[k][i] = saved + eps;
      const double up = eval(xs);
      xs[k][i] = saved - eps;
      const double down = eval(xs);
      xs[k][i] = saved;
      numeric.push_back((up - down) / (2.0 * static_cast<double>(eps)));
    }
  }
  return relative_error(analytic, numeric);
}

// ---------------------------------------------------------------------------
// Random instance generators

// Values in +-[0.1, 1] with pairwise gaps of at least 2e-3 so finite
// differences never cross a ReLU kink or a max-pool tie.
template <typename T>
Tensor<T> separated_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const std::size_t n = t.size();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.1 + 0.9 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n, 2) - 1);
  std::shuffle(v.begin(), v.end(), rng);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<T>(sign(rng) ? v[i] : -v[i]);
  return t;
}

inline LabelMask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, int max_objects) {
  // Random axis-aligned rectangles painted in order; later ones overwrite.
  LabelMask m({h, w});
  std::uniform_int_distribution<int> count(0, max_objects), y(0, int(h) - 1), x(0, int(w) - 1), side(1, 6);
  const int n = count(rng);
  for (int k = 1; k <= n; ++k) {
    const int y0 = y(rng), x0 = x(rng), hh = side(rng), ww = side(rng);
    for (int yy = y0; yy < std::min<int>(h, y0 + hh); ++yy) {
      for (int xx = x0; xx < std::min<int>(w, x0 + ww); ++xx) m.at(yy, xx) = k;
    }
  }
  return m;
}

inline std::vector<Point2> planted_clusters(std::mt19937_64& rng, std::size_t clusters, std::size_t max_points) {
  std::uniform_real_distribution<double> center(0, 60), spread(0.5, 3.0);
  std::uniform_int_distribution<std::size_t> count(1, max_points / clusters);
  std::vector<Point2> pts;
  for (std::size_t c = 0; c < clusters; ++c) {
    const double cy = center(rng), cx = center(rng), s = spread(rng);
    std::normal_distribution<double> n(0, s);
    const std::size_t k = count(rng);
    for (std::size_t i = 0; i < k; ++i) pts.push_back({cy + n(rng), cx + n(rng)});
  }
  return pts;
}

/// Two Gaussian modes with varying separation, widths and class sizes.
inline std::vector<double> bimodal_sample(std::mt19937_64& rng, int trial) {
  std::uniform_real_distribution<double> u(0, 1);
  const double m0 = u(rng), m1 = m0 + 0.2 + u(rng), s0 = 0.02 + 0.2 * u(rng), s1 = 0.02 + 0.2 * u(rng);
  const std::size_t n0 = 20 + std::size_t(trial) * 7, n1 = 10 + (std::size_t(trial) * 13) % 300;
  std::normal_distribution<double> a(m0, s0), b(m1, s1);
  std::vector<double> v;
  for (std::size_t i = 0; i < n0; ++i) v.push_back(a(rng));
  for (std::size_t i = 0; i < n1; ++i) v.push_back(b(rng));
  return v;
}

// ---------------------------------------------------------------------------
// Brute-force references

using P2 = std::array<double, 2>;

struct RefMeanShift {
  std::vector<P2> modes;
  std::vector<int> labels;
};

/// Flat-kernel mean shift with bin seeding, O(N) per neighbourhood query.
inline RefMeanShift reference_mean_shift(const std::vector<P2>& pts, double bw) {
  std::vector<std::array<long long, 2>> seeds;
  for (const P2& p : pts) seeds.push_back({std::llround(p[0] / bw), std::llround(p[1] / bw)});
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  struct M {
    P2 at;
    std::size_t n;
  };
  std::vector<M> found;
  for (const auto& s : seeds) {
    P2 m{double(s[0]) * bw, double(s[1]) * bw};
    std::size_t support = 0;
    for (int it = 0; it < 300; ++it) {
      double sy = 0, sx = 0;
      std::size_t n = 0;
      for (const P2& p : pts) {
        const double dy = p[0] - m[0], dx = p[1] - m[1];
        if (dy * dy + dx * dx <= bw * bw) {
          sy += p[0];
          sx += p[1];
          ++n;
        }
      }
      if (n == 0) break;
      const P2 next{sy / double(n), sx / double(n)};
      const double shift = std::hypot(next[0] - m[0], next[1] - m[1]);
      m = next;
      support = n;
      if (shift < 1e-3 * bw) break;
    }
    if (support) found.push_back({m, support});
  }
  std::stable_sort(found.begin(), found.end(), [](const M& a, const M& b) {
    return a.n != b.n ? a.n > b.n : a.at < b.at;
  });
  RefMeanShift r;
  for (const M& f : found) {
    bool near = false;
    for (const P2& k : r.modes) near = near || std::hypot(f.at[0] - k[0], f.at[1] - k[1]) < bw;
    if (!near) r.modes.push_back(f.at);
  }
  for (const P2& p : pts) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < r.modes.size(); ++k) {
      const double d = (p[0] - r.modes[k][0]) * (p[0] - r.modes[k][0]) + (p[1] - r.modes[k][1]) * (p[1] - r.modes[k][1]);
      if (d < bd) {
        bd = d;
        best = int(k);
      }
    }
    r.labels.push_back(best);
  }
  return r;
}

/// Exhaustive search over the 255 inner boundaries of a 256-bin histogram on
/// [min, max]: the lower class is every value <= boundary, and the score is
/// total variance minus within-class variance. Returns the boundary index.
inline std::size_t reference_otsu(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double width = (*hi - *lo) / 256.0;
  auto stats = [](const std::vector<double>& xs) {
    double m = 0;
    for (double x : xs) m += x;
    m /= double(xs.size());
    double s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::pair{m, s};
  };
  const double total = stats(v).second;
  double best = -1;
  std::size_t arg = 1;
  std::vector<double> prev_low;
  for (std::size_t k = 1; k < 256; ++k) {
    const double t = *lo + double(k) * width;
    std::vector<double> a, b;
    for (double x : v) (x <= t ? a : b).push_back(x);
    if (a.empty() || b.empty()) continue;
    if (a.size() == prev_low.size()) continue;  // same partition as a lower boundary
    prev_low = a;
    const double score = total - stats(a).second - stats(b).second;
    if (score > best) {
      best = score;
      arg = k;
    }
  }
  return arg;
}

/// Largest one-to-one matching using only pairs with IoU >= t, by trying all
/// assignments (small instances only).
inline std::size_t reference_max_matching(const std::vector<std::vector<double>>& iou, double t) {
  const std::size_t g = iou.size(), p = g ? iou[0].size() : 0;
  std::vector<bool> used(p);
  std::size_t best = 0;
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t row, std::size_t count) {
    if (row == g) {
      best = std::max(best, count);
      return;
    }
    rec(row + 1, count);
    for (std::size_t j = 0; j < p; ++j) {
      if (!used[j] && iou[row][j] >= t) {
        used[j] = true;
        rec(row + 1, count + 1);
        used[j] = false;
      }
    }
  };
  rec(0, 0);
  return best;
}

/// Fresh empty directory under the system temp directory.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("oce_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oce::testkit
