#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "oce/autograd.hpp"
#include "oce/tensor.hpp"

namespace oce {

struct LossConfig {
  double kappa = 10.0;          // pair radius, pixels
  double tau = 10.0;            // sigmoid temperature
  double lambda_reg = 1e-5;     // weight of the anchor-norm regularizer
  double anchor_density = 0.10; // fraction of output pixels used as anchors

  void validate() const {
    if (!(kappa > 0) || !(tau > 0) || !(lambda_reg >= 0) || !(anchor_density > 0 && anchor_density <= 1)) {
      throw PreconditionError("LossConfig: require kappa > 0, tau > 0, lambda_reg >= 0, 0 < density <= 1");
    }
  }
};

/// Anchor/partner coordinates on the output grid; partners[i] belongs to anchors[i].
struct PairSet {
  std::vector<Coord> anchors;
  std::vector<Coord> partners;
  std::size_t size() const noexcept { return anchors.size(); }
};

/// Distinct uniformly drawn anchors plus one in-bounds partner per anchor,
/// uniform over the kappa-disc around it (anchor excluded).
template <typename Rng>
PairSet sample_pairs(std::size_t height, std::size_t width, const LossConfig& cfg, Rng& rng) {
  cfg.validate();
  if (static_cast<double>(height) <= 2 * cfg.kappa || static_cast<double>(width) <= 2 * cfg.kappa) {
    throw PreconditionError("sample_pairs: field " + std::to_string(height) + "x" + std::to_string(width) +
                            " not larger than 2*kappa per side");
  }
  const std::size_t total = height * width;
  const auto count = static_cast<std::size_t>(std::floor(cfg.anchor_density * static_cast<double>(total)));

  // Partial Fisher-Yates over flat pixel indices.
  std::vector<std::uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0u);
  PairSet pairs;
  pairs.anchors.reserve(count);
  pairs.partners.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(order[i], order[pick(rng)]);
    pairs.anchors.push_back({static_cast<int>(order[i] / width), static_cast<int>(order[i] % width)});
  }

  const int reach = static_cast<int>(std::floor(cfg.kappa));
  const double kappa2 = cfg.kappa * cfg.kappa;
  std::uniform_int_distribution<int> offset(-reach, reach);
  for (const Coord& a : pairs.anchors) {
    for (;;) {
      const int dy = offset(rng), dx = offset(rng);
      if (dy == 0 && dx == 0) continue;
      if (static_cast<double>(dy * dy + dx * dx) > kappa2) continue;
      const int r = a.row + dy, c = a.col + dx;
      if (r < 0 || c < 0 || r >= static_cast<int>(height) || c >= static_cast<int>(width)) continue;
      pairs.partners.push_back({r, c});
      break;
    }
  }
  return pairs;
}

/// Sigmoid distance (1 + exp(-|delta|^2 / tau))^-1, in [0.5, 1).
template <typename T>
T sigma(T dy, T dx, T tau) {
  return T{1} / (T{1} + std::exp(-(dy * dy + dx * dx) / tau));
}

namespace ops {

/// Scalar loss over gathered anchor and partner embeddings (both (N,2)):
/// sum_k sigma(d_k - (a_k - b_k)) + lambda * sum_k |a_k|_2, with d_k the
/// spatial offset anchor - partner.
template <typename T>
Var pair_sigmoid_loss(Tape<T>& tape, Var anchor_emb, Var partner_emb, const PairSet& pairs, const LossConfig& cfg) {
  const Tensor<T>& a = tape.value(anchor_emb);
  const Tensor<T>& b = tape.value(partner_emb);
  const std::size_t n = pairs.size();
  const T tau = static_cast<T>(cfg.tau), lambda = static_cast<T>(cfg.lambda_reg);
  // Saved per pair: residual (2), sigma value.
  std::vector<T> saved(3 * n);
  T total{};
  for (std::size_t k = 0; k < n; ++k) {
    const T dy = static_cast<T>(pairs.anchors[k].row - pairs.partners[k].row) - (a[2 * k] - b[2 * k]);
    const T dx = static_cast<T>(pairs.anchors[k].col - pairs.partners[k].col) - (a[2 * k + 1] - b[2 * k + 1]);
    const T s = sigma(dy, dx, tau);
    saved[3 * k] = dy;
    saved[3 * k + 1] = dx;
    saved[3 * k + 2] = s;
    total += s + lambda * std::sqrt(a[2 * k] * a[2 * k] + a[2 * k + 1] * a[2 * k + 1]);
  }
  return tape.record("pair_sigmoid_loss", {anchor_emb.id, partner_emb.id}, Tensor<T>({1}, std::vector<T>{total}),
                     false, [saved = std::move(saved), tau, lambda](Tape<T>& t, std::size_t self) {
                       const auto& in = t.node(Var{self}).inputs;
                       const Tensor<T>& av = t.value_of(in[0]);
                       const T g = t.own_grad(self)[0];
                       auto da = t.grad_buffer(in[0]);
                       auto db = t.grad_buffer(in[1]);
                       const std::size_t count = saved.size() / 3;
                       for (std::size_t k = 0; k < count; ++k) {
                         const T s = saved[3 * k + 2];
                         // d sigma / d residual = sigma (1 - sigma) 2 residual / tau; residual = d - (a - b).
                         const T scale = g * s * (T{1} - s) * T{2} / tau;
                         const T gy = scale * saved[3 * k], gx = scale * saved[3 * k + 1];
                         T ry{}, rx{};
                         const T norm = std::sqrt(av[2 * k] * av[2 * k] + av[2 * k + 1] * av[2 * k + 1]);
                         if (norm > T{}) {
                           ry = g * lambda * av[2 * k] / norm;
                           rx = g * lambda * av[2 * k + 1] / norm;
                         }
                         if (!da.empty()) {
                           da[2 * k] += -gy + ry;
                           da[2 * k + 1] += -gx + rx;
                         }
                         if (!db.empty()) {
                           db[2 * k] += gy;
                           db[2 * k + 1] += gx;
                         }
                       }
                     });
}

}  // namespace ops

/// Records the full unsupervised loss for `field` (2,H,W) on the tape.
template <typename T>
Var oce_loss(Tape<T>& tape, Var field, const PairSet& pairs, const LossConfig& cfg) {
  Var a = ops::gather_coords(tape, field, pairs.anchors);
  Var b = ops::gather_coords(tape, field, pairs.partners);
  return ops::pair_sigmoid_loss(tape, a, b, pairs, cfg);
}

template <typename T>
struct LossEvaluation {
  T value{};
  Tensor<T> gradient;
};

/// Loss value and its gradient with respect to a standalone field.
template <typename T>
LossEvaluation<T> evaluate_oce_loss(const Tensor<T>& field, const PairSet& pairs, const LossConfig& cfg) {
  Tape<T> tape;
  Var f = tape.leaf(field, true);
  Var loss = oce_loss(tape, f, pairs, cfg);
  tape.backward(loss);
  LossEvaluation<T> out{tape.value(loss)[0], Tensor<T>(field.shape())};
  auto g = tape.grad(f);
  std::copy(g.begin(), g.end(), out.gradient.storage().begin());
  return out;
}

}  // namespace oce
