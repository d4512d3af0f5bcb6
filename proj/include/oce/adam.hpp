#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "oce/net.hpp"
#include "oce/tensor.hpp"

namespace oce {

struct AdamState {
  double learning_rate = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor<float>> first_moment;
  std::vector<Tensor<float>> second_moment;
};

template <typename T>
AdamState make_adam_state(const ModelParams<T>& params, double learning_rate = 4e-5) {
  AdamState state;
  state.learning_rate = learning_rate;
  for (const auto& t : params.tensors) {
    state.first_moment.emplace_back(t.shape());
    state.second_moment.emplace_back(t.shape());
  }
  return state;
}

/// Piecewise-constant schedule: 4e-5, divided by 10 after epochs 20 and 30.
inline double lr_schedule(std::size_t epoch, double initial = 4e-5) {
  if (epoch < 20) return initial;
  if (epoch < 30) return initial / 10.0;
  return initial / 100.0;
}

/// One bias-corrected Adam update using the gradient buffers held by
/// `params`. Every parameter must carry a gradient.
template <typename T>
void adam_step(AdamState& state, ModelParams<T>& params) {
  if (state.first_moment.size() != params.tensors.size()) {
    throw PreconditionError("adam_step: optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    if (!params.tensors[i].has_grad()) {
      throw PreconditionError("adam_step: missing gradient for " + params.names.at(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i];
    auto g = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      const double update = state.learning_rate * (mk / correction1) / (std::sqrt(vk / correction2) + state.epsilon);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - update);
    }
  }
}

}  // namespace oce
