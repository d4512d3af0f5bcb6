#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "oce/kernels.hpp"
#include "oce/tensor.hpp"

namespace oce {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are recorded in creation order and `backward`
/// visits them in exactly the reverse order. A tape belongs to one training
/// step and is not shared between threads.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var leaf(Tensor<T> value, bool requires_grad = true) {
    return record("leaf", {}, std::move(value), requires_grad, nullptr);
  }

  /// Records a node. `requires_grad` is forced on when any input requires it.
  Var record(std::string op, std::vector<std::size_t> inputs, Tensor<T> value, bool requires_grad,
             BackwardFn backward) {
    for (std::size_t in : inputs) requires_grad = requires_grad || nodes_.at(in).requires_grad;
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), {}, requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Node& node(Var v) const { return nodes_.at(v.id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node; empty if the node was not reached by backward.
  /// Buffers of non-leaf nodes are released once their backward has run.
  std::span<const T> grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Zero-initialized gradient buffer of `id`, or an empty span if the node
  /// does not take gradients.
  std::span<T> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return {};
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T{});
    return n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates. `visit`, if set, is called
  /// with each node id as its backward runs.
  void backward(Var loss, const std::function<void(std::size_t)>& visit = nullptr) {
    if (value(loss).size() != 1) throw PreconditionError("backward: loss must be a scalar");
    auto seed = grad_buffer(loss.id);
    if (seed.empty()) return;
    seed[0] = T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (visit) visit(id);
      if (!n.backward) continue;
      n.backward(*this, id);
      std::vector<T>().swap(nodes_[id].grad);
    }
  }

  std::span<const T> own_grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor<T>& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  std::vector<Node> nodes_;
};

namespace ops {

template <typename T>
Var conv2d_valid(Tape<T>& tape, Var input, Var weights, Var bias) {
  Tensor<T> out = kernels::conv2d_valid(tape.value(input), tape.value(weights), tape.value(bias));
  return tape.record("conv2d_valid", {input.id, weights.id, bias.id}, std::move(out), false,
                     [](Tape<T>& t, std::size_t self) {
                       const auto& in = t.node(Var{self}).inputs;
                       kernels::conv2d_valid_backward(t.value_of(in[0]), t.value_of(in[1]), t.value_of(in[2]),
                                                      t.own_grad(self), t.grad_buffer(in[0]), t.grad_buffer(in[1]),
                                                      t.grad_buffer(in[2]));
                     });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
  return tape.record("relu", {input.id}, kernels::relu(tape.value(input)), false, [](Tape<T>& t, std::size_t self) {
    const std::size_t in = t.node(Var{self}).inputs[0];
    kernels::relu_backward(t.value_of(in), t.own_grad(self), t.grad_buffer(in));
  });
}

template <typename T>
Var maxpool2(Tape<T>& tape, Var input) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor<T> out = kernels::maxpool2(tape.value(input), argmax.get());
  return tape.record("maxpool2", {input.id}, std::move(out), false, [argmax](Tape<T>& t, std::size_t self) {
    const std::size_t in = t.node(Var{self}).inputs[0];
    auto dst = t.grad_buffer(in);
    auto src = t.own_grad(self);
    for (std::size_t i = 0; i < argmax->size(); ++i) dst[(*argmax)[i]] += src[i];
  });
}

template <typename T>
Var upsample_nearest2(Tape<T>& tape, Var input) {
  return tape.record("upsample_nearest2", {input.id}, kernels::upsample_nearest2(tape.value(input)), false,
                     [](Tape<T>& t, std::size_t self) {
                       const std::size_t in = t.node(Var{self}).inputs[0];
                       kernels::upsample_nearest2_backward(t.value_of(in).shape(), t.own_grad(self),
                                                           t.grad_buffer(in));
                     });
}

template <typename T>
Var crop_concat(Tape<T>& tape, Var skip, Var up) {
  return tape.record("crop_concat", {skip.id, up.id}, kernels::crop_concat(tape.value(skip), tape.value(up)), false,
                     [](Tape<T>& t, std::size_t self) {
                       const auto& in = t.node(Var{self}).inputs;
                       kernels::crop_concat_backward(t.value_of(in[0]).shape(), t.value_of(in[1]).shape(),
                                                     t.own_grad(self), t.grad_buffer(in[0]), t.grad_buffer(in[1]));
                     });
}

template <typename T>
Var gather_coords(Tape<T>& tape, Var field, std::vector<Coord> coords) {
  Tensor<T> out = kernels::gather_coords(tape.value(field), std::span<const Coord>(coords));
  return tape.record("gather_coords", {field.id}, std::move(out), false,
                     [coords = std::move(coords)](Tape<T>& t, std::size_t self) {
                       const std::size_t in = t.node(Var{self}).inputs[0];
                       kernels::gather_coords_backward(t.value_of(in).shape(), std::span<const Coord>(coords),
                                                       t.own_grad(self), t.grad_buffer(in));
                     });
}

/// Dot product of `input` with a fixed tensor; used to turn any op output
/// into a scalar for gradient checks.
template <typename T>
Var project(Tape<T>& tape, Var input, Tensor<T> weights) {
  const Tensor<T>& x = tape.value(input);
  if (x.size() != weights.size()) throw PreconditionError("project: size mismatch");
  T sum{};
  for (std::size_t i = 0; i < x.size(); ++i) sum += x[i] * weights[i];
  return tape.record("project", {input.id}, Tensor<T>({1}, std::vector<T>{sum}), false,
                     [w = std::move(weights)](Tape<T>& t, std::size_t self) {
                       const std::size_t in = t.node(Var{self}).inputs[0];
                       auto dst = t.grad_buffer(in);
                       const T g = t.own_grad(self)[0];
                       for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g * w[i];
                     });
}

}  // namespace ops
}  // namespace oce
