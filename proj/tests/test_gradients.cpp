#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oce/autograd.hpp"
#include "oce/loss.hpp"
#include "oce/net.hpp"
#include "support.hpp"

using namespace oce;

namespace {

constexpr int kInstances = 20;

template <typename T>
struct Precision;
template <>
struct Precision<double> {
  static constexpr double eps = 1e-4, tol = 1e-4;
};
template <>
struct Precision<float> {
  static constexpr float eps = 1e-2f;
  static constexpr double tol = 1e-2;
};

template <typename T>
class Gradients : public ::testing::Test {};
using Precisions = ::testing::Types<double, float>;
TYPED_TEST_SUITE(Gradients, Precisions);

}  // namespace

TYPED_TEST(Gradients, Conv2d) {
  using T = TypeParam;
  std::mt19937_64 rng(100);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t k = i % 2 ? 1 : 3, c = 1 + i % 3, f = 1 + (i / 3) % 3;
    const auto x = testkit::random_tensor<T>({c, 6, 6}, rng);
    const auto w = testkit::random_tensor<T>({f, c, k, k}, rng);
    const auto b = testkit::random_tensor<T>({f}, rng);
    const auto proj = testkit::random_tensor<T>({f, 7 - k, 7 - k}, rng);
    const double err = testkit::gradient_error<T>(
        {x, w, b},
        [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::conv2d_valid(t, v[0], v[1], v[2]), proj); },
        Precision<T>::eps);
    EXPECT_LT(err, Precision<T>::tol) << "instance " << i;
  }
}

TYPED_TEST(Gradients, Relu) {
  using T = TypeParam;
  std::mt19937_64 rng(101);
  for (int i = 0; i < kInstances; ++i) {
    const auto x = testkit::separated_tensor<T>({2, 4, 5}, rng);
    const auto proj = testkit::random_tensor<T>({2, 4, 5}, rng);
    const double err = testkit::gradient_error<T>(
        {x}, [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::relu(t, v[0]), proj); },
        Precision<T>::eps);
    EXPECT_LT(err, Precision<T>::tol) << "instance " << i;
  }
}

TYPED_TEST(Gradients, MaxPool) {
  using T = TypeParam;
  std::mt19937_64 rng(102);
  for (int i = 0; i < kInstances; ++i) {
    const auto x = testkit::separated_tensor<T>({2, 6, 4}, rng);
    const auto proj = testkit::random_tensor<T>({2, 3, 2}, rng);
    const double err = testkit::gradient_error<T>(
        {x}, [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::maxpool2(t, v[0]), proj); },
        Precision<T>::eps);
    EXPECT_LT(err, Precision<T>::tol) << "instance " << i;
  }
}

TYPED_TEST(Gradients, Upsample) {
  using T = TypeParam;
  std::mt19937_64 rng(103);
  for (int i = 0; i < kInstances; ++i) {
    const auto x = testkit::random_tensor<T>({2, 3, 4}, rng);
    const auto proj = testkit::random_tensor<T>({2, 6, 8}, rng);
    const double err = testkit::gradient_error<T>(
        {x}, [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::upsample_nearest2(t, v[0]), proj); },
        Precision<T>::eps);
    EXPECT_LT(err, Precision<T>::tol) << "instance " << i;
  }
}

TYPED_TEST(Gradients, CropConcat) {
  using T = TypeParam;
  std::mt19937_64 rng(104);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t hs = 6 + i % 4, hu = 3 + i % 3;
    const auto skip = testkit::random_tensor<T>({2, hs, hs + 1}, rng);
    const auto up = testkit::random_tensor<T>({1, hu, hu}, rng);
    const auto proj = testkit::random_tensor<T>({3, hu, hu}, rng);
    const double err = testkit::gradient_error<T>(
        {skip, up}, [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::crop_concat(t, v[0], v[1]), proj); },
        Precision<T>::eps);
    EXPECT_LT(err, Precision<T>::tol) << "instance " << i;
  }
}

TYPED_TEST(Gradients, GatherCoords) {
  using T = TypeParam;
  std::mt19937_64 rng(105);
  std::uniform_int_distribution<int> pos(0, 4);
  for (int i = 0; i < kInstances; ++i) {
    const auto field = testkit::random_tensor<T>({2, 5, 5}, rng);
    std::vector<Coord> coords(8);
    for (auto& c : coords) c = {pos(rng), pos(rng)};
    coords.push_back(coords.front());
    const auto proj = testkit::random_tensor<T>({coords.size(), 2}, rng);
    const double err = testkit::gradient_error<T>(
        {field}, [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::gather_coords(t, v[0], coords), proj); },
        Precision<T>::eps);
    EXPECT_LT(err, Precision<T>::tol) << "instance " << i;
  }
}

TYPED_TEST(Gradients, OceLoss) {
  using T = TypeParam;
  std::mt19937_64 rng(106);
  for (int i = 0; i < kInstances; ++i) {
    LossConfig cfg;
    cfg.lambda_reg = i % 2 ? 1e-5 : 0.5;  // large weight exercises the regularizer term
    cfg.anchor_density = 20.0 / 900.0 + 1e-9;
    const auto pairs = sample_pairs(30, 30, cfg, rng);
    ASSERT_EQ(pairs.size(), 20u);
    const auto field = testkit::random_tensor<T>({2, 30, 30}, rng, -5.0, 5.0);
    const double err = testkit::gradient_error<T>(
        {field}, [&](Tape<T>& t, const std::vector<Var>& v) { return oce_loss(t, v[0], pairs, cfg); }, Precision<T>::eps);
    EXPECT_LT(err, Precision<T>::tol) << "instance " << i;
  }
}

TEST(Gradients, TinyNetwork) {
  ModelConfig cfg;
  cfg.base_fmaps = 2;
  cfg.fmap_factor = 1;
  auto params = init_params<double>(cfg, 7);
  std::mt19937_64 rng(107);
  // Nonzero biases keep pre-activations off the ReLU kink where a whole input window is dead.
  for (std::size_t i = 1; i < params.tensors.size(); i += 2) {
    params.tensors[i] = testkit::random_tensor<double>(params.tensors[i].shape(), rng, 0.05, 0.3);
  }
  const auto image = testkit::random_tensor<double>({1, 20, 20}, rng, 0.0, 1.0);
  const auto proj = testkit::random_tensor<double>({2, 4, 4}, rng);
  std::vector<Tensor<double>> inputs(params.tensors);
  inputs.push_back(image);
  const double err = testkit::gradient_error<double>(
      inputs,
      [&](Tape<double>& t, const std::vector<Var>& v) {
        std::vector<Var> p(v.begin(), v.begin() + 26);
        return ops::project(t, forward(t, p, v[26]), proj);
      },
      1e-6);
  EXPECT_LT(err, 1e-4);
}

TEST(Gradients, EvaluateLossMatchesTape) {
  std::mt19937_64 rng(108);
  LossConfig cfg;
  const auto pairs = sample_pairs(30, 30, cfg, rng);
  const auto field = testkit::random_tensor<double>({2, 30, 30}, rng);
  const auto eval = evaluate_oce_loss(field, pairs, cfg);
  Tape<double> tape;
  Var f = tape.leaf(field);
  Var loss = oce_loss(tape, f, pairs, cfg);
  tape.backward(loss);
  EXPECT_EQ(eval.value, tape.value(loss)[0]);
  const auto g = tape.grad(f);
  EXPECT_TRUE(std::equal(g.begin(), g.end(), eval.gradient.storage().begin()));
}
