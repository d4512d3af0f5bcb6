#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "oce/autograd.hpp"
#include "oce/kernels.hpp"
#include "oce/tensor.hpp"

namespace oce {

/// Mini U-Net configuration: one downsampling level, blocks of
/// [3x3, 1x1, 1x1, 3x3] valid convolutions each followed by ReLU.
struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t base_fmaps = 64;
  std::size_t fmap_factor = 3;
  std::size_t out_channels = 2;

  static constexpr std::array<std::size_t, 4> kBlockKernels{3, 1, 1, 3};
  static constexpr std::size_t kDepth = 1;
  /// Input pixels lost per side by the valid-convolution chain.
  static constexpr std::size_t kContext = 8;

  std::size_t bottleneck_fmaps() const { return base_fmaps * fmap_factor; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named weight/bias tensors in a fixed order: encoder block, bottleneck
/// block, decoder block (4 convs each), then the 1x1 head.
template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out{config, names, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }
};

namespace detail {

struct LayerSpec {
  std::string name;
  std::size_t in, out, kernel;
};

inline std::vector<LayerSpec> layer_specs(const ModelConfig& cfg) {
  std::vector<LayerSpec> specs;
  auto block = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    for (std::size_t i = 0; i < ModelConfig::kBlockKernels.size(); ++i) {
      specs.push_back({prefix + ".conv" + std::to_string(i), i == 0 ? in : out, out, ModelConfig::kBlockKernels[i]});
    }
  };
  const std::size_t f0 = cfg.base_fmaps, f1 = cfg.bottleneck_fmaps();
  block("enc", cfg.in_channels, f0);
  block("bottleneck", f0, f1);
  block("dec", f0 + f1, f0);
  specs.push_back({"head", f0, cfg.out_channels, 1});
  return specs;
}

}  // namespace detail

/// Closed-form number of scalar parameters for a configuration.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  auto block = [](std::size_t in, std::size_t out) { return 9 * in * out + 2 * out * out + 9 * out * out + 4 * out; };
  const std::size_t f0 = cfg.base_fmaps, f1 = cfg.bottleneck_fmaps();
  return block(cfg.in_channels, f0) + block(f0, f1) + block(f0 + f1, f0) + f0 * cfg.out_channels + cfg.out_channels;
}

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
template <typename T = float>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.in_channels == 0 || cfg.base_fmaps == 0 || cfg.fmap_factor == 0 || cfg.out_channels == 0) {
    throw PreconditionError("init_params: all channel counts must be positive");
  }
  std::mt19937_64 rng(seed);
  ModelParams<T> params{cfg, {}, {}};
  for (const auto& spec : detail::layer_specs(cfg)) {
    const std::size_t fan_in = spec.in * spec.kernel * spec.kernel;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor<T> w({spec.out, spec.in, spec.kernel, spec.kernel});
    for (auto& v : w.storage()) v = static_cast<T>(normal(rng));
    params.names.push_back(spec.name + ".weight");
    params.tensors.push_back(std::move(w));
    params.names.push_back(spec.name + ".bias");
    params.tensors.push_back(Tensor<T>({spec.out}));
  }
  return params;
}

/// Output spatial size for an input size, or throws if the chain under-runs
/// or hits an odd size before pooling.
inline std::size_t output_extent(std::size_t input) {
  if (input < 20) {
    throw PreconditionError("forward: input extent " + std::to_string(input) + " too small (minimum 20)");
  }
  const std::size_t enc = input - 4;
  if (enc % 2 != 0) {
    throw PreconditionError("forward: encoder output extent " + std::to_string(enc) + " is odd; input extent must be even");
  }
  return (enc / 2 - 4) * 2 - 4;
}

namespace detail {

// Executes the architecture once for either a tape (handles are Var) or
// direct tensors (handles are Tensor), so both paths share one definition.
template <typename Exec, typename Handle>
Handle run_unet(Exec& exec, const std::vector<Handle>& p, Handle x) {
  auto block = [&](Handle h, std::size_t first) {
    for (std::size_t i = 0; i < 4; ++i) h = exec.relu(exec.conv(h, p[first + 2 * i], p[first + 2 * i + 1]));
    return h;
  };
  Handle enc = block(std::move(x), 0);
  Handle bottom = block(exec.pool(enc), 8);
  Handle dec = block(exec.concat(enc, exec.up(bottom)), 16);
  return exec.conv(dec, p[24], p[25]);
}

template <typename T>
struct DirectExec {
  Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) { return kernels::conv2d_valid(x, w, b); }
  Tensor<T> relu(const Tensor<T>& x) { return kernels::relu(x); }
  Tensor<T> pool(const Tensor<T>& x) { return kernels::maxpool2(x); }
  Tensor<T> up(const Tensor<T>& x) { return kernels::upsample_nearest2(x); }
  Tensor<T> concat(const Tensor<T>& s, const Tensor<T>& u) { return kernels::crop_concat(s, u); }
};

template <typename T>
struct TapeExec {
  Tape<T>& tape;
  Var conv(Var x, Var w, Var b) { return ops::conv2d_valid(tape, x, w, b); }
  Var relu(Var x) { return ops::relu(tape, x); }
  Var pool(Var x) { return ops::maxpool2(tape, x); }
  Var up(Var x) { return ops::upsample_nearest2(tape, x); }
  Var concat(Var s, Var u) { return ops::crop_concat(tape, s, u); }
};

template <typename T>
void check_input(const ModelParams<T>& params, const Tensor<T>& image) {
  if (params.tensors.size() != 26) throw PreconditionError("forward: expected 26 parameter tensors");
  if (image.ndim() != 3 || image.dim(0) != params.config.in_channels) {
    throw PreconditionError("forward: image " + shape_str(image.shape()) + " does not match in_channels " +
                            std::to_string(params.config.in_channels));
  }
  output_extent(image.dim(1));
  output_extent(image.dim(2));
}

}  // namespace detail

/// Dense OCE prediction (2, H-16, W-16) for an image (C, H, W).
template <typename T>
Tensor<T> forward(const ModelParams<T>& params, const Tensor<T>& image) {
  detail::check_input(params, image);
  detail::DirectExec<T> exec;
  std::vector<Tensor<T>> p(params.tensors.begin(), params.tensors.end());
  return detail::run_unet(exec, p, image);
}

/// Same network recorded on a tape. `param_vars` must hold the parameters
/// in ModelParams order.
template <typename T>
Var forward(Tape<T>& tape, const std::vector<Var>& param_vars, Var image) {
  if (param_vars.size() != 26) throw PreconditionError("forward: expected 26 parameter handles");
  output_extent(tape.value(image).dim(1));
  output_extent(tape.value(image).dim(2));
  detail::TapeExec<T> exec{tape};
  return detail::run_unet(exec, param_vars, image);
}

}  // namespace oce
