#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "oce/adam.hpp"
#include "oce/io.hpp"
#include "oce/loss.hpp"
#include "oce/net.hpp"

namespace oce {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  std::size_t crop = 252;
  double learning_rate = 4e-5;
  /// 0 means one pass worth of crops: ceil(images / batch_size).
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 0;
};

struct TrainState {
  ModelParams<float> params;
  AdamState adam;
};

struct TrainResult {
  TrainState state;
  std::vector<double> epoch_loss;  // mean per-image loss of each epoch run
};

struct StepReport {
  std::size_t step = 0, epoch = 0;
  double loss = 0;  // mean per-image loss of the step
};

inline std::size_t steps_per_epoch(const TrainConfig& cfg, std::size_t images) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  return (images + cfg.batch_size - 1) / cfg.batch_size;
}

/// RNG for one optimizer step, derived only from (seed, step) so that a
/// resumed run draws the same crops and pairs as an uninterrupted one.
inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0x0cecu};
  return std::mt19937_64(seq);
}

inline TrainState make_train_state(const ModelConfig& model, const TrainConfig& cfg) {
  TrainState state{init_params<float>(model, cfg.seed), {}};
  state.adam = make_adam_state(state.params, cfg.learning_rate);
  return state;
}

inline Tensor<float> crop_image(const Tensor<float>& image, std::size_t top, std::size_t left, std::size_t size) {
  const std::size_t c = image.dim(0);
  Tensor<float> out({c, size, size});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < size; ++y) {
      const float* src = &image.at(ch, top + y, left);
      std::copy(src, src + size, &out.at(ch, y, 0));
    }
  }
  return out;
}

/// Forward, pair sampling, loss and backward for one crop. Parameter
/// gradients are added to the gradient buffers of `params`.
template <typename Rng>
double accumulate_crop_gradient(ModelParams<float>& params, const Tensor<float>& crop, const LossConfig& loss_cfg,
                                Rng& rng) {
  Tape<float> tape;
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(tape.leaf(Tensor<float>(t.shape(), t.storage()), true));
  Var image = tape.leaf(crop, false);
  Var field = forward(tape, vars, image);
  const PairSet pairs = sample_pairs(tape.value(field).dim(1), tape.value(field).dim(2), loss_cfg, rng);
  Var loss = oce_loss(tape, field, pairs, loss_cfg);
  tape.backward(loss);
  for (std::size_t i = 0; i < vars.size(); ++i) {
    auto src = tape.grad(vars[i]);
    auto dst = params.tensors[i].grad();
    if (src.empty()) continue;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
  return static_cast<double>(tape.value(loss)[0]);
}

/// Runs optimizer steps from `state.adam.step` up to epochs * steps_per_epoch.
/// Each step draws `batch_size` random crops (image and position uniform),
/// sums the per-crop loss gradients and applies one Adam update with the
/// learning rate of the step's epoch.
inline TrainResult train(const std::vector<Tensor<float>>& dataset, const LossConfig& loss_cfg,
                         const TrainConfig& cfg, TrainState state,
                         const std::function<void(const StepReport&)>& on_step = nullptr) {
  if (dataset.empty()) throw DataError("train: empty dataset");
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw PreconditionError("train: batch size and epochs must be positive");
  output_extent(cfg.crop);
  for (const auto& img : dataset) {
    if (img.ndim() != 3 || img.dim(0) != state.params.config.in_channels) {
      throw DataError("train: image " + shape_str(img.shape()) + " does not match model input channels");
    }
    if (img.dim(1) < cfg.crop || img.dim(2) < cfg.crop) {
      throw DataError("train: crop " + std::to_string(cfg.crop) + " larger than image " + shape_str(img.shape()));
    }
  }
  const std::size_t per_epoch = steps_per_epoch(cfg, dataset.size());
  const std::uint64_t total = static_cast<std::uint64_t>(cfg.epochs) * per_epoch;
  TrainResult result{std::move(state), {}};
  TrainState& st = result.state;
  for (auto& t : st.params.tensors) t.ensure_grad();

  double epoch_sum = 0;
  std::size_t epoch_steps = 0;
  for (std::uint64_t step = st.adam.step; step < total; ++step) {
    const std::size_t epoch = static_cast<std::size_t>(step / per_epoch);
    auto rng = step_rng(cfg.seed, step);
    for (auto& t : st.params.tensors) t.zero_grad();
    double step_loss = 0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
      const Tensor<float>& img = dataset[pick(rng)];
      std::uniform_int_distribution<std::size_t> top(0, img.dim(1) - cfg.crop), left(0, img.dim(2) - cfg.crop);
      const std::size_t y = top(rng), x = left(rng);
      step_loss += accumulate_crop_gradient(st.params, crop_image(img, y, x, cfg.crop), loss_cfg, rng);
    }
    st.adam.learning_rate = lr_schedule(epoch, cfg.learning_rate);
    adam_step(st.adam, st.params);
    step_loss /= static_cast<double>(cfg.batch_size);
    epoch_sum += step_loss;
    ++epoch_steps;
    if (on_step) on_step({static_cast<std::size_t>(step), epoch, step_loss});
    if ((step + 1) % per_epoch == 0 || step + 1 == total) {
      result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
      epoch_sum = 0;
      epoch_steps = 0;
    }
  }
  for (auto& t : st.params.tensors) t.drop_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: one OCEA archive with the model configuration, parameters,
// Adam moments and the step counter.

inline io::Archive checkpoint_archive(const TrainState& state) {
  io::Archive ar;
  const ModelConfig& c = state.params.config;
  ar.put("config", Tensor<std::int32_t>({4}, {static_cast<std::int32_t>(c.in_channels),
                                              static_cast<std::int32_t>(c.base_fmaps),
                                              static_cast<std::int32_t>(c.fmap_factor),
                                              static_cast<std::int32_t>(c.out_channels)}));
  for (std::size_t i = 0; i < state.params.tensors.size(); ++i) {
    Tensor<float> plain(state.params.tensors[i].shape(), state.params.tensors[i].storage());
    ar.put("param." + state.params.names[i], plain);
  }
  const bool has_moments = state.adam.first_moment.size() == state.params.tensors.size();
  if (has_moments) {
    for (std::size_t i = 0; i < state.params.tensors.size(); ++i) {
      ar.put("adam.m." + state.params.names[i], state.adam.first_moment[i]);
      ar.put("adam.v." + state.params.names[i], state.adam.second_moment[i]);
    }
  }
  const std::uint64_t step = state.adam.step;
  ar.put("adam.step", Tensor<std::int32_t>({2}, {static_cast<std::int32_t>(step & 0xffffffffu),
                                                 static_cast<std::int32_t>(step >> 32)}));
  return ar;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  io::write_archive(path, checkpoint_archive(state));
}

inline TrainState restore_checkpoint(const io::Archive& ar) {
  const auto cfg = ar.get_tensor<std::int32_t>("config");
  if (cfg.size() != 4) throw IoError(IoErrorKind::Format, "checkpoint config must hold 4 values");
  ModelConfig model;
  model.in_channels = static_cast<std::size_t>(cfg[0]);
  model.base_fmaps = static_cast<std::size_t>(cfg[1]);
  model.fmap_factor = static_cast<std::size_t>(cfg[2]);
  model.out_channels = static_cast<std::size_t>(cfg[3]);
  TrainState state{init_params<float>(model, 0), {}};
  state.adam = make_adam_state(state.params);
  const bool has_moments = ar.contains("adam.m." + state.params.names[0]);
  for (std::size_t i = 0; i < state.params.tensors.size(); ++i) {
    const std::string& name = state.params.names[i];
    auto load = [&](const std::string& key, Tensor<float>& dst) {
      Tensor<float> t = ar.get_tensor<float>(key);
      if (t.shape() != dst.shape()) {
        throw IoError(IoErrorKind::Format, "checkpoint entry " + key + " has shape " + shape_str(t.shape()) +
                                               ", expected " + shape_str(dst.shape()));
      }
      dst = std::move(t);
    };
    load("param." + name, state.params.tensors[i]);
    if (has_moments) {
      load("adam.m." + name, state.adam.first_moment[i]);
      load("adam.v." + name, state.adam.second_moment[i]);
    }
  }
  const auto step = ar.get_tensor<std::int32_t>("adam.step");
  if (step.size() != 2) throw IoError(IoErrorKind::Format, "checkpoint step counter must hold 2 words");
  state.adam.step = static_cast<std::uint32_t>(step[0]) | static_cast<std::uint64_t>(static_cast<std::uint32_t>(step[1])) << 32;
  return state;
}

inline TrainState load_checkpoint(const std::filesystem::path& path) { return restore_checkpoint(io::read_archive(path)); }

}  // namespace oce
