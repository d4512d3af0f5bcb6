#pragma once

// Run configuration: one JSON object with sections model, loss, train,
// segment and data plus a top-level seed. Every field has a default and
// unknown keys are rejected.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/loss.hpp"
#include "oce/net.hpp"
#include "oce/segment.hpp"
#include "oce/synth.hpp"
#include "oce/train.hpp"

namespace oce {

struct ConfigError : PreconditionError {
  using PreconditionError::PreconditionError;
};

struct DataConfig {
  std::size_t image_size = 252;
  std::size_t objects = 24;
  double min_radius = 8.0, max_radius = 14.0;
  double min_eccentricity = 0.0, max_eccentricity = 0.6;
  double gradient_angle = 0.5;
  double background_mean = 0.1, background_std = 0.03;
  std::size_t min_gap = 2;
  double normalize_low = 1.0, normalize_high = 99.8;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  SegmenterConfig segment;
  std::vector<double> bandwidths{3, 4, 5, 6, 7, 8, 10, 12, 14, 16};
  DataConfig data;
  std::uint64_t seed = 0;

  void validate() const {
    loss.validate();
    segment.validate();
    if (model.in_channels < 1 || model.in_channels > 2) throw ConfigError("model.in_channels must be 1 or 2");
    if (model.base_fmaps == 0 || model.fmap_factor == 0) throw ConfigError("model feature maps must be positive");
    if (model.out_channels != 2) throw ConfigError("model.out_channels must be 2");
    if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("train.epochs and train.batch_size must be positive");
    if (!(train.learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (bandwidths.empty()) throw ConfigError("segment.bandwidths must not be empty");
    for (double b : bandwidths) {
      if (!(b > 0)) throw ConfigError("segment.bandwidths must be positive");
    }
    if (!(data.min_radius > 0 && data.max_radius >= data.min_radius)) throw ConfigError("data radius range is invalid");
    if (!(data.normalize_low < data.normalize_high)) throw ConfigError("data normalization percentiles are invalid");
  }

  SceneSpec scene(std::uint64_t scene_seed) const {
    SceneSpec s;
    s.height = s.width = data.image_size;
    s.object_count = data.objects;
    s.min_radius = data.min_radius;
    s.max_radius = data.max_radius;
    s.min_eccentricity = data.min_eccentricity;
    s.max_eccentricity = data.max_eccentricity;
    s.gradient_angle = data.gradient_angle;
    s.background_mean = data.background_mean;
    s.background_std = data.background_std;
    s.min_gap = data.min_gap;
    s.seed = scene_seed;
    return s;
  }
};

namespace detail {

using json = nlohmann::json;

struct ConfigField {
  std::function<void(const json&)> read;
  std::function<json()> write;
};

template <typename T>
ConfigField bind(T& ref) {
  return {[&ref](const json& j) { ref = j.get<T>(); }, [&ref] { return json(ref); }};
}

inline std::map<std::string, std::map<std::string, ConfigField>> config_fields(RunConfig& c) {
  return {
      {"model",
       {{"in_channels", bind(c.model.in_channels)},
        {"base_fmaps", bind(c.model.base_fmaps)},
        {"fmap_factor", bind(c.model.fmap_factor)},
        {"out_channels", bind(c.model.out_channels)}}},
      {"loss",
       {{"kappa", bind(c.loss.kappa)},
        {"tau", bind(c.loss.tau)},
        {"lambda", bind(c.loss.lambda_reg)},
        {"anchor_density", bind(c.loss.anchor_density)}}},
      {"train",
       {{"epochs", bind(c.train.epochs)},
        {"batch_size", bind(c.train.batch_size)},
        {"crop", bind(c.train.crop)},
        {"learning_rate", bind(c.train.learning_rate)},
        {"steps_per_epoch", bind(c.train.steps_per_epoch)}}},
      {"segment",
       {{"noise_rounds", bind(c.segment.noise_rounds)},
        {"noise_fraction", bind(c.segment.noise_fraction)},
        {"bandwidth", bind(c.segment.bandwidth)},
        {"shrink_distance", bind(c.segment.shrink_distance)},
        {"min_instance_size", bind(c.segment.min_instance_size)},
        {"connectivity_relabel", bind(c.segment.connectivity_relabel)},
        {"max_tile", bind(c.segment.max_tile)},
        {"bandwidths", bind(c.bandwidths)}}},
      {"data",
       {{"image_size", bind(c.data.image_size)},
        {"objects", bind(c.data.objects)},
        {"min_radius", bind(c.data.min_radius)},
        {"max_radius", bind(c.data.max_radius)},
        {"min_eccentricity", bind(c.data.min_eccentricity)},
        {"max_eccentricity", bind(c.data.max_eccentricity)},
        {"gradient_angle", bind(c.data.gradient_angle)},
        {"background_mean", bind(c.data.background_mean)},
        {"background_std", bind(c.data.background_std)},
        {"min_gap", bind(c.data.min_gap)},
        {"normalize_low", bind(c.data.normalize_low)},
        {"normalize_high", bind(c.data.normalize_high)}}},
  };
}

}  // namespace detail

/// Overlays the keys present in `j` onto `c`.
inline void apply_config(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  auto fields = detail::config_fields(c);
  for (const auto& [section, value] : j.items()) {
    if (section == "seed") {
      try {
        c.seed = value.get<std::uint64_t>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: seed: " + std::string(e.what()));
      }
      continue;
    }
    auto sec = fields.find(section);
    if (sec == fields.end()) throw ConfigError("config: unknown section '" + section + "'");
    if (!value.is_object()) throw ConfigError("config: section '" + section + "' must be an object");
    for (const auto& [key, v] : value.items()) {
      auto f = sec->second.find(key);
      if (f == sec->second.end()) throw ConfigError("config: unknown key '" + section + "." + key + "'");
      try {
        f->second.read(v);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + section + "." + key + ": " + e.what());
      }
    }
  }
}

inline nlohmann::json config_to_json(const RunConfig& config) {
  RunConfig c = config;
  nlohmann::json j;
  for (auto& [section, keys] : detail::config_fields(c)) {
    for (auto& [key, f] : keys) j[section][key] = f.write();
  }
  j["seed"] = c.seed;
  return j;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::Open, "config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  RunConfig c;
  apply_config(c, j);
  return c;
}

inline void write_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::Open, "config: cannot write " + path.string());
  out << config_to_json(c).dump(2) << '\n';
}

}  // namespace oce
