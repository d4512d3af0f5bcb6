#pragma once

// Command line driver: synth, train, predict, segment, eval, sweep, theory.
// Exit codes: 0 success, 1 usage or configuration error, 2 data error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oce/config.hpp"
#include "oce/io.hpp"
#include "oce/metrics.hpp"
#include "oce/preprocess.hpp"
#include "oce/segment.hpp"
#include "oce/synth.hpp"
#include "oce/theory.hpp"
#include "oce/train.hpp"

namespace oce::cli {

namespace fs = std::filesystem;

/// Seed for item `index` of a run, independent of the other items.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), purpose};
  std::mt19937_64 rng(seq);
  return rng();
}

inline std::string stem_name(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return buf;
}

struct Dataset {
  std::vector<std::string> stems;
  std::vector<Tensor<float>> images;  // normalized, (C,H,W)
  std::vector<LabelMask> labels;      // empty unless requested
};

/// Sorted stems of the *.ocet and *.pgm files in `dir`.
inline std::vector<std::pair<std::string, fs::path>> list_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(IoErrorKind::Open, "not a directory: " + dir.string());
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".ocet" || ext == ".pgm")) out.emplace_back(e.path().stem().string(), e.path());
  }
  std::sort(out.begin(), out.end());
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].first == out[i - 1].first) throw DataError("duplicate image stem '" + out[i].first + "' in " + dir.string());
  }
  if (out.empty()) throw DataError("no .ocet or .pgm files in " + dir.string());
  return out;
}

inline Tensor<float> load_image(const fs::path& path) {
  if (path.extension() == ".pgm") return io::read_pgm(path);
  Tensor<float> t = io::read_tensor<float>(path);
  if (t.ndim() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  if (t.ndim() != 3) throw DataError("image " + path.string() + " must be (H,W) or (C,H,W), got " + shape_str(t.shape()));
  return t;
}

/// Label directory of a dataset, or the directory itself when it holds labels directly.
inline fs::path label_dir(const fs::path& dir) { return fs::is_directory(dir / "labels") ? dir / "labels" : dir; }

inline Dataset load_dataset(const fs::path& dir, const RunConfig& cfg, bool with_labels, std::size_t limit = 0) {
  Dataset ds;
  auto files = list_files(dir / "images");
  if (limit > 0 && files.size() > limit) files.resize(limit);
  const NormalizationRange range{cfg.data.normalize_low, cfg.data.normalize_high};
  for (const auto& [stem, path] : files) {
    ds.stems.push_back(stem);
    ds.images.push_back(normalize_percentile(load_image(path), range));
    if (with_labels) {
      const fs::path lp = dir / "labels" / (stem + ".ocet");
      if (!fs::exists(lp)) throw DataError("missing labels for image '" + stem + "': " + lp.string());
      LabelMask l = io::read_labels(lp);
      if (l.dim(0) != ds.images.back().dim(1) || l.dim(1) != ds.images.back().dim(2)) {
        throw DataError("labels " + lp.string() + " do not match image size");
      }
      ds.labels.push_back(std::move(l));
    }
  }
  return ds;
}

inline std::vector<std::pair<std::string, LabelMask>> load_label_set(const fs::path& dir) {
  std::vector<std::pair<std::string, LabelMask>> out;
  for (const auto& [stem, path] : list_files(label_dir(dir))) {
    if (path.extension() != ".ocet") continue;
    out.emplace_back(stem, io::read_labels(path));
  }
  return out;
}

inline ModelParams<float> load_model(const fs::path& path) { return load_checkpoint(path).params; }

inline Prediction predict_image(const ModelParams<float>& params, const Tensor<float>& image, const RunConfig& cfg,
                                std::size_t index) {
  return predict(params, image, cfg.segment, derive_seed(cfg.seed, index, 0x5e9));
}

inline double f1_at_half(const std::vector<LabelMask>& gt, const std::vector<LabelMask>& pred) {
  return threshold_sweep(gt, pred, {0.5}).rows[0].scores.f1;
}

inline double seg_metric(const std::vector<LabelMask>& gt, const std::vector<LabelMask>& pred) {
  return threshold_sweep(gt, pred, {0.5}).seg;
}

/// Shared state of one invocation.
struct Context {
  RunConfig config;
  std::ostream& out;
  std::ostream& err;
};

// ---------------------------------------------------------------------------
// Subcommands

inline int run_synth(Context& ctx, const fs::path& out, std::size_t images, bool pgm) {
  const RunConfig& cfg = ctx.config;
  fs::create_directories(out / "images");
  fs::create_directories(out / "labels");
  for (std::size_t i = 0; i < images; ++i) {
    const SynthSample s = synth_generate(cfg.scene(derive_seed(cfg.seed, i, 0x5c7)));
    io::write_tensor(out / "images" / (stem_name(i) + ".ocet"), s.image);
    io::write_tensor(out / "labels" / (stem_name(i) + ".ocet"), s.labels);
    if (pgm) {
      io::write_pgm(out / "pgm" / (stem_name(i) + ".pgm"), s.image);
      io::write_label_pgm(out / "pgm" / (stem_name(i) + "_labels.pgm"), s.labels);
    }
  }
  write_config(out / "config.json", cfg);
  return 0;
}

inline int run_train(Context& ctx, const fs::path& data, const fs::path& out, const std::string& resume) {
  RunConfig& cfg = ctx.config;
  const Dataset ds = load_dataset(data, cfg, false);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainState state = resume.empty() ? make_train_state(cfg.model, tc) : load_checkpoint(resume);
  if (!resume.empty()) {
    const ModelConfig& m = state.params.config;
    if (m.in_channels != cfg.model.in_channels || m.base_fmaps != cfg.model.base_fmaps ||
        m.fmap_factor != cfg.model.fmap_factor || m.out_channels != cfg.model.out_channels) {
      throw DataError("train: checkpoint " + resume + " does not match the configured model");
    }
  }
  const std::size_t per_epoch = steps_per_epoch(tc, ds.images.size());
  const TrainResult result = train(ds.images, cfg.loss, tc, std::move(state), [&](const StepReport& r) {
    ctx.err << "step " << r.step + 1 << "/" << tc.epochs * per_epoch << "  epoch " << r.epoch << "  loss " << r.loss
            << '\n';
  });
  fs::create_directories(out);
  save_checkpoint(out / "model.ocea", result.state);
  std::ofstream loss(out / "loss.tsv");
  loss << "epoch\tmean_loss\n";
  const std::size_t first_epoch = tc.epochs - result.epoch_loss.size();
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) loss << first_epoch + e << '\t' << result.epoch_loss[e] << '\n';
  write_config(out / "config.json", cfg);
  return 0;
}

inline int run_predict(Context& ctx, const fs::path& model, const fs::path& data, const fs::path& out) {
  const RunConfig& cfg = ctx.config;
  const ModelParams<float> params = load_model(model);
  const Dataset ds = load_dataset(data, cfg, false);
  fs::create_directories(out / "fields");
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    io::write_tensor(out / "fields" / (ds.stems[i] + ".ocet"), predict_full(params, ds.images[i], cfg.segment.max_tile));
  }
  write_config(out / "config.json", cfg);
  return 0;
}

inline int run_segment(Context& ctx, const fs::path& model, const fs::path& data, const fs::path& out, bool pgm) {
  const RunConfig& cfg = ctx.config;
  const ModelParams<float> params = load_model(model);
  const Dataset ds = load_dataset(data, cfg, false);
  fs::create_directories(out / "labels");
  fs::create_directories(out / "foreground");
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const Prediction p = predict_image(params, ds.images[i], cfg, i);
    const LabelMask labels = segment(p.field, p.foreground, cfg.segment);
    io::write_tensor(out / "labels" / (ds.stems[i] + ".ocet"), labels);
    io::write_tensor(out / "foreground" / (ds.stems[i] + ".ocet"), p.foreground);
    if (pgm) io::write_label_pgm(out / "pgm" / (ds.stems[i] + ".pgm"), labels);
  }
  write_config(out / "config.json", cfg);
  return 0;
}

inline int run_eval(Context& ctx, const fs::path& gt_dir, const fs::path& pred_dir, const std::vector<double>& thresholds,
                    bool per_image, const std::string& out) {
  const auto gt = load_label_set(gt_dir);
  const auto pred = load_label_set(pred_dir);
  std::vector<LabelMask> g, p;
  for (const auto& [stem, labels] : gt) {
    auto it = std::find_if(pred.begin(), pred.end(), [&](const auto& e) { return e.first == stem; });
    if (it == pred.end()) throw DataError("eval: no prediction for '" + stem + "'");
    if (it->second.shape() != labels.shape()) throw DataError("eval: shape mismatch for '" + stem + "'");
    g.push_back(labels);
    p.push_back(it->second);
  }
  if (pred.size() != gt.size()) throw DataError("eval: predictions without ground truth");
  const SweepReport report = threshold_sweep(g, p, thresholds, per_image ? Aggregation::PerImage : Aggregation::Dataset);
  if (out.empty()) {
    write_score_table(ctx.out, report);
  } else {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    std::ofstream f(out);
    if (!f) throw IoError(IoErrorKind::Open, "eval: cannot write " + out);
    write_score_table(f, report);
  }
  return 0;
}

inline int run_sweep(Context& ctx, const fs::path& model, const fs::path& data, const fs::path& out,
                     std::size_t limit, const std::string& metric) {
  RunConfig& cfg = ctx.config;
  const ModelParams<float> params = load_model(model);
  const Dataset ds = load_dataset(data, cfg, true, limit);
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < ds.images.size(); ++i) preds.push_back(predict_image(params, ds.images[i], cfg, i));
  const SegmentationMetric m = metric == "seg" ? SegmentationMetric(seg_metric) : SegmentationMetric(f1_at_half);
  const BandwidthSearchResult best = bandwidth_search(preds, ds.labels, cfg.bandwidths, m, cfg.segment);
  fs::create_directories(out);
  std::ofstream table(out / "sweep.tsv");
  table << "bandwidth\tshrink\t" << metric << '\n';
  for (const SweepEntry& e : best.table) table << e.bandwidth << '\t' << e.shrink << '\t' << format_score(e.score) << '\n';
  cfg.segment.bandwidth = best.bandwidth;
  cfg.segment.shrink_distance = best.shrink;
  write_config(out / "config.json", cfg);
  ctx.out << "bandwidth\t" << best.bandwidth << "\nshrink\t" << best.shrink << '\n' << metric << '\t'
          << format_score(best.score) << '\n';
  return 0;
}

inline int run_theory(Context& ctx, const fs::path& out, theory::TheoryConfig tc, bool both) {
  tc.seed = ctx.config.seed;
  const theory::Template t = theory::make_template(tc.template_size);
  const auto [a, b] = theory::extreme_patches(t);
  std::ostringstream report;
  theory::write_theory_header(report);
  std::vector<theory::Boundary> modes{tc.boundary};
  if (both) modes = {theory::Boundary::Periodic, theory::Boundary::Bounded};
  for (theory::Boundary mode : modes) {
    tc.boundary = mode;
    const auto scenes = theory::generate_scenes(t, tc);
    const theory::Decomposition d = theory::decompose_offsets(t, a, b, scenes);
    theory::write_theory_row(report, "left->right", mode, theory::intra_offset(a, b), d,
                             theory::cross_offset_skew(t, a, b, scenes));
  }
  if (out.empty()) {
    ctx.out << report.str();
    return 0;
  }
  fs::create_directories(out);
  std::ofstream(out / "theory.tsv") << report.str();
  nlohmann::json j;
  j["scenes"] = tc.scenes;
  j["objects"] = tc.objects;
  j["extent"] = tc.extent;
  j["template_size"] = tc.template_size;
  j["seed"] = tc.seed;
  std::ofstream(out / "config.json") << j.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

inline std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("not a number: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

/// Runs one command line. Output goes to `out`, diagnostics to `err`.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Unsupervised cell instance segmentation with object-centric embeddings", "oce"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  std::string config_path;
  app.add_option("--seed", seed, "Random seed (overrides the config)");
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);

  std::string out_dir, data_dir, model_path, gt_dir, pred_dir, resume, thresholds = "0.5", bandwidths, metric = "f1";
  std::size_t images = 40, limit = 0;
  std::optional<std::size_t> epochs;
  std::optional<double> bandwidth, shrink;
  bool pgm = false, per_image = false, both = false;
  theory::TheoryConfig tc;
  std::string boundary = "periodic";

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset (images/ and labels/)");
  synth->add_option("--out", out_dir, "Output dataset directory")->required();
  synth->add_option("--images", images, "Number of images");
  synth->add_flag("--pgm", pgm, "Also write PGM previews");

  auto* trn = app.add_subcommand("train", "Train the embedding network");
  trn->add_option("--data", data_dir, "Dataset directory with images/")->required();
  trn->add_option("--out", out_dir, "Output directory for model.ocea and loss.tsv")->required();
  trn->add_option("--epochs", epochs, "Override train.epochs");
  trn->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  auto* prd = app.add_subcommand("predict", "Write dense embedding fields");
  prd->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  prd->add_option("--data", data_dir, "Dataset directory with images/")->required();
  prd->add_option("--out", out_dir, "Output directory")->required();

  auto* seg = app.add_subcommand("segment", "Segment images into instances");
  seg->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  seg->add_option("--data", data_dir, "Dataset directory with images/")->required();
  seg->add_option("--out", out_dir, "Output directory")->required();
  seg->add_option("--bandwidth", bandwidth, "Override segment.bandwidth");
  seg->add_option("--shrink", shrink, "Override segment.shrink_distance");
  seg->add_flag("--pgm", pgm, "Also write PGM label visualizations");

  auto* evl = app.add_subcommand("eval", "Score predicted labels against ground truth");
  evl->add_option("--gt", gt_dir, "Ground-truth labels (directory or dataset with labels/)")->required();
  evl->add_option("--pred", pred_dir, "Predicted labels (directory or output with labels/)")->required();
  evl->add_option("--thresholds", thresholds, "Comma-separated IoU thresholds");
  evl->add_flag("--per-image", per_image, "Average per-image scores instead of pooling counts");
  evl->add_option("--out", out_dir, "Write the table to this file instead of stdout");

  auto* swp = app.add_subcommand("sweep", "Search bandwidth and shrink distance on labeled data");
  swp->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  swp->add_option("--data", data_dir, "Dataset directory with images/ and labels/")->required();
  swp->add_option("--out", out_dir, "Output directory for sweep.tsv and config.json")->required();
  swp->add_option("--bandwidths", bandwidths, "Comma-separated candidates (default: config)");
  swp->add_option("--max-images", limit, "Use only the first N images");
  swp->add_option("--metric", metric, "f1 (F1 at IoU 0.5) or seg")->check(CLI::IsMember({"f1", "seg"}));

  auto* thy = app.add_subcommand("theory", "Monte-Carlo report on expected patch offsets");
  thy->add_option("--out", out_dir, "Output directory (default: print to stdout)");
  thy->add_option("--scenes", tc.scenes, "Number of scenes")->check(CLI::PositiveNumber);
  thy->add_option("--objects", tc.objects, "Objects per scene")->check(CLI::PositiveNumber);
  thy->add_option("--extent", tc.extent, "Canvas side in pixels")->check(CLI::PositiveNumber);
  thy->add_option("--template", tc.template_size, "Template diameter in pixels")->check(CLI::Range(3, 1000));
  thy->add_option("--boundary", boundary, "periodic or bounded")->check(CLI::IsMember({"periodic", "bounded"}));
  thy->add_flag("--both", both, "Report both boundary modes");

  std::vector<const char*> argv{"oce"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    Context ctx{config_path.empty() ? RunConfig{} : load_config(config_path), out, err};
    if (seed) ctx.config.seed = *seed;
    if (epochs) ctx.config.train.epochs = *epochs;
    if (bandwidth) ctx.config.segment.bandwidth = *bandwidth;
    if (shrink) ctx.config.segment.shrink_distance = *shrink;
    if (!bandwidths.empty()) ctx.config.bandwidths = parse_list(bandwidths);
    ctx.config.validate();

    if (*synth) return run_synth(ctx, out_dir, images, pgm);
    if (*trn) return run_train(ctx, data_dir, out_dir, resume);
    if (*prd) return run_predict(ctx, model_path, data_dir, out_dir);
    if (*seg) return run_segment(ctx, model_path, data_dir, out_dir, pgm);
    if (*evl) return run_eval(ctx, gt_dir, pred_dir, parse_list(thresholds), per_image, out_dir);
    if (*swp) return run_sweep(ctx, model_path, data_dir, out_dir, limit, metric);
    if (*thy) {
      tc.boundary = boundary == "bounded" ? theory::Boundary::Bounded : theory::Boundary::Periodic;
      return run_theory(ctx, out_dir, tc, both);
    }
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

inline int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args);
}

}  // namespace oce::cli
