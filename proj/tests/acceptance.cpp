// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.
//
//   oce_acceptance --work <dir> [--only 1,2,...]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "oce/cli.hpp"
#include "oce/loss.hpp"
#include "oce/metrics.hpp"
#include "oce/net.hpp"
#include "oce/segment.hpp"
#include "oce/theory.hpp"
#include "support.hpp"

using namespace oce;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

template <typename T>
double worst_gradient_error(int instances, T eps) {
  std::mt19937_64 rng(sizeof(T) * 1000);
  double worst = 0;
  auto check = [&](const std::vector<Tensor<T>>& inputs, auto build) {
    worst = std::max(worst, testkit::gradient_error<T>(inputs, build, eps));
  };
  for (int i = 0; i < instances; ++i) {
    const std::size_t k = i % 2 ? 1 : 3, c = 1 + i % 3, f = 1 + (i / 3) % 3;
    const auto proj = testkit::random_tensor<T>({f, 7 - k, 7 - k}, rng);
    check({testkit::random_tensor<T>({c, 6, 6}, rng), testkit::random_tensor<T>({f, c, k, k}, rng),
           testkit::random_tensor<T>({f}, rng)},
          [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::conv2d_valid(t, v[0], v[1], v[2]), proj); });
  }
  for (int i = 0; i < instances; ++i) {
    const auto proj = testkit::random_tensor<T>({2, 4, 5}, rng);
    check({testkit::separated_tensor<T>({2, 4, 5}, rng)},
          [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::relu(t, v[0]), proj); });
  }
  for (int i = 0; i < instances; ++i) {
    const auto proj = testkit::random_tensor<T>({2, 3, 2}, rng);
    check({testkit::separated_tensor<T>({2, 6, 4}, rng)},
          [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::maxpool2(t, v[0]), proj); });
  }
  for (int i = 0; i < instances; ++i) {
    const auto proj = testkit::random_tensor<T>({2, 6, 8}, rng);
    check({testkit::random_tensor<T>({2, 3, 4}, rng)},
          [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::upsample_nearest2(t, v[0]), proj); });
  }
  for (int i = 0; i < instances; ++i) {
    const std::size_t hs = 6 + i % 4, hu = 3 + i % 3;
    const auto proj = testkit::random_tensor<T>({3, hu, hu}, rng);
    check({testkit::random_tensor<T>({2, hs, hs + 1}, rng), testkit::random_tensor<T>({1, hu, hu}, rng)},
          [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::crop_concat(t, v[0], v[1]), proj); });
  }
  std::uniform_int_distribution<int> pos(0, 4);
  for (int i = 0; i < instances; ++i) {
    std::vector<Coord> coords(8);
    for (auto& c : coords) c = {pos(rng), pos(rng)};
    const auto proj = testkit::random_tensor<T>({coords.size(), 2}, rng);
    check({testkit::random_tensor<T>({2, 5, 5}, rng)},
          [&](Tape<T>& t, const std::vector<Var>& v) { return ops::project(t, ops::gather_coords(t, v[0], coords), proj); });
  }
  for (int i = 0; i < instances; ++i) {
    LossConfig cfg;
    cfg.lambda_reg = i % 2 ? 1e-5 : 0.5;
    cfg.anchor_density = 20.0 / 900.0 + 1e-9;
    const auto pairs = sample_pairs(30, 30, cfg, rng);
    check({testkit::random_tensor<T>({2, 30, 30}, rng, -5.0, 5.0)},
          [&](Tape<T>& t, const std::vector<Var>& v) { return oce_loss(t, v[0], pairs, cfg); });
  }
  return worst;
}

Outcome criterion_gradients() {
  const double e64 = worst_gradient_error<double>(20, 1e-4);
  const double e32 = worst_gradient_error<float>(20, 1e-2f);
  return {e64 < 1e-4 && e32 < 1e-2, "worst relative error f64 " + fmt("%.2e", e64) + ", f32 " + fmt("%.2e", e32)};
}

// ---------------------------------------------------------------------------
// 2. Theory suite

Outcome criterion_theory() {
  using namespace theory;
  TheoryConfig cfg;
  cfg.scenes = 500;
  cfg.objects = 30;
  cfg.boundary = Boundary::Periodic;
  cfg.seed = 2024;
  const Template t = make_template(cfg.template_size);
  const auto [a, b] = extreme_patches(t);
  const auto scenes = generate_scenes(t, cfg);
  const Decomposition d = decompose_offsets(t, a, b, scenes);
  const Vec2 intra = intra_offset(a, b);
  const bool zero_mean = std::abs(d.cross_est.mean.y) <= 3 * d.cross_est.se.y &&
                         std::abs(d.cross_est.mean.x) <= 3 * d.cross_est.se.x;
  const bool identity = d.all.count == d.same.count + d.cross.count && d.all.y == d.same.y + d.cross.y &&
                        d.all.x == d.same.x + d.cross.x;
  const double ratio = static_cast<double>(d.same.count) / static_cast<double>(d.all.count);
  const bool proportional = std::abs(d.all_est.mean.y - ratio * intra.y) <= 3 * d.all_est.se.y &&
                            std::abs(d.all_est.mean.x - ratio * intra.x) <= 3 * d.all_est.se.x;
  std::ostringstream s;
  s << "cross mean (" << d.cross_est.mean.y << ", " << d.cross_est.mean.x << ") se (" << d.cross_est.se.y << ", "
    << d.cross_est.se.x << "); identity " << (identity ? "exact" : "broken") << "; overall x " << d.all_est.mean.x
    << " vs " << ratio * intra.x;
  return {zero_mean && identity && proportional, s.str()};
}

// ---------------------------------------------------------------------------
// 3. Loss fixed point

Outcome criterion_fixed_point() {
  // One object covering the field: every pair is same-object.
  const std::size_t h = 40, w = 40;
  Tensor<double> field({2, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      field.at(0, y, x) = double(y) - 19.5;
      field.at(1, y, x) = double(x) - 19.5;
    }
  }
  LossConfig cfg;
  cfg.lambda_reg = 0;
  std::mt19937_64 rng(3);
  const PairSet pairs = sample_pairs(h, w, cfg, rng);
  const double n = static_cast<double>(pairs.size());
  const double base = evaluate_oce_loss(field, pairs, cfg).value;
  bool ok = std::abs(base - 0.5 * n) <= 1e-6 * n;
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1), channel(0, 1);
  std::uniform_real_distribution<double> delta(0.01, 3.0);
  int increased = 0;
  for (int i = 0; i < 50; ++i) {
    const Coord c = i % 2 ? pairs.anchors[pick(rng)] : pairs.partners[pick(rng)];
    Tensor<double> moved = field;
    moved.at(channel(rng), c.row, c.col) += i % 4 < 2 ? delta(rng) : -delta(rng);
    increased += evaluate_oce_loss(moved, pairs, cfg).value > base;
  }
  ok = ok && increased == 50;
  return {ok, "pair term " + fmt("%.9f", base) + " for " + std::to_string(pairs.size()) + " pairs; " +
                  std::to_string(increased) + "/50 perturbations increase it"};
}

// ---------------------------------------------------------------------------
// 4. Oracle equivalences

Outcome criterion_oracles() {
  int otsu_ok = 0, ms_ok = 0, match_ok = 0;
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 100; ++trial) {
    const auto v = testkit::bimodal_sample(rng, trial);
    otsu_ok += otsu(v).boundary == testkit::reference_otsu(v);
  }
  std::uniform_real_distribution<double> bw(1.5, 6.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pts = testkit::planted_clusters(rng, 1 + trial % 6, 200);
    const double b = bw(rng);
    const auto got = mean_shift(pts, b);
    const auto ref = testkit::reference_mean_shift(pts, b);
    bool same = got.modes.size() == ref.modes.size() &&
                std::vector<int>(got.labels.begin(), got.labels.end()) == ref.labels;
    for (std::size_t k = 0; same && k < ref.modes.size(); ++k) {
      same = std::abs(got.modes[k][0] - ref.modes[k][0]) < 1e-6 && std::abs(got.modes[k][1] - ref.modes[k][1]) < 1e-6;
    }
    ms_ok += same;
  }
  std::uniform_real_distribution<double> thr(0.5, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto table = iou_table(testkit::random_mask(rng, 12, 12, 6), testkit::random_mask(rng, 12, 12, 6));
    std::vector<std::vector<double>> dense(table.gt_ids.size(), std::vector<double>(table.pred_ids.size()));
    for (std::size_t g = 0; g < dense.size(); ++g) {
      for (std::size_t p = 0; p < table.pred_ids.size(); ++p) dense[g][p] = table.iou(g, p);
    }
    const double t = trial % 4 == 0 ? 0.5 : thr(rng);
    match_ok += match_at_threshold(table, t).tp == testkit::reference_max_matching(dense, t);
  }
  return {otsu_ok == 100 && ms_ok == 50 && match_ok == 100,
          "otsu " + std::to_string(otsu_ok) + "/100, mean shift " + std::to_string(ms_ok) + "/50, matching " +
              std::to_string(match_ok) + "/100"};
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

LabelMask row(std::vector<std::int32_t> v) {
  const std::size_t n = v.size();
  return LabelMask({1, n}, std::move(v));
}

Outcome criterion_metrics() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  // gt 1 = 4 px, gt 2 = 2 px; pred 7 covers 3 px of gt 1, pred 8 covers 1 px of gt 2 plus 1 background px.
  const auto gt = row({1, 1, 1, 1, 0, 2, 2, 0});
  const auto pred = row({7, 7, 7, 0, 0, 0, 8, 8});
  const IouTable t = iou_table(gt, pred);
  expect(t.iou(0, 0) == 0.75, "IoU(g1,p7) = 3/4");
  expect(t.iou(1, 1) == 1.0 / 3.0, "IoU(g2,p8) = 1/3");
  expect(t.iou(0, 1) == 0.0 && t.iou(1, 0) == 0.0, "disjoint IoU = 0");
  // t = 0.5: TP 1, FP 1, FN 1.
  const DetectionScores s = detection_scores(match_at_threshold(t, 0.5));
  expect(s.f1 == 0.5 && s.recall == 0.5 && s.precision == 0.5 && s.accuracy == 1.0 / 3.0, "scores at 0.5");
  // t = 0.3: both matched.
  const DetectionScores s3 = detection_scores(match_at_threshold(t, 0.3));
  expect(s3.f1 == 1.0 && s3.accuracy == 1.0, "scores at 0.3");
  // SEG: g1 matched (3 > 2), g2 covered by exactly half (1 of 2) is unmatched.
  expect(seg_score(gt, pred) == 0.75 / 2.0, "SEG strict half rule");
  expect(seg_score(row({1, 1, 1, 1}), row({2, 2, 0, 0})) == 0.0, "exactly half is unmatched");
  expect(seg_score(row({1, 1, 1, 1}), row({2, 2, 2, 0})) == 0.75, "three quarters matched");
  expect(seg_score(row({1, 1, 1, 1, 0, 0}), row({0, 4, 4, 4, 4, 0})) == 0.6, "SEG 3/5");
  std::string detail = failed.empty() ? "all toy values exact" : "mismatch:";
  for (const auto& f : failed) detail += " [" + f + "]";
  return {failed.empty(), detail};
}

// ---------------------------------------------------------------------------
// 6-8. Pipeline runs through the command line driver

int oce(const std::vector<std::string>& args, std::ostream& log) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  log << "$ oce";
  for (const auto& a : args) log << ' ' << a;
  log << "\n" << out.str() << err.str() << "exit " << code << "\n";
  log.flush();
  return code;
}

// Width, learning rate and noise settings used for the desk-scale run.
constexpr const char* kDeskConfig = R"({
  "model": {"base_fmaps": 32},
  "train": {"epochs": 15, "learning_rate": 0.001},
  "segment": {"noise_rounds": 15, "noise_fraction": 0.1},
  "seed": 11
})";

struct DeskRun {
  bool ok = false;
  std::string error;
  double foreground_iou = 0, f1 = 0, seg = 0;
  double best_bandwidth = 0, best_shrink = 0, f1_best = 0, f1_s0 = 0;
  double minutes = 0;
};

double parse_score(const fs::path& table, const std::string& metric, const std::string& threshold) {
  std::ifstream in(table);
  std::string m, t;
  double v;
  std::string header;
  std::getline(in, header);
  while (in >> m >> t >> v) {
    if (m == metric && t == threshold) return v;
  }
  throw DataError("no " + metric + " " + threshold + " row in " + table.string());
}

DeskRun desk_run(const fs::path& work, std::ostream& log) {
  DeskRun r;
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(work);
  const fs::path cfg = work / "desk.json";
  std::ofstream(cfg) << kDeskConfig;
  const std::string c = cfg.string();
  auto step = [&](const std::vector<std::string>& args) {
    if (oce(args, log) != 0) throw std::runtime_error("command failed: " + args[2]);
  };
  try {
    step({"--config", c, "synth", "--out", (work / "train").string(), "--images", "40"});
    step({"--config", c, "--seed", "12", "synth", "--out", (work / "eval").string(), "--images", "10"});
    step({"--config", c, "train", "--data", (work / "train").string(), "--out", (work / "model").string()});
    const std::string model = (work / "model" / "model.ocea").string();
    // Bandwidth and shrink are tuned on training images, never on the eval split.
    step({"--config", c, "sweep", "--model", model, "--data", (work / "train").string(), "--out",
          (work / "sweep").string(), "--max-images", "10"});
    step({"--config", (work / "sweep" / "config.json").string(), "segment", "--model", model, "--data",
          (work / "eval").string(), "--out", (work / "seg").string()});
    step({"eval", "--gt", (work / "eval").string(), "--pred", (work / "seg").string(), "--thresholds", "0.5", "--out",
          (work / "scores.tsv").string()});
    r.f1 = parse_score(work / "scores.tsv", "F1", "0.500000");
    r.seg = parse_score(work / "scores.tsv", "SEG", "NA");

    std::size_t inter = 0, uni = 0;
    for (const auto& [stem, path] : cli::list_files(work / "eval" / "labels")) {
      const LabelMask gt = io::read_labels(path);
      const BoolMask fg = io::read_tensor<std::uint8_t>(work / "seg" / "foreground" / (stem + ".ocet"));
      for (std::size_t i = 0; i < gt.size(); ++i) {
        inter += gt[i] > 0 && fg[i];
        uni += gt[i] > 0 || fg[i];
      }
    }
    r.foreground_iou = uni ? double(inter) / double(uni) : 0.0;

    std::ifstream sweep(work / "sweep" / "sweep.tsv");
    std::string header;
    std::getline(sweep, header);
    std::map<std::pair<double, double>, double> table;
    double b, s, v;
    while (sweep >> b >> s >> v) table[{b, s}] = v;
    const nlohmann::json best = nlohmann::json::parse(std::ifstream(work / "sweep" / "config.json"));
    r.best_bandwidth = best["segment"]["bandwidth"].get<double>();
    r.best_shrink = best["segment"]["shrink_distance"].get<double>();
    r.f1_best = table.at({r.best_bandwidth, r.best_shrink});
    r.f1_s0 = table.at({r.best_bandwidth, 0.0});
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  return r;
}

Outcome criterion_desk(const DeskRun& r) {
  if (!r.ok) return {false, "pipeline failed: " + r.error};
  std::ostringstream s;
  s << "foreground IoU " << fmt("%.3f", r.foreground_iou) << " (>= 0.7), F1@0.5 " << fmt("%.3f", r.f1)
    << " (>= 0.8), SEG " << fmt("%.3f", r.seg) << " (>= 0.6), bandwidth " << r.best_bandwidth << ", shrink "
    << r.best_shrink << ", " << fmt("%.1f", r.minutes) << " min";
  return {r.foreground_iou >= 0.7 && r.f1 >= 0.8 && r.seg >= 0.6, s.str()};
}

Outcome criterion_shrink(const DeskRun& r) {
  if (!r.ok) return {false, "pipeline failed: " + r.error};
  return {r.best_shrink >= 1 && r.f1_best > r.f1_s0,
          "best shrink " + fmt("%.0f", r.best_shrink) + ", sweep F1@0.5 " + fmt("%.3f", r.f1_best) + " vs " +
              fmt("%.3f", r.f1_s0) + " at s = 0"};
}

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  }
  return out;
}

Outcome criterion_determinism(const fs::path& work, std::ostream& log) {
  // A reduced chain: small network and images so the run can be repeated.
  fs::create_directories(work);
  const fs::path cfg = work / "small.json";
  std::ofstream(cfg) << R"({
    "model": {"base_fmaps": 8},
    "train": {"epochs": 2, "batch_size": 2, "crop": 96},
    "data": {"image_size": 128, "objects": 8},
    "seed": 5
  })";
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* name : {"run_a", "run_b"}) {
    const fs::path dir = work / name;
    fs::remove_all(dir);
    const std::string c = cfg.string();
    const bool ok = oce({"--config", c, "synth", "--out", (dir / "data").string(), "--images", "4"}, log) == 0 &&
                    oce({"--config", c, "train", "--data", (dir / "data").string(), "--out", (dir / "model").string()},
                        log) == 0 &&
                    oce({"--config", c, "segment", "--model", (dir / "model" / "model.ocea").string(), "--data",
                         (dir / "data").string(), "--out", (dir / "seg").string(), "--pgm"},
                        log) == 0;
    if (!ok) return {false, "chain failed, see log"};
    runs.push_back(read_tree(dir));
  }
  return {runs[0] == runs[1], std::to_string(runs[0].size()) + " files compared, " +
                                  (runs[0] == runs[1] ? "all bitwise identical" : "differences found")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks", "oce_acceptance"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  fs::create_directories(work);
  std::ofstream log(fs::path(work) / "pipeline.log");

  const std::vector<std::pair<int, std::string>> names{
      {1, "gradient suite"},    {2, "theory suite"},      {3, "loss fixed point"}, {4, "oracle equivalences"},
      {5, "metric oracles"},    {6, "desk-scale run"},    {7, "determinism"},      {8, "shrinkage sanity"}};
  std::optional<DeskRun> desk;
  auto desk_result = [&]() -> const DeskRun& {
    if (!desk) desk = desk_run(fs::path(work) / "desk", log);
    return *desk;
  };
  bool all = true;
  for (const auto& [n, name] : names) {
    if (!wanted(n)) continue;
    Outcome o{false, ""};
    try {
      switch (n) {
        case 1: o = criterion_gradients(); break;
        case 2: o = criterion_theory(); break;
        case 3: o = criterion_fixed_point(); break;
        case 4: o = criterion_oracles(); break;
        case 5: o = criterion_metrics(); break;
        case 6: o = criterion_desk(desk_result()); break;
        case 7: o = criterion_determinism(fs::path(work) / "determinism", log); break;
        case 8: o = criterion_shrink(desk_result()); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d %s: %s  %s\n", n, name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
