#pragma once

// Instance segmentation scores: IoU matching, detection scores at IoU
// thresholds and the cell tracking challenge SEG measure.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/tensor.hpp"

namespace oce {

/// Pairwise overlaps between the objects of two label masks. Ids are listed
/// in ascending order; background (0) is excluded.
struct IouTable {
  std::vector<std::int32_t> gt_ids, pred_ids;
  std::vector<std::size_t> gt_sizes, pred_sizes;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> overlap;  // (gt index, pred index) -> pixels

  double iou(std::size_t g, std::size_t p) const {
    auto it = overlap.find({g, p});
    if (it == overlap.end()) return 0.0;
    const double inter = static_cast<double>(it->second);
    return inter / (static_cast<double>(gt_sizes[g] + pred_sizes[p]) - inter);
  }
};

inline IouTable iou_table(const LabelMask& gt, const LabelMask& pred) {
  if (gt.shape() != pred.shape()) {
    throw PreconditionError("iou: shape mismatch " + shape_str(gt.shape()) + " vs " + shape_str(pred.shape()));
  }
  std::map<std::int32_t, std::size_t> gs, ps;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] > 0) ++gs[gt[i]];
    if (pred[i] > 0) ++ps[pred[i]];
  }
  IouTable t;
  std::map<std::int32_t, std::size_t> gi, pi;
  for (auto [id, n] : gs) {
    gi[id] = t.gt_ids.size();
    t.gt_ids.push_back(id);
    t.gt_sizes.push_back(n);
  }
  for (auto [id, n] : ps) {
    pi[id] = t.pred_ids.size();
    t.pred_ids.push_back(id);
    t.pred_sizes.push_back(n);
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] > 0 && pred[i] > 0) ++t.overlap[{gi[gt[i]], pi[pred[i]]}];
  }
  return t;
}

/// Dense |GT| x |PRED| IoU matrix, row-major.
inline std::vector<double> iou_matrix(const IouTable& t) {
  std::vector<double> m(t.gt_ids.size() * t.pred_ids.size(), 0.0);
  for (const auto& [key, n] : t.overlap) m[key.first * t.pred_ids.size() + key.second] = t.iou(key.first, key.second);
  return m;
}

struct MatchPair {
  std::int32_t gt, pred;
  double iou;
};

struct MatchResult {
  std::vector<MatchPair> pairs;
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// One-to-one matching of pairs with IoU >= t, greedily by descending IoU
/// (ties by gt id, then pred id).
inline MatchResult match_at_threshold(const IouTable& t, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw PreconditionError("match: threshold must be in (0, 1]");
  struct Candidate {
    double iou;
    std::size_t g, p;
  };
  std::vector<Candidate> cands;
  for (const auto& [key, n] : t.overlap) {
    const double v = t.iou(key.first, key.second);
    if (v >= threshold) cands.push_back({v, key.first, key.second});
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.g != b.g) return a.g < b.g;
    return a.p < b.p;
  });
  std::vector<bool> g_used(t.gt_ids.size()), p_used(t.pred_ids.size());
  MatchResult r;
  for (const Candidate& c : cands) {
    if (g_used[c.g] || p_used[c.p]) continue;
    g_used[c.g] = p_used[c.p] = true;
    r.pairs.push_back({t.gt_ids[c.g], t.pred_ids[c.p], c.iou});
  }
  r.tp = r.pairs.size();
  r.fp = t.pred_ids.size() - r.tp;
  r.fn = t.gt_ids.size() - r.tp;
  return r;
}

inline MatchResult match_at_threshold(const LabelMask& gt, const LabelMask& pred, double threshold) {
  return match_at_threshold(iou_table(gt, pred), threshold);
}

struct DetectionScores {
  double f1 = 0, recall = 0, precision = 0, accuracy = 0;
};

inline DetectionScores detection_scores(std::size_t tp, std::size_t fp, std::size_t fn) {
  auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };
  DetectionScores s;
  const double t = static_cast<double>(tp);
  s.recall = ratio(t, t + static_cast<double>(fn));
  s.precision = ratio(t, t + static_cast<double>(fp));
  s.f1 = ratio(2 * s.precision * s.recall, s.precision + s.recall);
  s.accuracy = ratio(t, t + static_cast<double>(fp + fn));
  return s;
}

inline DetectionScores detection_scores(const MatchResult& m) { return detection_scores(m.tp, m.fp, m.fn); }

struct SegScore {
  double total = 0;         // sum of matched IoUs
  std::size_t objects = 0;  // ground-truth objects
  double value() const { return objects ? total / static_cast<double>(objects) : 0.0; }
};

/// SEG bookkeeping for one image: a GT object is matched by the prediction
/// covering strictly more than half of it.
inline SegScore seg_components(const IouTable& t) {
  SegScore s;
  s.objects = t.gt_ids.size();
  for (const auto& [key, n] : t.overlap) {
    if (2 * n > t.gt_sizes[key.first]) s.total += t.iou(key.first, key.second);
  }
  return s;
}

inline double seg_score(const LabelMask& gt, const LabelMask& pred) {
  const SegScore s = seg_components(iou_table(gt, pred));
  if (s.objects == 0) throw DataError("seg_score: ground truth has no objects");
  return s.value();
}

enum class Aggregation { Dataset, PerImage };

struct SweepRow {
  double threshold;
  DetectionScores scores;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  double seg = 0;
};

/// Detection scores per threshold over a set of images. Dataset aggregation
/// sums TP/FP/FN over images before scoring; per-image mode averages the
/// per-image scores. SEG follows the same choice (object-weighted or image mean).
inline SweepReport threshold_sweep(const std::vector<LabelMask>& gt, const std::vector<LabelMask>& pred,
                                   const std::vector<double>& thresholds, Aggregation mode = Aggregation::Dataset) {
  if (thresholds.empty()) throw PreconditionError("threshold_sweep: no thresholds");
  if (gt.size() != pred.size()) throw PreconditionError("threshold_sweep: gt and prediction counts differ");
  std::vector<IouTable> tables;
  tables.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) tables.push_back(iou_table(gt[i], pred[i]));
  SweepReport report;
  const double images = static_cast<double>(tables.size());
  for (double t : thresholds) {
    SweepRow row{t, {}};
    if (mode == Aggregation::Dataset) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (const IouTable& tab : tables) {
        const MatchResult m = match_at_threshold(tab, t);
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
      }
      row.scores = detection_scores(tp, fp, fn);
    } else if (!tables.empty()) {
      for (const IouTable& tab : tables) {
        const DetectionScores s = detection_scores(match_at_threshold(tab, t));
        row.scores.f1 += s.f1 / images;
        row.scores.recall += s.recall / images;
        row.scores.precision += s.precision / images;
        row.scores.accuracy += s.accuracy / images;
      }
    }
    report.rows.push_back(row);
  }
  SegScore total;
  double image_mean = 0;
  for (const IouTable& tab : tables) {
    const SegScore s = seg_components(tab);
    if (s.objects == 0) throw DataError("seg_score: ground truth has no objects");
    total.total += s.total;
    total.objects += s.objects;
    image_mean += s.value() / images;
  }
  report.seg = mode == Aggregation::Dataset ? total.value() : image_mean;
  return report;
}

inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Tab-separated table with header "metric, threshold, value"; SEG has no
/// threshold and is written as NA.
inline void write_score_table(std::ostream& os, const SweepReport& report) {
  os << "metric\tthreshold\tvalue\n";
  for (const SweepRow& r : report.rows) {
    const std::string t = format_score(r.threshold);
    os << "F1\t" << t << '\t' << format_score(r.scores.f1) << '\n';
    os << "Recall\t" << t << '\t' << format_score(r.scores.recall) << '\n';
    os << "Precision\t" << t << '\t' << format_score(r.scores.precision) << '\n';
    os << "Accuracy\t" << t << '\t' << format_score(r.scores.accuracy) << '\n';
  }
  os << "SEG\tNA\t" << format_score(report.seg) << '\n';
}

}  // namespace oce
