#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "oce/morphology.hpp"
#include "oce/tensor.hpp"

namespace oce {

/// Annotated instance masks (each (H,W), non-zero = inside); pairwise disjoint.
struct SparseAnnotations {
  std::vector<BoolMask> masks;
};

struct PseudoDataset {
  LabelMask labels;           // predictions corrected by the annotations
  BoolMask known_background;  // unlabeled pixels close to an annotation
};

/// Draws round(fraction * N) ground-truth objects without replacement.
template <typename Rng>
SparseAnnotations sample_annotations(const LabelMask& gt, double fraction, Rng& rng) {
  std::set<std::int32_t> ids;
  for (std::int32_t id : gt.data()) {
    if (id > 0) ids.insert(id);
  }
  std::vector<std::int32_t> pool(ids.begin(), ids.end());
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
  SparseAnnotations out;
  for (std::size_t i = 0; i < std::min(count, pool.size()); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    BoolMask m(gt.shape());
    for (std::size_t p = 0; p < gt.size(); ++p) m[p] = gt[p] == pool[i];
    out.masks.push_back(std::move(m));
  }
  return out;
}

/// Replaces every predicted instance touching an annotation by the
/// annotations themselves. Known background: pixels closer than
/// `background_radius` to an annotated pixel that carry no label.
inline PseudoDataset build_pseudo_dataset(const LabelMask& pred, const SparseAnnotations& annotations,
                                          double background_radius = 30.0) {
  BoolMask annotated(pred.shape());
  for (const BoolMask& m : annotations.masks) {
    if (m.shape() != pred.shape()) throw PreconditionError("build_pseudo_dataset: annotation shape mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i]) continue;
      if (annotated[i]) throw DataError("build_pseudo_dataset: annotations overlap");
      annotated[i] = 1;
    }
  }
  std::set<std::int32_t> touched;
  std::int32_t max_id = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    max_id = std::max(max_id, pred[i]);
    if (annotated[i] && pred[i] > 0) touched.insert(pred[i]);
  }
  PseudoDataset out{pred, BoolMask(pred.shape())};
  for (auto& id : out.labels.storage()) {
    if (touched.count(id)) id = 0;
  }
  std::int32_t next = max_id;
  for (const BoolMask& m : annotations.masks) {
    ++next;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i]) out.labels[i] = next;
    }
  }
  if (!annotations.masks.empty()) {
    const Tensor<double> d2 = squared_distance_to(annotated);
    const double limit = background_radius * background_radius;
    for (std::size_t i = 0; i < d2.size(); ++i) out.known_background[i] = d2[i] < limit && out.labels[i] == 0;
  }
  return out;
}

}  // namespace oce
