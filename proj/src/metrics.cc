#include "afl/metrics.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "afl/errors.h"

namespace afl {

PckCounts pck_counts(const HeatmapStack& pred, const CentroidSet& truth, double radius_fraction,
                     double threshold) {
  if (!(radius_fraction > 0.0)) throw ContractError("pck: radius_fraction must be > 0");
  if (truth.size() != pred.keypoints()) {
    throw ContractError("pck: prediction has " + std::to_string(pred.keypoints()) +
                        " maps, truth has " + std::to_string(truth.size()) + " keypoints");
  }
  const CentroidSet found = extract_centroids(pred, threshold);
  const double radius =
      radius_fraction * static_cast<double>(std::max(pred.width(), pred.height()));
  PckCounts c;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (!truth.exists(k)) continue;
    ++c.total;
    if (!found.exists(k)) continue;
    const double dist =
        std::hypot(found.points[k]->x - truth.points[k]->x, found.points[k]->y - truth.points[k]->y);
    if (dist <= radius) ++c.correct;
  }
  return c;
}

double pck(const HeatmapStack& pred, const CentroidSet& truth, double radius_fraction,
           double threshold) {
  const PckCounts c = pck_counts(pred, truth, radius_fraction, threshold);
  return c.total == 0 ? 1.0 : static_cast<double>(c.correct) / static_cast<double>(c.total);
}

double pck(std::span<const HeatmapStack> preds, std::span<const CentroidSet> truths,
           double radius_fraction, double threshold) {
  if (preds.size() != truths.size()) throw ContractError("pck: prediction/truth count mismatch");
  PckCounts all;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const PckCounts c = pck_counts(preds[i], truths[i], radius_fraction, threshold);
    all.correct += c.correct;
    all.total += c.total;
  }
  return all.total == 0 ? 1.0 : static_cast<double>(all.correct) / static_cast<double>(all.total);
}

FalseNegatives false_negatives(std::span<const HeatmapStack> preds,
                               std::span<const std::vector<bool>> truth_exists, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ContractError("false_negatives: threshold must lie in (0,1)");
  }
  if (preds.size() != truth_exists.size()) {
    throw ContractError("false_negatives: prediction/mask count mismatch");
  }
  FalseNegatives fn;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (truth_exists[i].size() != preds[i].keypoints()) {
      throw ContractError("false_negatives: mask length differs from keypoint count");
    }
    for (std::size_t k = 0; k < preds[i].keypoints(); ++k) {
      if (!truth_exists[i][k]) continue;
      ++fn.total;
      if (preds[i].map_max(k) < threshold) ++fn.count;
    }
  }
  return fn;
}

std::size_t argmax(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double top1_accuracy(std::span<const Tensor> probs, std::span<const int> labels) {
  if (probs.empty()) throw ContractError("top1_accuracy: empty input");
  if (probs.size() != labels.size()) throw ContractError("top1_accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (static_cast<int>(argmax(probs[i])) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

std::vector<double> class_recall(std::span<const Tensor> probs, std::span<const int> labels,
                                 std::size_t classes) {
  if (probs.size() != labels.size()) throw ContractError("class_recall: length mismatch");
  std::vector<std::size_t> hits(classes, 0), totals(classes, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= classes) throw ContractError("class_recall: label out of range");
    ++totals[c];
    if (argmax(probs[i]) == c) ++hits[c];
  }
  std::vector<double> recall(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    if (totals[c] > 0) recall[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
  }
  return recall;
}

}  // namespace afl
