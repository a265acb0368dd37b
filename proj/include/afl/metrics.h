#ifndef AFL_METRICS_H_
#define AFL_METRICS_H_

#include <cstddef>
#include <span>
#include <vector>

#include "afl/tensor.h"
#include "afl/topology.h"

namespace afl {

inline constexpr double kDefaultPckFraction = 0.05;

struct EvalResult {
  double pck = 0.0;
  std::size_t false_negative_count = 0;
  std::size_t total_keypoints = 0;
  double top1_accuracy = 0.0;
  // Recall of the smallest class (classification only).
  double minority_recall = 0.0;
};

struct PckCounts {
  std::size_t correct = 0;
  std::size_t total = 0;
};

// Counts ground-truth keypoints whose predicted centroid lies within
// radius_fraction * max(W, H) of the truth. A keypoint missing from the
// prediction counts as a miss; keypoints missing from the truth are skipped.
PckCounts pck_counts(const HeatmapStack& pred, const CentroidSet& truth,
                     double radius_fraction = kDefaultPckFraction,
                     double threshold = kExistenceThreshold);

// Fraction for one image; 1.0 when the truth has no keypoints.
double pck(const HeatmapStack& pred, const CentroidSet& truth,
           double radius_fraction = kDefaultPckFraction, double threshold = kExistenceThreshold);

// Pooled over an evaluation set.
double pck(std::span<const HeatmapStack> preds, std::span<const CentroidSet> truths,
           double radius_fraction = kDefaultPckFraction, double threshold = kExistenceThreshold);

struct FalseNegatives {
  std::size_t count = 0;
  std::size_t total = 0;
};

// Keypoints present in the truth whose predicted map never reaches `threshold`.
FalseNegatives false_negatives(std::span<const HeatmapStack> preds,
                               std::span<const std::vector<bool>> truth_exists,
                               double threshold = kExistenceThreshold);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(const Tensor& v);

double top1_accuracy(std::span<const Tensor> probs, std::span<const int> labels);

// Per-class recall; a class with no samples gets recall 0.
std::vector<double> class_recall(std::span<const Tensor> probs, std::span<const int> labels,
                                 std::size_t classes);

}  // namespace afl

#endif  // AFL_METRICS_H_
