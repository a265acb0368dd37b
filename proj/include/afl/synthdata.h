#ifndef AFL_SYNTHDATA_H_
#define AFL_SYNTHDATA_H_

// Procedural datasets: single-skeleton keypoint scenes with a generator-side
// easy/hard tag, and an imbalanced 2-D Gaussian-mixture classification set.
// Every sample draws from its own RNG stream derived from (seed, id), so
// datasets regenerate bit-identically in any order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "afl/tensor.h"
#include "afl/topology.h"

namespace afl {

enum class Difficulty { kEasy, kHard };

std::string_view to_string(Difficulty d);
Difficulty parse_difficulty(std::string_view s);

enum class Task { kKeypoint, kClassification };

std::string_view to_string(Task t);
Task parse_task(std::string_view s);

std::uint64_t splitmix64(std::uint64_t x);
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t id);

struct SkeletonTemplate {
  // Canonical joint offsets in units of the skeleton scale.
  std::vector<Point> joints;
  std::vector<std::pair<std::size_t, std::size_t>> limbs;
};

// Eight joints: head, neck, hands, hips, feet.
SkeletonTemplate default_skeleton();
// K joints on an ellipse, each linked to the next; for K other than 8.
SkeletonTemplate ring_skeleton(std::size_t k);

struct SceneConfig {
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t keypoints = 8;
  SkeletonTemplate skeleton = default_skeleton();
  double hard_fraction = 0.2;
  std::size_t occlusion_min = 2;
  std::size_t occlusion_max = 3;
  // Per-joint Gaussian jitter, as a fraction of the skeleton scale.
  double jitter_easy = 0.04;
  double jitter_hard = 0.35;
  double scale_min = 8.0;
  double scale_max = 11.0;
  double radius = 1.5;
  double noise = 0.1;

  void validate() const;
};

struct Sample {
  int id = 0;
  Tensor input;
  // Keypoint task: ground-truth maps and the rendered joint centres.
  std::optional<HeatmapStack> heatmaps;
  CentroidSet keypoints;
  // Classification task.
  int label = -1;
  // Generator metadata; never an input to any network.
  Difficulty tag = Difficulty::kEasy;
};

struct Dataset {
  Task task = Task::kKeypoint;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t keypoints = 0;
  std::size_t classes = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t count(Difficulty tag) const;
};

// Unnormalised Gaussian bump with peak 1 per present keypoint; all-zero map
// for a missing one. Coordinates must lie on the pixel grid [0,W-1]x[0,H-1].
HeatmapStack render_heatmaps(const std::vector<std::optional<Point>>& keypoints,
                             std::size_t width, std::size_t height, double radius);

Sample gen_keypoint_scene(std::mt19937_64& rng, const SceneConfig& cfg, int id);

Dataset make_keypoint_dataset(const SceneConfig& cfg, std::uint64_t seed, std::size_t count,
                              int first_id = 0);

// Class c receives n_c samples with max(n_c)/min(n_c) == imbalance_ratio
// (up to integer rounding); class 0 is the majority. Samples of the smallest
// class are tagged hard.
Dataset gen_classification_set(std::uint64_t seed, std::size_t n, std::size_t classes,
                               double imbalance_ratio, double separation = 2.0,
                               int first_id = 0);

std::vector<std::size_t> class_counts(std::size_t n, std::size_t classes, double imbalance_ratio);

// On-disk layout: <dir>/<manifest> plus heatmaps/<id>.aflh and images/<id>.aflh
// for keypoint sets; classification manifests carry the points inline.
void write_dataset(const Dataset& data, const std::filesystem::path& dir,
                   std::string_view manifest_name);
Dataset read_dataset(const std::filesystem::path& dir, std::string_view manifest_name);

}  // namespace afl

#endif  // AFL_SYNTHDATA_H_
