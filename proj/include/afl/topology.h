#ifndef AFL_TOPOLOGY_H_
#define AFL_TOPOLOGY_H_

// Topology extractor: heatmap stack -> keypoint centroids -> planar and
// angular affinity matrices. Pure functions over values; the extractor never
// sits on a gradient path.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "afl/tensor.h"

namespace afl {

inline constexpr double kExistenceThreshold = 0.5;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// K maps of H rows by W columns, stored map-major then row-major. Entries in
// [0,1]; pixel (x, y) is column x of row y.
class HeatmapStack {
 public:
  HeatmapStack(std::size_t width, std::size_t height, std::size_t keypoints);
  // From a [K x H x W] tensor; throws ContractError on bad shape or range.
  explicit HeatmapStack(const Tensor& maps);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t keypoints() const { return keypoints_; }

  double at(std::size_t k, std::size_t y, std::size_t x) const {
    return data_[(k * height_ + y) * width_ + x];
  }
  double& at(std::size_t k, std::size_t y, std::size_t x) {
    return data_[(k * height_ + y) * width_ + x];
  }
  double map_max(std::size_t k) const;
  double map_sum(std::size_t k) const;

  const Tensor& tensor() const { return data_; }
  // Callers must keep entries in [0,1].
  Tensor& mutable_tensor() { return data_; }

 private:
  std::size_t width_;
  std::size_t height_;
  std::size_t keypoints_;
  Tensor data_;
};

struct CentroidSet {
  std::vector<std::optional<Point>> points;

  std::size_t size() const { return points.size(); }
  bool exists(std::size_t k) const { return points[k].has_value(); }
  std::size_t existing_count() const;
};

// Dense K x K matrix.
class SquareMatrix {
 public:
  explicit SquareMatrix(std::size_t n = 0) : n_(n), data_(n * n, 0.0) {}
  std::size_t n() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
  const std::vector<double>& values() const { return data_; }

  friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<double> data_;
};

struct AffinityPair {
  SquareMatrix planar;
  SquareMatrix angular;

  std::size_t keypoints() const { return planar.n(); }
  // Critic input: planar entries then angular entries, each row-major.
  Tensor flatten() const;

  friend bool operator==(const AffinityPair&, const AffinityPair&) = default;
};

// Keypoint k exists iff its map peaks at or above `threshold`; its centroid is
// the intensity-weighted mean over the entries at or above the threshold.
CentroidSet extract_centroids(const HeatmapStack& maps, double threshold = kExistenceThreshold);

// 1 - |c_i - c_j| / |(W, H)|; rows and columns of missing keypoints stay 0.
SquareMatrix planar_affinity(const CentroidSet& centroids, double width, double height);

// 1/2 + 1/2 cos of the angle at the global centroid between the rays to c_i
// and c_j. A ray shorter than 1e-9 gives the neutral value 1/2.
SquareMatrix angular_affinity(const CentroidSet& centroids);

AffinityPair affinity_from_centroids(const CentroidSet& centroids, double width, double height);
AffinityPair topology_extract(const HeatmapStack& maps, double threshold = kExistenceThreshold);

// "AFLH": u32 W, u32 H, u32 K, f32 data (map-major, row-major), little-endian.
void write_heatmaps(const HeatmapStack& maps, const std::filesystem::path& path);
HeatmapStack read_heatmaps(const std::filesystem::path& path);

// "AFLA": u32 K, then planar and angular as f64 row-major, little-endian.
void write_affinity(const AffinityPair& affinity, const std::filesystem::path& path);
AffinityPair read_affinity(const std::filesystem::path& path);

}  // namespace afl

#endif  // AFL_TOPOLOGY_H_
