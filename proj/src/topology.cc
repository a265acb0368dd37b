#include "afl/topology.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "afl/errors.h"
#include "binary_io.h"

namespace afl {
namespace {

constexpr double kMinRay = 1e-9;

void check_dims(std::size_t width, std::size_t height, std::size_t keypoints) {
  if (width < 2 || height < 2 || keypoints < 1) {
    throw ContractError("heatmap stack: need W, H >= 2 and K >= 1, got W=" +
                        std::to_string(width) + " H=" + std::to_string(height) +
                        " K=" + std::to_string(keypoints));
  }
}

}  // namespace

HeatmapStack::HeatmapStack(std::size_t width, std::size_t height, std::size_t keypoints)
    : width_(width), height_(height), keypoints_(keypoints),
      data_(Shape{keypoints, height, width}) {
  check_dims(width, height, keypoints);
}

HeatmapStack::HeatmapStack(const Tensor& maps) : width_(0), height_(0), keypoints_(0), data_(maps) {
  if (maps.rank() != 3) {
    throw ContractError("heatmap stack: expected [K x H x W], got " + shape_str(maps.shape()));
  }
  keypoints_ = maps.dim(0);
  height_ = maps.dim(1);
  width_ = maps.dim(2);
  check_dims(width_, height_, keypoints_);
  for (double v : maps.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError("heatmap stack: entry " + std::to_string(v) + " outside [0,1]");
    }
  }
}

double HeatmapStack::map_max(std::size_t k) const {
  const double* begin = data_.data() + k * height_ * width_;
  return *std::max_element(begin, begin + height_ * width_);
}

double HeatmapStack::map_sum(std::size_t k) const {
  const double* begin = data_.data() + k * height_ * width_;
  double s = 0.0;
  for (std::size_t i = 0; i < height_ * width_; ++i) s += begin[i];
  return s;
}

std::size_t CentroidSet::existing_count() const {
  return static_cast<std::size_t>(
      std::count_if(points.begin(), points.end(), [](const auto& p) { return p.has_value(); }));
}

Tensor AffinityPair::flatten() const {
  const std::size_t k = keypoints();
  Tensor out(Shape{2 * k * k});
  std::copy(planar.values().begin(), planar.values().end(), out.data());
  std::copy(angular.values().begin(), angular.values().end(), out.data() + k * k);
  return out;
}

CentroidSet extract_centroids(const HeatmapStack& maps, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ContractError("extract_centroids: threshold must lie in (0,1)");
  }
  CentroidSet out;
  out.points.resize(maps.keypoints());
  for (std::size_t k = 0; k < maps.keypoints(); ++k) {
    if (maps.map_max(k) < threshold) continue;
    double mass = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t y = 0; y < maps.height(); ++y) {
      for (std::size_t x = 0; x < maps.width(); ++x) {
        const double v = maps.at(k, y, x);
        if (v < threshold) continue;
        mass += v;
        sx += v * static_cast<double>(x);
        sy += v * static_cast<double>(y);
      }
    }
    out.points[k] = Point{sx / mass, sy / mass};
  }
  return out;
}

SquareMatrix planar_affinity(const CentroidSet& c, double width, double height) {
  const std::size_t k = c.size();
  const double diagonal = std::hypot(width, height);
  SquareMatrix m(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!c.exists(i)) continue;
    for (std::size_t j = i; j < k; ++j) {
      if (!c.exists(j)) continue;
      const double dist = std::hypot(c.points[i]->x - c.points[j]->x, c.points[i]->y - c.points[j]->y);
      const double v = std::clamp(1.0 - dist / diagonal, 0.0, 1.0);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

SquareMatrix angular_affinity(const CentroidSet& c) {
  const std::size_t k = c.size();
  SquareMatrix m(k);
  const std::size_t n = c.existing_count();
  if (n == 0) return m;

  Point g;
  for (const auto& p : c.points) {
    if (!p) continue;
    g.x += p->x;
    g.y += p->y;
  }
  g.x /= static_cast<double>(n);
  g.y /= static_cast<double>(n);

  for (std::size_t i = 0; i < k; ++i) {
    if (!c.exists(i)) continue;
    const double ax = c.points[i]->x - g.x, ay = c.points[i]->y - g.y;
    const double na = std::hypot(ax, ay);
    for (std::size_t j = i; j < k; ++j) {
      if (!c.exists(j)) continue;
      const double bx = c.points[j]->x - g.x, by = c.points[j]->y - g.y;
      const double nb = std::hypot(bx, by);
      double v = 0.5;
      if (na >= kMinRay && nb >= kMinRay) {
        const double cosine = i == j ? 1.0 : std::clamp((ax * bx + ay * by) / (na * nb), -1.0, 1.0);
        v = 0.5 + 0.5 * cosine;
      }
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

AffinityPair affinity_from_centroids(const CentroidSet& centroids, double width, double height) {
  return {planar_affinity(centroids, width, height), angular_affinity(centroids)};
}

AffinityPair topology_extract(const HeatmapStack& maps, double threshold) {
  return affinity_from_centroids(extract_centroids(maps, threshold),
                                 static_cast<double>(maps.width()),
                                 static_cast<double>(maps.height()));
}

// --- file formats ------------------------------------------------------------------

void write_heatmaps(const HeatmapStack& maps, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  binary::write_magic(os, "AFLH");
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(maps.width()));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(maps.height()));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(maps.keypoints()));
  for (double v : maps.tensor().values()) binary::write_le<float>(os, static_cast<float>(v));
  if (!os) throw IoError("write failed for " + path.string());
}

HeatmapStack read_heatmaps(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  binary::expect_magic(is, "AFLH");
  const auto w = binary::read_le<std::uint32_t>(is, "width");
  const auto h = binary::read_le<std::uint32_t>(is, "height");
  const auto k = binary::read_le<std::uint32_t>(is, "keypoint count");
  Tensor t(Shape{k, h, w});
  for (double& v : t.values()) v = binary::read_le<float>(is, "heatmap data");
  return HeatmapStack(t);
}

void write_affinity(const AffinityPair& affinity, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  binary::write_magic(os, "AFLA");
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(affinity.keypoints()));
  for (double v : affinity.planar.values()) binary::write_le<double>(os, v);
  for (double v : affinity.angular.values()) binary::write_le<double>(os, v);
  if (!os) throw IoError("write failed for " + path.string());
}

AffinityPair read_affinity(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  binary::expect_magic(is, "AFLA");
  const auto k = binary::read_le<std::uint32_t>(is, "keypoint count");
  AffinityPair a{SquareMatrix(k), SquareMatrix(k)};
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) a.planar(i, j) = binary::read_le<double>(is, "planar");
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) a.angular(i, j) = binary::read_le<double>(is, "angular");
  return a;
}

}  // namespace afl
