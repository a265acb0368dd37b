#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "afl/errors.h"
#include "afl/synthdata.h"
#include "afl/topology.h"
#include "oracles.h"

using namespace afl;
namespace fs = std::filesystem;

namespace {

CentroidSet points(std::vector<std::optional<Point>> pts) { return CentroidSet{std::move(pts)}; }

// K random centroids in [0,W]x[0,H], each missing with probability 1/4.
CentroidSet random_centroids(std::mt19937_64& rng, std::size_t k, double w, double h) {
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), u(0.0, 1.0);
  CentroidSet c;
  for (std::size_t i = 0; i < k; ++i) {
    if (u(rng) < 0.25) {
      c.points.emplace_back();
    } else {
      c.points.push_back(Point{ux(rng), uy(rng)});
    }
  }
  return c;
}

void check_matrix_against(const SquareMatrix& m, const std::vector<std::vector<double>>& ref,
                          double tol) {
  for (std::size_t i = 0; i < m.n(); ++i) {
    for (std::size_t j = 0; j < m.n(); ++j) {
      REQUIRE(std::abs(m(i, j) - ref[i][j]) < tol);
    }
  }
}

}  // namespace

TEST_CASE("heatmap stacks validate their contents") {
  CHECK_THROWS_AS(HeatmapStack(Tensor({2, 4, 4}, 1.5)), ContractError);
  CHECK_THROWS_AS(HeatmapStack(Tensor({4, 4})), ContractError);
  const HeatmapStack h(Tensor({2, 3, 4}, 0.25));
  CHECK(h.keypoints() == 2);
  CHECK(h.height() == 3);
  CHECK(h.width() == 4);
  CHECK(h.map_sum(1) == 3.0);
}

TEST_CASE("centroid extraction") {
  SUBCASE("a single spike") {
    HeatmapStack h(32, 32, 1);
    h.at(0, 20, 10) = 1.0;
    const CentroidSet c = extract_centroids(h);
    REQUIRE(c.exists(0));
    CHECK(c.points[0]->x == 10.0);
    CHECK(c.points[0]->y == 20.0);
  }
  SUBCASE("an all-zero map is missing") {
    HeatmapStack h(8, 8, 2);
    h.at(1, 3, 3) = 0.9;
    const CentroidSet c = extract_centroids(h);
    CHECK_FALSE(c.exists(0));
    CHECK(c.exists(1));
    CHECK(c.existing_count() == 1);
  }
  SUBCASE("two equal spikes") {
    HeatmapStack h(8, 8, 1);
    h.at(0, 0, 0) = 1.0;
    h.at(0, 0, 4) = 1.0;
    const CentroidSet c = extract_centroids(h);
    CHECK(c.points[0]->x == 2.0);
    CHECK(c.points[0]->y == 0.0);
  }
  SUBCASE("existence is decided by the peak against the threshold") {
    HeatmapStack h(4, 4, 1);
    h.at(0, 1, 1) = 0.5;
    CHECK(extract_centroids(h, 0.5).exists(0));
    CHECK_FALSE(extract_centroids(h, 0.51).exists(0));
  }
  SUBCASE("sub-threshold mass is ignored") {
    HeatmapStack h(8, 8, 1);
    h.at(0, 2, 2) = 0.8;
    h.at(0, 6, 6) = 0.4;
    const CentroidSet c = extract_centroids(h);
    CHECK(c.points[0]->x == 2.0);
  }
  SUBCASE("bad thresholds") {
    HeatmapStack h(4, 4, 1);
    CHECK_THROWS_AS(extract_centroids(h, 0.0), ContractError);
    CHECK_THROWS_AS(extract_centroids(h, 1.0), ContractError);
  }
}

TEST_CASE("planar affinity") {
  const CentroidSet c = points({Point{0, 0}, Point{64, 48}, Point{0, 0}, std::nullopt});
  const SquareMatrix m = planar_affinity(c, 64, 64);
  CHECK(m(0, 2) == 1.0);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == doctest::Approx(0.11611652351681559).epsilon(1e-14));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(m(i, 3) == 0.0);
    CHECK(m(3, i) == 0.0);
  }
}

TEST_CASE("angular affinity") {
  SUBCASE("diagonal entries off the centroid are 1") {
    const SquareMatrix m = angular_affinity(points({Point{0, 0}, Point{3, 1}}));
    CHECK(m(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("opposite rays give 0") {
    const SquareMatrix m = angular_affinity(points({Point{0, 0}, Point{2, 0}}));
    CHECK(m(0, 1) == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("three-point anchor") {
    const SquareMatrix m = angular_affinity(points({Point{0, 0}, Point{2, 0}, Point{0, 2}}));
    CHECK(m(0, 1) == doctest::Approx(0.34188611699158103).epsilon(1e-14));
    CHECK(m(0, 2) == doctest::Approx(0.34188611699158103).epsilon(1e-14));
  }
  SUBCASE("a ray of zero length is neutral") {
    const SquareMatrix m = angular_affinity(points({Point{5, 5}, std::nullopt}));
    CHECK(m(0, 0) == 0.5);
    CHECK(m(0, 1) == 0.0);
    CHECK(m(1, 1) == 0.0);
  }
}

TEST_CASE("topology_extract on empty maps") {
  const AffinityPair a = topology_extract(HeatmapStack(6, 6, 3));
  for (double v : a.planar.values()) CHECK(v == 0.0);
  for (double v : a.angular.values()) CHECK(v == 0.0);
  CHECK(a.flatten().size() == 18);
}

TEST_CASE("flatten puts planar entries before angular") {
  const AffinityPair a = affinity_from_centroids(points({Point{1, 1}, Point{4, 2}}), 8, 8);
  const Tensor t = a.flatten();
  CHECK(t[1] == a.planar(0, 1));
  CHECK(t[4 + 1] == a.angular(0, 1));
}

TEST_CASE("relabelling keypoints permutes both matrices") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const CentroidSet c = random_centroids(rng, 6, 32, 24);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    CentroidSet p;
    for (std::size_t i = 0; i < 6; ++i) p.points.push_back(c.points[perm[i]]);
    const AffinityPair a = affinity_from_centroids(c, 32, 24);
    const AffinityPair b = affinity_from_centroids(p, 32, 24);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(b.planar(i, j) == doctest::Approx(a.planar(perm[i], perm[j])).epsilon(1e-12));
        CHECK(b.angular(i, j) == doctest::Approx(a.angular(perm[i], perm[j])).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("property: symmetry, range, zeroing and the coordinate oracle") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t k = 1 + trial % 9;
    const CentroidSet c = random_centroids(rng, k, 32, 32);
    const AffinityPair a = affinity_from_centroids(c, 32, 32);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        REQUIRE(a.planar(i, j) == a.planar(j, i));
        REQUIRE(a.angular(i, j) == a.angular(j, i));
        REQUIRE(a.planar(i, j) >= 0.0);
        REQUIRE(a.planar(i, j) <= 1.0);
        REQUIRE(a.angular(i, j) >= 0.0);
        REQUIRE(a.angular(i, j) <= 1.0);
        if (!c.exists(i) || !c.exists(j)) {
          REQUIRE(a.planar(i, j) == 0.0);
          REQUIRE(a.angular(i, j) == 0.0);
        }
      }
    }
    const oracle::Affinity ref = oracle::affinity_from_points(c.points, 32, 32);
    check_matrix_against(a.planar, ref.planar, 1e-9);
    check_matrix_against(a.angular, ref.angular, 1e-9);
  }
}

TEST_CASE("angular affinity is translation invariant") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> shift(-10.0, 10.0);
  for (int trial = 0; trial < 500; ++trial) {
    const CentroidSet c = random_centroids(rng, 7, 20, 20);
    const double dx = shift(rng), dy = shift(rng);
    CentroidSet moved = c;
    for (auto& p : moved.points) {
      if (p) *p = Point{p->x + dx, p->y + dy};
    }
    const SquareMatrix a = angular_affinity(c), b = angular_affinity(moved);
    for (std::size_t i = 0; i < a.values().size(); ++i) {
      REQUIRE(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
    }
  }
}

TEST_CASE("planar affinity is scale covariant") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> factor(0.1, 10.0);
  for (int trial = 0; trial < 500; ++trial) {
    const CentroidSet c = random_centroids(rng, 7, 30, 20);
    const double s = factor(rng);
    CentroidSet scaled = c;
    for (auto& p : scaled.points) {
      if (p) *p = Point{p->x * s, p->y * s};
    }
    const SquareMatrix a = planar_affinity(c, 30, 20), b = planar_affinity(scaled, 30 * s, 20 * s);
    for (std::size_t i = 0; i < a.values().size(); ++i) {
      REQUIRE(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
    }
  }
}

TEST_CASE("rendered scenes match the brute-force recomputation") {
  SceneConfig cfg;
  const Dataset data = make_keypoint_dataset(cfg, 77, 100);
  for (const Sample& s : data.samples) {
    const HeatmapStack& h = *s.heatmaps;
    const AffinityPair a = topology_extract(h);
    std::vector<std::optional<Point>> c(h.keypoints());
    for (std::size_t k = 0; k < h.keypoints(); ++k) c[k] = oracle::centroid(h, k, 0.5);
    const oracle::Affinity ref =
        oracle::affinity_from_points(c, static_cast<double>(h.width()), static_cast<double>(h.height()));
    check_matrix_against(a.planar, ref.planar, 1e-9);
    check_matrix_against(a.angular, ref.angular, 1e-9);
  }
}

TEST_CASE("heatmap and affinity files round-trip") {
  const fs::path dir = fs::temp_directory_path() / "afl_test_topology";
  fs::create_directories(dir);
  HeatmapStack h(5, 4, 2);
  for (std::size_t i = 0; i < h.tensor().size(); ++i) h.mutable_tensor()[i] = (i % 17) / 16.0;
  write_heatmaps(h, dir / "h.aflh");
  const HeatmapStack back = read_heatmaps(dir / "h.aflh");
  CHECK(back.width() == 5);
  CHECK(back.height() == 4);
  CHECK(back.tensor() == h.tensor());

  const AffinityPair a =
      affinity_from_centroids(points({Point{0.1, 0.3}, Point{3.7, 1.9}, std::nullopt}), 5, 4);
  write_affinity(a, dir / "a.afla");
  CHECK(read_affinity(dir / "a.afla") == a);

  CHECK_THROWS_AS(read_heatmaps(dir / "a.afla"), IoError);
  CHECK_THROWS_AS(read_affinity(dir / "missing.afla"), IoError);
  fs::remove_all(dir);
}
