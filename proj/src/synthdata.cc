#include "afl/synthdata.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

#include "afl/errors.h"

namespace afl {
namespace {

constexpr double kLimbIntensity = 0.3;
constexpr double kLimbHalfWidth = 0.6;

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

double segment_distance(double px, double py, const Point& a, const Point& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (a.x + t * vx), py - (a.y + t * vy));
}

// Peak input brightness of joint k; distinct per joint so f can tell them apart.
double joint_intensity(std::size_t k, std::size_t count) {
  if (count == 1) return 1.0;
  return 0.55 + 0.45 * static_cast<double>(k) / static_cast<double>(count - 1);
}

std::string sample_file(std::string_view sub, int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.aflh", id);
  return std::string(sub) + "/" + buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::string_view to_string(Difficulty d) { return d == Difficulty::kEasy ? "easy" : "hard"; }

Difficulty parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "hard") return Difficulty::kHard;
  throw IoError("unknown difficulty tag \"" + std::string(s) + "\"");
}

std::string_view to_string(Task t) {
  return t == Task::kKeypoint ? "keypoint" : "classification";
}

Task parse_task(std::string_view s) {
  if (s == "keypoint") return Task::kKeypoint;
  if (s == "classification") return Task::kClassification;
  throw IoError("unknown task \"" + std::string(s) + "\" (expected keypoint|classification)");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t id) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ id));
}

SkeletonTemplate default_skeleton() {
  SkeletonTemplate t;
  t.joints = {
      {0.0, -1.0},    // head
      {0.0, -0.6},    // neck
      {-0.75, -0.15}, // left hand
      {0.75, -0.15},  // right hand
      {-0.3, 0.2},    // left hip
      {0.3, 0.2},     // right hip
      {-0.4, 1.0},    // left foot
      {0.4, 1.0},     // right foot
  };
  t.limbs = {{0, 1}, {1, 2}, {1, 3}, {1, 4}, {1, 5}, {4, 5}, {4, 6}, {5, 7}};
  return t;
}

SkeletonTemplate ring_skeleton(std::size_t k) {
  SkeletonTemplate t;
  for (std::size_t i = 0; i < k; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    t.joints.push_back({0.7 * std::sin(a), -std::cos(a)});
    if (k > 1) t.limbs.emplace_back(i, (i + 1) % k);
  }
  return t;
}

void SceneConfig::validate() const {
  auto fail = [](const std::string& why) { throw ContractError("scene config: " + why); };
  if (width < 8 || height < 8) fail("width and height must be >= 8");
  if (keypoints < 1) fail("keypoints must be >= 1");
  if (skeleton.joints.size() != keypoints) fail("skeleton joint count differs from keypoints");
  if (!(hard_fraction >= 0.0 && hard_fraction <= 1.0)) fail("hard_fraction must lie in [0,1]");
  if (occlusion_min > occlusion_max) fail("occlusion_min > occlusion_max");
  if (occlusion_max > keypoints) fail("occlusion_max exceeds keypoints");
  if (!(radius > 0.0)) fail("radius must be > 0");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) fail("need 0 < scale_min <= scale_max");
  if (!(jitter_easy >= 0.0 && jitter_hard >= 0.0)) fail("jitter scales must be >= 0");
  if (!(noise >= 0.0)) fail("noise must be >= 0");
}

std::size_t Dataset::count(Difficulty tag) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [tag](const Sample& s) { return s.tag == tag; }));
}

HeatmapStack render_heatmaps(const std::vector<std::optional<Point>>& keypoints,
                             std::size_t width, std::size_t height, double radius) {
  if (!(radius > 0.0)) throw ContractError("render_heatmaps: radius must be > 0");
  HeatmapStack maps(width, height, keypoints.size());
  const double denom = 2.0 * radius * radius;
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    if (!keypoints[k]) continue;
    const Point p = *keypoints[k];
    if (!(p.x >= 0.0 && p.x <= static_cast<double>(width - 1) && p.y >= 0.0 &&
          p.y <= static_cast<double>(height - 1))) {
      throw ContractError("render_heatmaps: keypoint " + std::to_string(k) + " at (" +
                          std::to_string(p.x) + ", " + std::to_string(p.y) + ") is off the grid");
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) - p.x, dy = static_cast<double>(y) - p.y;
        maps.at(k, y, x) = std::exp(-(dx * dx + dy * dy) / denom);
      }
    }
  }
  return maps;
}

Sample gen_keypoint_scene(std::mt19937_64& rng, const SceneConfig& cfg, int id) {
  cfg.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k_count = cfg.keypoints;
  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);

  Sample s;
  s.id = id;
  s.tag = unit(rng) < cfg.hard_fraction ? Difficulty::kHard : Difficulty::kEasy;
  const bool hard = s.tag == Difficulty::kHard;

  // Template placement keeps the undistorted skeleton one pixel inside the frame.
  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
  for (const Point& j : cfg.skeleton.joints) {
    min_x = std::min(min_x, j.x);
    max_x = std::max(max_x, j.x);
    min_y = std::min(min_y, j.y);
    max_y = std::max(max_y, j.y);
  }
  const double max_scale =
      std::min((w - 3.0) / std::max(max_x - min_x, 1e-9), (h - 3.0) / std::max(max_y - min_y, 1e-9));
  const double scale =
      std::min(cfg.scale_min + (cfg.scale_max - cfg.scale_min) * unit(rng), max_scale);
  const double cx_lo = 1.0 - scale * min_x, cx_hi = w - 2.0 - scale * max_x;
  const double cy_lo = 1.0 - scale * min_y, cy_hi = h - 2.0 - scale * max_y;
  const double cx = cx_lo + (cx_hi - cx_lo) * unit(rng);
  const double cy = cy_lo + (cy_hi - cy_lo) * unit(rng);
  const double jitter = (hard ? cfg.jitter_hard : cfg.jitter_easy) * scale;

  std::vector<Point> joints(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    const Point& t = cfg.skeleton.joints[k];
    const double x = cx + scale * t.x + jitter * normal(rng);
    const double y = cy + scale * t.y + jitter * normal(rng);
    // Rendered centres sit on pixel centres so every map peaks at exactly 1.
    joints[k] = {std::round(std::clamp(x, 1.0, w - 2.0)), std::round(std::clamp(y, 1.0, h - 2.0))};
  }

  std::vector<bool> visible(k_count, true);
  if (hard && cfg.occlusion_max > 0) {
    std::uniform_int_distribution<std::size_t> occ(cfg.occlusion_min, cfg.occlusion_max);
    const std::size_t n_occ = occ(rng);
    std::vector<std::size_t> order(k_count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n_occ; ++i) visible[order[i]] = false;
  }

  s.keypoints.points.resize(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    if (visible[k]) s.keypoints.points[k] = joints[k];
  }
  HeatmapStack maps = render_heatmaps(s.keypoints.points, cfg.width, cfg.height, cfg.radius);
  for (double& v : maps.mutable_tensor().values()) v = quantize_f32(v);
  s.heatmaps = std::move(maps);

  Tensor image(Shape{1, cfg.height, cfg.width});
  const double denom = 2.0 * cfg.radius * cfg.radius;
  for (std::size_t y = 0; y < cfg.height; ++y) {
    for (std::size_t x = 0; x < cfg.width; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      double v = 0.0;
      for (const auto& [a, b] : cfg.skeleton.limbs) {
        if (!visible[a] || !visible[b]) continue;
        if (segment_distance(px, py, joints[a], joints[b]) <= kLimbHalfWidth) {
          v = std::max(v, kLimbIntensity);
        }
      }
      for (std::size_t k = 0; k < k_count; ++k) {
        if (!visible[k]) continue;
        const double dx = px - joints[k].x, dy = py - joints[k].y;
        v = std::max(v, joint_intensity(k, k_count) * std::exp(-(dx * dx + dy * dy) / denom));
      }
      const double noise = cfg.noise * unit(rng);
      image[y * cfg.width + x] = quantize_f32(std::min(1.0, v + noise));
    }
  }
  s.input = std::move(image);
  return s;
}

Dataset make_keypoint_dataset(const SceneConfig& cfg, std::uint64_t seed, std::size_t count,
                              int first_id) {
  cfg.validate();
  Dataset data;
  data.task = Task::kKeypoint;
  data.width = cfg.width;
  data.height = cfg.height;
  data.keypoints = cfg.keypoints;
  data.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int id = first_id + static_cast<int>(i);
    std::mt19937_64 rng = sample_rng(seed, static_cast<std::uint64_t>(id));
    data.samples.push_back(gen_keypoint_scene(rng, cfg, id));
  }
  return data;
}

std::vector<std::size_t> class_counts(std::size_t n, std::size_t classes, double ratio) {
  if (classes < 2) throw ContractError("classification set: classes must be >= 2");
  if (!(ratio >= 1.0)) throw ContractError("classification set: imbalance_ratio must be >= 1");
  // Geometric decay from class 0 (largest) to class C-1 (smallest).
  std::vector<double> weights(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    weights[c] = std::pow(ratio, -static_cast<double>(c) / static_cast<double>(classes - 1));
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(classes);
  std::vector<std::pair<double, std::size_t>> fractions;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double exact = static_cast<double>(n) * weights[c] / total;
    // Guard against 899.9999999 style rounding of exact partitions.
    const double floor_v = std::floor(exact + 1e-9);
    counts[c] = static_cast<std::size_t>(floor_v);
    assigned += counts[c];
    fractions.emplace_back(exact - floor_v, c);
  }
  std::stable_sort(fractions.begin(), fractions.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) counts[fractions[i].second] += 1;
  return counts;
}

Dataset gen_classification_set(std::uint64_t seed, std::size_t n, std::size_t classes,
                               double imbalance_ratio, double separation, int first_id) {
  const std::vector<std::size_t> counts = class_counts(n, classes, imbalance_ratio);
  const std::size_t minority = static_cast<std::size_t>(
      std::min_element(counts.begin(), counts.end()) - counts.begin());

  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < classes; ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
  // Label order comes from a stream no sample id can collide with.
  std::mt19937_64 order_rng = sample_rng(seed, ~std::uint64_t{0});
  std::shuffle(labels.begin(), labels.end(), order_rng);

  Dataset data;
  data.task = Task::kClassification;
  data.classes = classes;
  data.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = first_id + static_cast<int>(i);
    s.label = labels[i];
    s.tag = static_cast<std::size_t>(s.label) == minority ? Difficulty::kHard : Difficulty::kEasy;
    std::mt19937_64 rng = sample_rng(seed, static_cast<std::uint64_t>(s.id));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(s.label) / static_cast<double>(classes);
    const double mx = 0.5 * separation * std::cos(angle);
    const double my = 0.5 * separation * std::sin(angle);
    const double x0 = mx + normal(rng);
    const double x1 = my + normal(rng);
    s.input = Tensor::vector({x0, x1});
    data.samples.push_back(std::move(s));
  }
  return data;
}

// --- on-disk datasets --------------------------------------------------------------

void write_dataset(const Dataset& data, const std::filesystem::path& dir,
                   std::string_view manifest_name) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / std::string(manifest_name), std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  if (data.task == Task::kKeypoint) {
    std::filesystem::create_directories(dir / "heatmaps");
    std::filesystem::create_directories(dir / "images");
    manifest << "id,difficulty_tag,heatmap_file\n";
    for (const Sample& s : data.samples) {
      const std::string hm = sample_file("heatmaps", s.id);
      write_heatmaps(*s.heatmaps, dir / hm);
      write_heatmaps(HeatmapStack(s.input), dir / sample_file("images", s.id));
      manifest << s.id << ',' << to_string(s.tag) << ',' << hm << '\n';
    }
  } else {
    manifest << "id,difficulty_tag,label,x0,x1\n";
    char buf[96];
    for (const Sample& s : data.samples) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g", s.input[0], s.input[1]);
      manifest << s.id << ',' << to_string(s.tag) << ',' << s.label << ',' << buf << '\n';
    }
  }
  if (!manifest) throw IoError("write failed in " + dir.string());
}

Dataset read_dataset(const std::filesystem::path& dir, std::string_view manifest_name) {
  const std::filesystem::path path = dir / std::string(manifest_name);
  std::ifstream in(path);
  if (!in) throw IoError("missing dataset manifest " + path.string());
  std::string header;
  std::getline(in, header);
  Dataset data;
  std::string line;
  if (header == "id,difficulty_tag,heatmap_file") {
    data.task = Task::kKeypoint;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != 3) throw IoError("bad manifest row: " + line);
      Sample s;
      s.id = std::stoi(cells[0]);
      s.tag = parse_difficulty(cells[1]);
      HeatmapStack maps = read_heatmaps(dir / cells[2]);
      s.keypoints = extract_centroids(maps);
      s.input = read_heatmaps(dir / sample_file("images", s.id)).tensor();
      data.width = maps.width();
      data.height = maps.height();
      data.keypoints = maps.keypoints();
      s.heatmaps = std::move(maps);
      data.samples.push_back(std::move(s));
    }
  } else if (header == "id,difficulty_tag,label,x0,x1") {
    data.task = Task::kClassification;
    int max_label = -1;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != 5) throw IoError("bad manifest row: " + line);
      Sample s;
      s.id = std::stoi(cells[0]);
      s.tag = parse_difficulty(cells[1]);
      s.label = std::stoi(cells[2]);
      s.input = Tensor::vector({std::stod(cells[3]), std::stod(cells[4])});
      max_label = std::max(max_label, s.label);
      data.samples.push_back(std::move(s));
    }
    data.classes = static_cast<std::size_t>(max_label + 1);
  } else {
    throw IoError("unrecognised manifest header in " + path.string() + ": " + header);
  }
  return data;
}

}  // namespace afl
