#include "afl/config.h"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace afl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("config key " + std::string(key) + ": cannot parse '" + std::string(value) +
                    "' as " + std::string(want));
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
  if (used != s.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t to_size(std::string_view key, std::string_view v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean (true/false)");
}

std::vector<int> to_int_list(std::string_view key, std::string_view v) {
  std::vector<int> out;
  if (v.empty()) return out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const std::size_t comma = std::min(v.find(',', start), v.size());
    const std::string item = trim(v.substr(start, comma - start));
    int x = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      bad_value(key, v, "a comma-separated list of integers");
    }
    out.push_back(x);
    start = comma + 1;
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

struct Handler {
  std::string help;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AFL_DOUBLE(field)                                                                   \
  [](RunConfig& c, std::string_view k, std::string_view v) { c.field = to_double(k, v); }, \
      [](const RunConfig& c) { return fmt_double(c.field); }
#define AFL_SIZE(field)                                                                   \
  [](RunConfig& c, std::string_view k, std::string_view v) { c.field = to_size(k, v); }, \
      [](const RunConfig& c) { return std::to_string(c.field); }
#define AFL_BOOL(field)                                                                   \
  [](RunConfig& c, std::string_view k, std::string_view v) { c.field = to_bool(k, v); }, \
      [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }

const std::map<std::string, Handler, std::less<>>& handlers() {
  static const std::map<std::string, Handler, std::less<>> table = {
      {"seed", {"run seed for data and training", AFL_SIZE(seed)}},
      {"data.task",
       {"keypoint | classification",
        [](RunConfig& c, std::string_view k, std::string_view v) {
          try {
            c.task = parse_task(v);
          } catch (const std::exception&) {
            bad_value(k, v, "keypoint or classification");
          }
        },
        [](const RunConfig& c) { return std::string(to_string(c.task)); }}},
      {"data.width", {"image width", AFL_SIZE(scene.width)}},
      {"data.height", {"image height", AFL_SIZE(scene.height)}},
      {"data.keypoints", {"keypoints per skeleton (8 uses the body template)",
                          AFL_SIZE(scene.keypoints)}},
      {"data.hard_fraction", {"probability that a scene is hard", AFL_DOUBLE(scene.hard_fraction)}},
      {"data.occlusion_min", {"fewest dropped joints in a hard scene", AFL_SIZE(scene.occlusion_min)}},
      {"data.occlusion_max", {"most dropped joints in a hard scene", AFL_SIZE(scene.occlusion_max)}},
      {"data.jitter_easy", {"easy pose jitter, fraction of skeleton scale",
                            AFL_DOUBLE(scene.jitter_easy)}},
      {"data.jitter_hard", {"hard pose jitter, fraction of skeleton scale",
                            AFL_DOUBLE(scene.jitter_hard)}},
      {"data.scale_min", {"smallest skeleton scale in pixels", AFL_DOUBLE(scene.scale_min)}},
      {"data.scale_max", {"largest skeleton scale in pixels", AFL_DOUBLE(scene.scale_max)}},
      {"data.radius", {"heatmap Gaussian radius in pixels", AFL_DOUBLE(scene.radius)}},
      {"data.noise", {"amplitude of uniform background noise", AFL_DOUBLE(scene.noise)}},
      {"data.train_count", {"training samples", AFL_SIZE(train_count)}},
      {"data.eval_count", {"held-out evaluation samples", AFL_SIZE(eval_count)}},
      {"data.classes", {"classification: number of classes", AFL_SIZE(classes)}},
      {"data.imbalance_ratio", {"classification: largest/smallest class size",
                                AFL_DOUBLE(imbalance_ratio)}},
      {"data.separation", {"classification: distance between class means",
                           AFL_DOUBLE(separation)}},
      {"data.dir",
       {"dataset directory from `gen` ({seed} expands); empty generates in memory",
        [](RunConfig& c, std::string_view, std::string_view v) { c.data_dir = std::string(v); },
        [](const RunConfig& c) { return c.data_dir; }}},
      {"train.base_loss",
       {"mse | cross_entropy | focal | focal(<gamma>)",
        [](RunConfig& c, std::string_view k, std::string_view v) {
          if (v.starts_with("focal(") && v.ends_with(")")) {
            c.train.base_loss = BaseLoss::kFocal;
            c.train.gamma = to_double(k, v.substr(6, v.size() - 7));
            return;
          }
          try {
            c.train.base_loss = parse_base_loss(v);
          } catch (const std::exception&) {
            bad_value(k, v, "mse, cross_entropy, focal or focal(<gamma>)");
          }
        },
        [](const RunConfig& c) { return std::string(to_string(c.train.base_loss)); }}},
      {"train.gamma", {"focal loss exponent", AFL_DOUBLE(train.gamma)}},
      {"train.use_afl", {"train with the adversarial focal loss", AFL_BOOL(train.use_afl)}},
      {"train.epochs", {"passes over the training set", AFL_SIZE(train.epochs)}},
      {"train.batch_size", {"samples per update", AFL_SIZE(train.batch_size)}},
      {"train.lr_f", {"main network learning rate", AFL_DOUBLE(train.lr_f)}},
      {"train.lr_d", {"critic learning rate", AFL_DOUBLE(train.lr_d)}},
      {"train.lambda", {"gradient penalty weight", AFL_DOUBLE(train.lambda)}},
      {"train.n_critic", {"critic updates per main-network update", AFL_SIZE(train.n_critic)}},
      {"train.optimizer",
       {"adam | sgd",
        [](RunConfig& c, std::string_view k, std::string_view v) {
          try {
            c.train.optimizer = parse_optimizer(v);
          } catch (const std::exception&) {
            bad_value(k, v, "adam or sgd");
          }
        },
        [](const RunConfig& c) { return std::string(to_string(c.train.optimizer)); }}},
      {"train.tracked_ids",
       {"comma-separated sample ids to trace; empty picks train.track_per_group per tag",
        [](RunConfig& c, std::string_view k, std::string_view v) {
          c.train.tracked_ids = to_int_list(k, v);
        },
        [](const RunConfig& c) { return join_ints(c.train.tracked_ids); }}},
      {"train.track_per_group", {"tracked samples per difficulty tag", AFL_SIZE(track_per_group)}},
      {"train.threshold", {"keypoint existence threshold", AFL_DOUBLE(train.threshold)}},
      {"train.pck_fraction", {"PCK radius as a fraction of max(W,H)", AFL_DOUBLE(train.pck_fraction)}},
      {"train.f_channels", {"keypoint network conv width", AFL_SIZE(train.f_channels)}},
      {"train.classifier_hidden", {"classifier hidden width", AFL_SIZE(train.classifier_hidden)}},
      {"train.d_hidden", {"critic hidden width", AFL_SIZE(train.d_hidden)}},
      {"train.f_head_prior", {"initial keypoint map probability in (0,1)", AFL_DOUBLE(f_head_prior)}},
      {"train.d_zero_init", {"start the critic at all-zero parameters", AFL_BOOL(train.d_zero_init)}},
      {"train.freeze_d", {"never update the critic", AFL_BOOL(train.freeze_d)}},
      {"train.check_invariants", {"assert detachment and per-sample weighting every step",
                                  AFL_BOOL(train.check_invariants)}},
      {"train.checkpoint_every", {"epochs between checkpoints; 0 keeps only the final one",
                                  AFL_SIZE(checkpoint_every)}},
  };
  return table;
}

#undef AFL_DOUBLE
#undef AFL_SIZE
#undef AFL_BOOL

std::string valid_keys() {
  std::string out;
  for (const auto& [name, h] : handlers()) out += "\n  " + name;
  return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& [name, h] : handlers()) out.push_back({name, h.help});
    return out;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto it = handlers().find(key);
  if (it == handlers().end()) {
    throw ConfigError("unknown config key '" + std::string(key) + "'; valid keys:" + valid_keys());
  }
  it->second.set(cfg, key, value);
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) {
  const auto it = handlers().find(key);
  if (it == handlers().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second.get(cfg);
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key +
                        "' already set on line " + std::to_string(prev->second));
    }
    seen[key] = line_no;
    set_config_value(cfg, key, value);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string resolved_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, h] : handlers()) out += name + "=" + h.get(cfg) + "\n";
  return out;
}

void finalize_config(RunConfig& cfg) {
  cfg.scene.skeleton =
      cfg.scene.keypoints == 8 ? default_skeleton() : ring_skeleton(cfg.scene.keypoints);
  cfg.train.task = cfg.task;
  cfg.train.seed = cfg.seed;
  if (!(cfg.f_head_prior > 0.0 && cfg.f_head_prior < 1.0)) {
    throw ConfigError("train.f_head_prior must lie in (0,1)");
  }
  cfg.train.f_head_bias = std::log(cfg.f_head_prior / (1.0 - cfg.f_head_prior));
  if (cfg.task == Task::kKeypoint) {
    cfg.scene.validate();
  } else if (cfg.classes < 2 || !(cfg.imbalance_ratio >= 1.0)) {
    throw ConfigError("classification needs data.classes >= 2 and data.imbalance_ratio >= 1");
  }
  if (cfg.train_count == 0) throw ConfigError("data.train_count must be >= 1");
  cfg.train.validate();
}

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 15];
  }
  return hex;
}

}  // namespace afl
