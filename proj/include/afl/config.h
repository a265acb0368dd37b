#ifndef AFL_CONFIG_H_
#define AFL_CONFIG_H_

// Flat key=value run configuration. Keys use dotted section prefixes
// (data.*, train.*); '#' starts a comment. Unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "afl/errors.h"
#include "afl/synthdata.h"
#include "afl/train.h"

namespace afl {

class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct RunConfig {
  std::uint64_t seed = 0;

  // data.*
  Task task = Task::kKeypoint;
  SceneConfig scene;
  std::size_t train_count = 2000;
  std::size_t eval_count = 400;
  std::size_t classes = 2;
  double imbalance_ratio = 9.0;
  double separation = 2.0;
  // Dataset written by `gen`; empty means generate in memory.
  std::string data_dir;

  // train.*
  TrainConfig train;
  // Tracked ids when train.tracked_ids is empty: the first N easy and first N
  // hard training samples.
  std::size_t track_per_group = 10;
  double f_head_prior = 0.01;
  // Epochs between checkpoints; 0 writes only the final parameters.
  std::size_t checkpoint_every = 0;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

// Every accepted key, sorted by name.
const std::vector<ConfigKey>& config_keys();

// Applies one assignment; throws ConfigError for unknown keys or bad values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// All keys with defaults materialised, one "key=value" line each, sorted.
std::string resolved_config(const RunConfig& cfg);

// Final consistency pass: derives the skeleton and threshold-dependent
// fields and validates the result.
void finalize_config(RunConfig& cfg);

// SHA-1 of the content as a git blob ("blob <len>\0<content>"), lowercase hex.
std::string git_blob_hash(std::string_view content);

}  // namespace afl

#endif  // AFL_CONFIG_H_
