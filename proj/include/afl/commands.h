#ifndef AFL_COMMANDS_H_
#define AFL_COMMANDS_H_

#include <filesystem>
#include <string>
#include <vector>

#include "afl/config.h"
#include "afl/synthdata.h"
#include "afl/train.h"

namespace afl {

inline constexpr const char* kTrainManifest = "manifest.csv";
inline constexpr const char* kEvalManifest = "eval_manifest.csv";
inline constexpr const char* kRunManifest = "run_manifest.json";

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string resolved_config;
  std::string output_dir;
  std::string config_hash;
};

RunManifest make_manifest(std::string command, const std::filesystem::path& config_path,
                          const RunConfig& cfg, const std::filesystem::path& out);
void write_run_manifest(const RunManifest& m, const std::filesystem::path& path);

struct DatasetPair {
  Dataset train;
  Dataset eval;
};

// Training ids are 0..train_count-1, evaluation ids follow on.
DatasetPair generate_datasets(const RunConfig& cfg);
// Reads data.dir (with {seed} expanded), or generates in memory if it is empty.
DatasetPair load_datasets(const RunConfig& cfg);
std::filesystem::path expand_seed(const std::string& pattern, std::uint64_t seed);

// train.tracked_ids if set, else the first track_per_group easy and hard ids.
std::vector<int> resolve_tracked_ids(const RunConfig& cfg, const Dataset& train);

// `gen`: manifest.csv, eval_manifest.csv, per-sample files, run_manifest.json.
void cmd_gen(const RunConfig& cfg, const std::filesystem::path& config_path,
             const std::filesystem::path& out);

// `train`: traces.csv, summary.csv, checkpoints/, run_manifest.json.
TrainReport cmd_train(const RunConfig& cfg, const std::filesystem::path& config_path,
                      const std::filesystem::path& out);

// `traces`: per-epoch group statistics (difficulty_tag is the only grouping)
// as traces_grouped.csv, plus traces.svg when `svg` is set.
DifficultyTrack cmd_traces(const std::filesystem::path& traces_csv, const std::string& group_by,
                           const std::filesystem::path& out, bool svg);

void write_track_csv(const DifficultyTrack& track, const std::filesystem::path& path);
// Self-contained SVG: unsmoothed group means faint, smoothed curves on top.
std::string render_track_svg(const DifficultyTrack& track);

}  // namespace afl

#endif  // AFL_COMMANDS_H_
