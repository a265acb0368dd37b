#include <doctest.h>
#include <expat.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "afl/commands.h"
#include "afl/config.h"
#include "afl/errors.h"
#include "afl/verify.h"

using namespace afl;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(# small keypoint run
seed = 4
data.width = 16
data.height = 16
data.keypoints = 4
data.scale_min = 4
data.scale_max = 5
data.hard_fraction = 0.3
data.train_count = 24
data.eval_count = 8
train.f_channels = 2
train.d_hidden = 8
train.batch_size = 8
train.epochs = 2
train.track_per_group = 3
)";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  return out;
}

// Regular files under `dir` mapped to their contents, by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// The small config with `overrides` ("key = value" lines) applied on top.
RunConfig small_config(const std::string& overrides = "") {
  RunConfig cfg = parse_config(kSmallConfig);
  std::stringstream ss(overrides);
  for (std::string line; std::getline(ss, line);) {
    const auto eq = line.find('=');
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(' '));
      v.erase(v.find_last_not_of(' ') + 1);
      return v;
    };
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  finalize_config(cfg);
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AFL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

bool well_formed_xml(const std::string& text) {
  XML_Parser p = XML_ParserCreate(nullptr);
  const bool ok = XML_Parse(p, text.data(), static_cast<int>(text.size()), 1) == XML_STATUS_OK;
  XML_ParserFree(p);
  return ok;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults") {
    const RunConfig cfg = parse_config("");
    CHECK(cfg.train_count == 2000);
    CHECK(cfg.scene.width == 32);
    CHECK(cfg.train.lr_f == 1e-3);
    CHECK(cfg.train.lr_d == 1e-4);
    CHECK(cfg.train.lambda == 10.0);
    CHECK(cfg.train.optimizer == OptimizerKind::kAdam);
  }
  SUBCASE("values and comments") {
    const RunConfig cfg =
        parse_config("seed=12  # trailing\n\n  train.base_loss = focal(0.5)\ndata.task=classification\n");
    CHECK(cfg.seed == 12);
    CHECK(cfg.train.base_loss == BaseLoss::kFocal);
    CHECK(cfg.train.gamma == 0.5);
    CHECK(cfg.task == Task::kClassification);
  }
  SUBCASE("unknown keys list the valid ones") {
    try {
      parse_config("train.learning_rate = 1\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("train.learning_rate") != std::string::npos);
      CHECK(msg.find("train.lr_f") != std::string::npos);
      CHECK(msg.find("data.hard_fraction") != std::string::npos);
    }
  }
  SUBCASE("malformed input") {
    CHECK_THROWS_AS(parse_config("seed 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed=3\nseed=4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.epochs=many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.use_afl=maybe\n"), ConfigError);
  }
  SUBCASE("every listed key can be read back") {
    const RunConfig cfg;
    for (const ConfigKey& k : config_keys()) CHECK_NOTHROW(get_config_value(cfg, k.name));
  }
}

TEST_CASE("resolved configs are complete and stable") {
  RunConfig cfg = small_config("train.lr_f = 0.2\n");
  const std::string resolved = resolved_config(cfg);
  CHECK(resolved.find("train.lr_f=0.2\n") != std::string::npos);
  CHECK(lines(resolved).size() == config_keys().size());
  RunConfig again = parse_config(resolved);
  finalize_config(again);
  CHECK(resolved_config(again) == resolved);
}

TEST_CASE("git blob hash") {
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("gen writes a reproducible dataset") {
  TempDir tmp("afl_test_cli_gen");
  RunConfig cfg = small_config("data.train_count = 400\ndata.hard_fraction = 0.2\n");
  cmd_gen(cfg, "", tmp.path / "a");
  cmd_gen(cfg, "", tmp.path / "b");
  const auto a = tree(tmp.path / "a"), b = tree(tmp.path / "b");
  CHECK(a.size() == b.size());
  for (const auto& [name, content] : a) {
    if (name == kRunManifest) continue;  // records its own output directory
    CHECK(b.at(name) == content);
  }

  const auto rows = lines(a.at(kTrainManifest));
  CHECK(rows.size() == 401);
  std::size_t hard = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) hard += split(rows[i])[1] == "hard";
  // 400 * 0.2 = 80, binomial sd = 8; allow four deviations.
  CHECK(std::abs(static_cast<double>(hard) - 80.0) <= 32.0);
  CHECK(lines(a.at(kEvalManifest)).size() == 9);

  const Dataset back = read_dataset(tmp.path / "a", kTrainManifest);
  CHECK(back.count(Difficulty::kHard) == hard);
}

TEST_CASE("train writes traces, summary, checkpoints and a manifest") {
  TempDir tmp("afl_test_cli_train");
  RunConfig cfg = small_config("train.use_afl = true\ntrain.checkpoint_every = 1\n");
  const TrainReport r = cmd_train(cfg, "", tmp.path);
  for (const char* f : {"traces.csv", "summary.csv", "f_final.aflp", "d_final.aflp", kRunManifest}) {
    CHECK(fs::exists(tmp.path / f));
  }
  CHECK(fs::exists(tmp.path / "checkpoints" / "f_epoch_0001.aflp"));
  CHECK(fs::exists(tmp.path / "checkpoints" / "f_epoch_0002.aflp"));
  CHECK(r.total_steps == 6);

  const auto header = split(lines(slurp(tmp.path / "traces.csv"))[0]);
  CHECK(header == std::vector<std::string>{"epoch", "sample_id", "difficulty_tag", "score", "base_loss"});

  const nlohmann::json m = nlohmann::json::parse(slurp(tmp.path / kRunManifest));
  CHECK(m.at("command") == "train");
  std::string rebuilt;
  for (const auto& [key, value] : m.at("resolved_config").items()) {
    rebuilt += key + "=" + value.get<std::string>() + "\n";
  }
  CHECK(rebuilt == resolved_config(cfg));
  CHECK(m.at("config_hash") == git_blob_hash(resolved_config(cfg)));
}

TEST_CASE("vanilla traces have no score column") {
  TempDir tmp("afl_test_cli_vanilla");
  cmd_train(small_config(), "", tmp.path);
  const auto header = split(lines(slurp(tmp.path / "traces.csv"))[0]);
  CHECK(std::find(header.begin(), header.end(), "score") == header.end());
  CHECK_FALSE(fs::exists(tmp.path / "d_final.aflp"));
  CHECK_THROWS_AS(cmd_traces(tmp.path / "traces.csv", "difficulty_tag", tmp.path, false), IoError);
}

TEST_CASE("one epoch over one full batch is one step") {
  TempDir tmp("afl_test_cli_onestep");
  const TrainReport r = cmd_train(small_config("train.epochs = 1\ntrain.batch_size = 24\n"), "", tmp.path);
  CHECK(r.total_steps == 1);
  const auto rows = lines(slurp(tmp.path / "summary.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(split(rows[0])[1] == "steps");
  CHECK(split(rows[2])[1] == "1");
}

TEST_CASE("training from a generated dataset directory") {
  TempDir tmp("afl_test_cli_datadir");
  RunConfig cfg = small_config();
  cmd_gen(cfg, "", tmp.path / "data");
  RunConfig from_disk = small_config("data.dir = " + (tmp.path / "data").string() + "\n");
  cmd_train(from_disk, "", tmp.path / "disk");
  cmd_train(cfg, "", tmp.path / "memory");
  CHECK(slurp(tmp.path / "disk" / "summary.csv") == slurp(tmp.path / "memory" / "summary.csv"));

  RunConfig missing = small_config("data.dir = " + (tmp.path / "nowhere").string() + "\n");
  CHECK_THROWS_AS(cmd_train(missing, "", tmp.path / "x"), IoError);
}

TEST_CASE("training outputs are byte-identical across reruns") {
  TempDir tmp("afl_test_cli_det");
  RunConfig cfg = small_config("train.use_afl = true\n");
  cmd_train(cfg, "", tmp.path / "a");
  cmd_train(cfg, "", tmp.path / "b");
  for (const char* f : {"traces.csv", "summary.csv", "f_final.aflp", "d_final.aflp"}) {
    CHECK(git_blob_hash(slurp(tmp.path / "a" / f)) == git_blob_hash(slurp(tmp.path / "b" / f)));
  }
}

TEST_CASE("trace grouping") {
  TempDir tmp("afl_test_cli_traces");
  cmd_train(small_config("train.use_afl = true\ntrain.epochs = 3\n"), "", tmp.path);
  const DifficultyTrack t = cmd_traces(tmp.path / "traces.csv", "difficulty_tag", tmp.path, true);

  // Independent recomputation straight from the CSV text.
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> groups;
  const auto rows = lines(slurp(tmp.path / "traces.csv"));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cells = split(rows[i]);
    auto& g = groups[std::stoi(cells[0])];
    (cells[2] == "hard" ? g.second : g.first).push_back(std::stod(cells[3]));
  }
  REQUIRE(t.epochs.size() == groups.size());
  std::size_t e = 0;
  for (const auto& [epoch, g] : groups) {
    double easy = 0.0, hard = 0.0;
    for (double v : g.first) easy += v;
    for (double v : g.second) hard += v;
    CHECK(t.epochs[e] == epoch);
    CHECK(std::abs(t.easy.mean[e] - easy / g.first.size()) < 1e-9);
    CHECK(std::abs(t.hard.mean[e] - hard / g.second.size()) < 1e-9);
    ++e;
  }

  const auto grouped = lines(slurp(tmp.path / "traces_grouped.csv"));
  CHECK(grouped.size() == groups.size() + 1);
  CHECK(split(grouped[0])[0] == "epoch");
  CHECK(well_formed_xml(slurp(tmp.path / "traces.svg")));
  CHECK_THROWS_AS(cmd_traces(tmp.path / "traces.csv", "sample_id", tmp.path, false), ContractError);
}

TEST_CASE("constant scores give flat curves") {
  TempDir tmp("afl_test_cli_flat");
  std::ofstream csv(tmp.path / "traces.csv");
  csv << "epoch,sample_id,difficulty_tag,score,base_loss\n";
  for (int e = 0; e < 6; ++e) {
    csv << e << ",0,easy,0.5,1\n" << e << ",1,hard,0.5,1\n" << e << ",2,hard,0.5,2\n";
  }
  csv.close();
  const DifficultyTrack t = cmd_traces(tmp.path / "traces.csv", "difficulty_tag", tmp.path, true);
  for (std::size_t i = 0; i < t.epochs.size(); ++i) {
    CHECK(t.easy.mean[i] == 0.5);
    CHECK(t.hard.mean[i] == 0.5);
    CHECK(t.easy.smoothed[i] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(t.hard.smoothed[i] == doctest::Approx(0.5).epsilon(1e-15));
  }
  CHECK(well_formed_xml(slurp(tmp.path / "traces.svg")));
}

TEST_CASE("missing trace columns are named") {
  TempDir tmp("afl_test_cli_cols");
  std::ofstream(tmp.path / "traces.csv") << "epoch,difficulty_tag,score,base_loss\n0,easy,0.5,1\n";
  try {
    cmd_traces(tmp.path / "traces.csv", "difficulty_tag", tmp.path, false);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("sample_id") != std::string::npos);
  }
}

TEST_CASE("the verify suite passes and catches a broken derivative") {
  const auto results = run_verify(nullptr);
  CHECK(results.size() == 10);
  for (const CheckResult& r : results) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.passed);
  }
  const double err = check_gradient([](const Var& x) { return sum(corrupted_sigmoid(x)); },
                                    Tensor::vector({0.3, -0.2}));
  CHECK(err > 1e-4);
}

TEST_CASE("command-line exit codes") {
  TempDir tmp("afl_test_cli_exit");
  const fs::path cfg = tmp.path / "run.cfg";
  std::ofstream(cfg) << kSmallConfig;
  const fs::path bad = tmp.path / "bad.cfg";
  std::ofstream(bad) << "train.nonsense = 1\n";
  const std::string out = (tmp.path / "out").string();

  CHECK(run_cli("verify") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("train --config " + cfg.string()) == 2);
  CHECK(run_cli("train --config " + (tmp.path / "absent.cfg").string() + " --out " + out) == 2);
  CHECK(run_cli("train --config " + cfg.string() + " --out " + out + " --seed 1 --seeds 1..2") == 2);
  CHECK(run_cli("train --config " + cfg.string() + " --out " + out + " --seeds 3..1") == 2);
  CHECK(run_cli("train --config " + bad.string() + " --out " + out) == 1);

  CHECK(run_cli("gen --config " + cfg.string() + " --out " + out + " --seeds 1..2") == 0);
  CHECK(fs::exists(tmp.path / "out" / "seed_1" / kTrainManifest));
  CHECK(fs::exists(tmp.path / "out" / "seed_2" / kTrainManifest));
  CHECK(slurp(tmp.path / "out" / "seed_1" / kTrainManifest) !=
        slurp(tmp.path / "out" / "seed_2" / kTrainManifest));

  std::ofstream(cfg, std::ios::app) << "train.use_afl = true\n";
  const std::string run = (tmp.path / "run").string();
  CHECK(run_cli("train --config " + cfg.string() + " --out " + run) == 0);
  CHECK(run_cli("traces " + run + " --svg") == 0);
  CHECK(fs::exists(tmp.path / "run" / "traces.svg"));
}
