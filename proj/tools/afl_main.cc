// afl: dataset generation, training, self-verification and trace export.
//
// Exit codes: 0 success, 1 check or contract failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "afl/commands.h"
#include "afl/config.h"
#include "afl/errors.h"
#include "afl/verify.h"

namespace {

namespace fs = std::filesystem;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw UsageError("--seeds expects A..B, got '" + text + "'");
  try {
    std::size_t used_a = 0, used_b = 0;
    const std::string a_str = text.substr(0, dots), b_str = text.substr(dots + 2);
    const std::uint64_t a = std::stoull(a_str, &used_a);
    const std::uint64_t b = std::stoull(b_str, &used_b);
    if (used_a != a_str.size() || used_b != b_str.size() || a > b) throw UsageError("");
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
    return out;
  } catch (const std::exception&) {
    throw UsageError("--seeds expects A..B with A <= B, got '" + text + "'");
  }
}

struct RunOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string seeds;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config, "key=value config file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory")->required();
  auto* seed = cmd->add_option("--seed", o.seed, "overrides the config seed");
  cmd->add_option("--seeds", o.seeds, "sweep A..B, one subdirectory seed_<n> per seed")
      ->excludes(seed);
}

// Calls `run` once per requested seed with a finalized config.
template <typename Fn>
void for_each_seed(const RunOptions& o, Fn run) {
  afl::RunConfig base = o.config.empty() ? afl::RunConfig{} : afl::load_config(o.config);
  if (o.seeds.empty()) {
    if (o.seed) base.seed = *o.seed;
    afl::finalize_config(base);
    run(base, fs::path(o.out));
    return;
  }
  for (std::uint64_t s : parse_seed_range(o.seeds)) {
    afl::RunConfig cfg = base;
    cfg.seed = s;
    afl::finalize_config(cfg);
    run(cfg, fs::path(o.out) / ("seed_" + std::to_string(s)));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial focal loss: data generation, training and verification"};
  app.require_subcommand(1);

  RunOptions gen_opts;
  auto* gen = app.add_subcommand("gen", "write a synthetic dataset");
  add_run_options(gen, gen_opts);

  RunOptions train_opts;
  auto* train = app.add_subcommand("train", "train f (and d when train.use_afl=true)");
  add_run_options(train, train_opts);

  auto* verify = app.add_subcommand("verify", "run the self-check suite");

  std::string report;
  std::string traces_out;
  std::string group_by = "difficulty_tag";
  bool svg = false;
  auto* traces = app.add_subcommand("traces", "group difficulty traces by tag");
  traces->add_option("report", report, "traces.csv or a training output directory")->required();
  traces->add_option("--out", traces_out, "output directory (defaults to the report's)");
  traces->add_option("--group-by", group_by, "grouping column")->capture_default_str();
  traces->add_flag("--svg", svg, "also write traces.svg");

  auto* keys = app.add_subcommand("keys", "list config keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      for_each_seed(gen_opts, [&](const afl::RunConfig& cfg, const fs::path& out) {
        afl::cmd_gen(cfg, gen_opts.config, out);
        std::cout << "wrote dataset to " << out.string() << '\n';
      });
    } else if (*train) {
      for_each_seed(train_opts, [&](const afl::RunConfig& cfg, const fs::path& out) {
        const afl::TrainReport r = afl::cmd_train(cfg, train_opts.config, out);
        std::cout << "seed " << cfg.seed << ": " << r.total_steps << " steps, "
                  << r.wall_seconds << " s, outputs in " << out.string() << '\n';
      });
    } else if (*verify) {
      const auto results = afl::run_verify(&std::cout);
      std::size_t failed = 0;
      for (const auto& r : results) failed += r.passed ? 0 : 1;
      std::cout << (failed == 0 ? "all " + std::to_string(results.size()) + " checks passed"
                                : std::to_string(failed) + " check(s) failed")
                << '\n';
      return failed == 0 ? 0 : kExitFailure;
    } else if (*traces) {
      fs::path csv = report;
      if (fs::is_directory(csv)) csv /= "traces.csv";
      const fs::path out = traces_out.empty() ? csv.parent_path() : fs::path(traces_out);
      afl::cmd_traces(csv, group_by, out.empty() ? fs::path(".") : out, svg);
      std::cout << "wrote " << (out / "traces_grouped.csv").string() << '\n';
    } else if (*keys) {
      for (const auto& k : afl::config_keys()) std::cout << k.name << "  " << k.help << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
