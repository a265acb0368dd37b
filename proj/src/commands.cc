#include "afl/commands.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "afl/errors.h"
#include "afl/nn.h"

namespace afl {

namespace fs = std::filesystem;

RunManifest make_manifest(std::string command, const fs::path& config_path, const RunConfig& cfg,
                          const fs::path& out) {
  RunManifest m;
  m.command = std::move(command);
  m.config_path = config_path.string();
  m.resolved_config = resolved_config(cfg);
  m.output_dir = out.string();
  m.config_hash = git_blob_hash(m.resolved_config);
  return m;
}

void write_run_manifest(const RunManifest& m, const fs::path& path) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config_path"] = m.config_path;
  j["output_dir"] = m.output_dir;
  j["config_hash"] = m.config_hash;
  nlohmann::ordered_json resolved = nlohmann::ordered_json::object();
  std::size_t start = 0;
  while (start < m.resolved_config.size()) {
    const std::size_t nl = m.resolved_config.find('\n', start);
    const std::string line = m.resolved_config.substr(start, nl - start);
    const std::size_t eq = line.find('=');
    resolved[line.substr(0, eq)] = line.substr(eq + 1);
    start = nl == std::string::npos ? m.resolved_config.size() : nl + 1;
  }
  j["resolved_config"] = resolved;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

DatasetPair generate_datasets(const RunConfig& cfg) {
  DatasetPair d;
  const int eval_first = static_cast<int>(cfg.train_count);
  if (cfg.task == Task::kKeypoint) {
    d.train = make_keypoint_dataset(cfg.scene, cfg.seed, cfg.train_count, 0);
    d.eval = make_keypoint_dataset(cfg.scene, cfg.seed, cfg.eval_count, eval_first);
  } else {
    d.train = gen_classification_set(cfg.seed, cfg.train_count, cfg.classes, cfg.imbalance_ratio,
                                     cfg.separation, 0);
    d.eval = gen_classification_set(splitmix64(cfg.seed), cfg.eval_count, cfg.classes,
                                    cfg.imbalance_ratio, cfg.separation, eval_first);
  }
  return d;
}

fs::path expand_seed(const std::string& pattern, std::uint64_t seed) {
  std::string out = pattern;
  const std::string token = "{seed}";
  for (std::size_t pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos)) {
    out.replace(pos, token.size(), std::to_string(seed));
  }
  return out;
}

DatasetPair load_datasets(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) return generate_datasets(cfg);
  const fs::path dir = expand_seed(cfg.data_dir, cfg.seed);
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  DatasetPair d;
  d.train = read_dataset(dir, kTrainManifest);
  if (fs::exists(dir / kEvalManifest)) {
    d.eval = read_dataset(dir, kEvalManifest);
  } else {
    d.eval.task = d.train.task;
  }
  if (d.train.task != cfg.task) {
    throw ContractError("dataset in " + dir.string() + " is a " +
                        std::string(to_string(d.train.task)) + " set, config says data.task=" +
                        std::string(to_string(cfg.task)));
  }
  if (cfg.task == Task::kClassification) {
    if (d.train.classes > cfg.classes) {
      throw ContractError("dataset has " + std::to_string(d.train.classes) +
                          " classes, config says data.classes=" + std::to_string(cfg.classes));
    }
    d.train.classes = d.eval.classes = cfg.classes;
  }
  return d;
}

std::vector<int> resolve_tracked_ids(const RunConfig& cfg, const Dataset& train) {
  if (!cfg.train.tracked_ids.empty()) return cfg.train.tracked_ids;
  std::vector<int> ids;
  std::size_t easy = 0, hard = 0;
  for (const Sample& s : train.samples) {
    std::size_t& n = s.tag == Difficulty::kEasy ? easy : hard;
    if (n < cfg.track_per_group) {
      ids.push_back(s.id);
      ++n;
    }
  }
  return ids;
}

void cmd_gen(const RunConfig& cfg, const fs::path& config_path, const fs::path& out) {
  const DatasetPair d = generate_datasets(cfg);
  fs::create_directories(out);
  write_dataset(d.train, out, kTrainManifest);
  if (d.eval.size() > 0) write_dataset(d.eval, out, kEvalManifest);
  write_run_manifest(make_manifest("gen", config_path, cfg, out), out / kRunManifest);
}

TrainReport cmd_train(const RunConfig& cfg, const fs::path& config_path, const fs::path& out) {
  const DatasetPair d = load_datasets(cfg);
  TrainConfig tc = cfg.train;
  tc.tracked_ids = resolve_tracked_ids(cfg, d.train);
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoints";
  TrainHooks hooks;
  if (cfg.checkpoint_every > 0) {
    fs::create_directories(ckpt);
    hooks.on_epoch = [&](std::size_t epoch, const ParamSet& f, const ParamSet& dp) {
      if (epoch % cfg.checkpoint_every != 0) return;
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04zu", epoch);
      save_params(f, ckpt / ("f_" + std::string(name) + ".aflp"));
      if (tc.use_afl) save_params(dp, ckpt / ("d_" + std::string(name) + ".aflp"));
    };
  }
  const TrainResult r = train(tc, d.train, d.eval.size() > 0 ? &d.eval : nullptr, hooks);
  write_traces_csv(r.report, out / "traces.csv");
  write_summary_csv(r.report, out / "summary.csv");
  save_params(r.f, out / "f_final.aflp");
  if (tc.use_afl) save_params(r.d, out / "d_final.aflp");
  write_run_manifest(make_manifest("train", config_path, cfg, out), out / kRunManifest);
  return r.report;
}

void write_track_csv(const DifficultyTrack& t, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,easy_mean,easy_spread,easy_smoothed,hard_mean,hard_spread,hard_smoothed\n";
  char buf[256];
  for (std::size_t i = 0; i < t.epochs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", t.epochs[i],
                  t.easy.mean[i], t.easy.spread[i], t.easy.smoothed[i], t.hard.mean[i],
                  t.hard.spread[i], t.hard.smoothed[i]);
    out << buf;
  }
}

std::string render_track_svg(const DifficultyTrack& t) {
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 20, kBottom = 50;
  const double e0 = t.epochs.front(), e1 = std::max<double>(t.epochs.back(), e0 + 1);
  const auto px = [&](double e) { return kLeft + (e - e0) / (e1 - e0) * (kW - kLeft - kRight); };
  const auto py = [&](double s) { return kTop + (1.0 - s) * (kH - kTop - kBottom); };
  const auto path = [&](const std::vector<double>& v) {
    std::string d;
    char buf[64];
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i == 0 ? "M" : " L", px(t.epochs[i]), py(v[i]));
      d += buf;
    }
    return d;
  };
  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n",
                kW, kH, kW, kH);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<path d=\"M%.2f,%.2f L%.2f,%.2f L%.2f,%.2f\" fill=\"none\" stroke=\"black\"/>\n",
                kLeft, kTop, kLeft, kH - kBottom, kW - kRight, kH - kBottom);
  svg += buf;
  for (double s : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\">%.2f</text>\n",
                  kLeft - 6, py(s) + 4, s);
    svg += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n",
                (kLeft + kW - kRight) / 2, kH - 12);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"14\" y=\"%.2f\" font-size=\"12\" text-anchor=\"middle\" "
                "transform=\"rotate(-90 14 %.2f)\">difficulty score</text>\n",
                (kTop + kH - kBottom) / 2, (kTop + kH - kBottom) / 2);
  svg += buf;
  const auto curve = [&](const GroupCurve& g, const char* color, const char* label, double ly) {
    svg += "<path d=\"" + path(g.mean) + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1\" stroke-opacity=\"0.25\"/>\n";
    svg += "<path d=\"" + path(g.smoothed) + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" fill=\"%s\">%s</text>\n",
                  kW - kRight - 60, ly, color, label);
    svg += buf;
  };
  curve(t.easy, "#1f77b4", "easy", kTop + 14);
  curve(t.hard, "#d62728", "hard", kTop + 30);
  svg += "</svg>\n";
  return svg;
}

DifficultyTrack cmd_traces(const fs::path& traces_csv, const std::string& group_by,
                           const fs::path& out, bool svg) {
  if (group_by != "difficulty_tag") {
    throw ContractError("unsupported group_by '" + group_by + "' (only difficulty_tag)");
  }
  const std::vector<TraceRow> rows = read_traces_csv(traces_csv);
  if (!rows.empty() && !rows.front().score) {
    throw IoError(traces_csv.string() + ": missing column 'score'");
  }
  const DifficultyTrack track = track_difficulty(rows);
  fs::create_directories(out);
  write_track_csv(track, out / "traces_grouped.csv");
  if (svg) {
    std::ofstream f(out / "traces.svg", std::ios::binary);
    if (!f) throw IoError("cannot write " + (out / "traces.svg").string());
    f << render_track_svg(track);
  }
  return track;
}

}  // namespace afl
