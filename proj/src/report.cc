#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "afl/errors.h"
#include "afl/train.h"

namespace afl {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

void write_traces_csv(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << (report.has_scores ? "epoch,sample_id,difficulty_tag,score,base_loss\n"
                            : "epoch,sample_id,difficulty_tag,base_loss\n");
  for (const TraceRow& r : report.traces) {
    out << r.epoch << ',' << r.sample_id << ',' << to_string(r.tag) << ',';
    if (report.has_scores) out << fmt(r.score.value_or(0.0)) << ',';
    out << fmt(r.base_loss) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_summary_csv(const TrainReport& report, const std::filesystem::path& path) {
  const bool keypoint = report.config.task == Task::kKeypoint;
  std::ofstream out = open_out(path);
  out << "epoch,steps,train_base_loss,disc_loss,tracked_score_mean";
  out << (keypoint ? ",pck,false_negatives,total_keypoints\n" : ",top1_accuracy,minority_recall\n");
  const auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const EpochSummary& e : report.epochs) {
    out << e.epoch << ',' << e.steps << ',' << opt(e.train_base_loss) << ',' << opt(e.disc_loss)
        << ',' << opt(e.tracked_score_mean);
    if (!e.eval) {
      out << (keypoint ? ",,,\n" : ",,\n");
    } else if (keypoint) {
      out << ',' << fmt(e.eval->pck) << ',' << e.eval->false_negative_count << ','
          << e.eval->total_keypoints << '\n';
    } else {
      out << ',' << fmt(e.eval->top1_accuracy) << ',' << fmt(e.eval->minority_recall) << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<TraceRow> read_traces_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  const std::vector<std::string> header = split(line);
  const auto column = [&](const std::string& name, bool required) -> int {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    if (required) throw IoError(path.string() + ": missing column '" + name + "'");
    return -1;
  };
  const int c_epoch = column("epoch", true);
  const int c_id = column("sample_id", true);
  const int c_tag = column("difficulty_tag", true);
  const int c_score = column("score", false);
  const int c_loss = column("base_loss", true);

  std::vector<TraceRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    if (cells.size() != header.size()) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " fields");
    }
    try {
      TraceRow r;
      r.epoch = std::stoi(cells[static_cast<std::size_t>(c_epoch)]);
      r.sample_id = std::stoi(cells[static_cast<std::size_t>(c_id)]);
      r.tag = parse_difficulty(cells[static_cast<std::size_t>(c_tag)]);
      if (c_score >= 0) r.score = std::stod(cells[static_cast<std::size_t>(c_score)]);
      r.base_loss = std::stod(cells[static_cast<std::size_t>(c_loss)]);
      rows.push_back(r);
    } catch (const std::logic_error& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace afl
