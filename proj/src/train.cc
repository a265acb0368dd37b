#include "afl/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>

#include "afl/errors.h"
#include "afl/losses.h"
#include "afl/topology.h"

namespace afl {

std::string_view to_string(BaseLoss b) {
  switch (b) {
    case BaseLoss::kMse: return "mse";
    case BaseLoss::kCrossEntropy: return "cross_entropy";
    case BaseLoss::kFocal: return "focal";
  }
  return "?";
}

BaseLoss parse_base_loss(std::string_view s) {
  if (s == "mse") return BaseLoss::kMse;
  if (s == "cross_entropy" || s == "ce") return BaseLoss::kCrossEntropy;
  if (s == "focal") return BaseLoss::kFocal;
  throw ContractError("unknown base loss '" + std::string(s) +
                      "' (expected mse, cross_entropy or focal)");
}

std::string_view to_string(OptimizerKind o) {
  return o == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ContractError("unknown optimizer '" + std::string(s) + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ContractError("train.batch_size must be >= 1");
  if (!(lr_f > 0.0) || !(lr_d > 0.0)) throw ContractError("learning rates must be > 0");
  if (!(lambda >= 0.0)) throw ContractError("train.lambda must be >= 0");
  if (!(gamma >= 0.0)) throw ContractError("train.gamma must be >= 0");
  if (n_critic == 0) throw ContractError("train.n_critic must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("threshold must lie in (0,1)");
  if (!(pck_fraction > 0.0)) throw ContractError("pck_fraction must be > 0");
  if (f_channels == 0 || classifier_hidden == 0 || d_hidden == 0) {
    throw ContractError("network widths must be >= 1");
  }
  if (task == Task::kKeypoint && base_loss != BaseLoss::kMse) {
    throw ContractError("keypoint task supports only the mse base loss");
  }
}

// --- optimizers -------------------------------------------------------------------

void optimizer_step(ParamSet& params, const GradientMap& grads, AdamState& state, double lr) {
  auto& ps = params.params();
  if (state.m.empty()) {
    for (const Param& p : ps) {
      state.m.emplace_back(p.leaf.shape(), 0.0);
      state.v.emplace_back(p.leaf.shape(), 0.0);
    }
  }
  if (state.m.size() != ps.size()) throw ContractError("optimizer_step: state/parameter mismatch");
  // Look everything up before writing so a missing entry leaves params intact.
  std::vector<const Tensor*> gs;
  for (const Param& p : ps) {
    if (!grads.contains(p.leaf)) {
      throw ContractError("optimizer_step: no gradient for parameter '" + p.name + "'");
    }
    gs.push_back(&grads.at(p.leaf).value());
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor& w = ps[i].leaf.mutable_value();
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = *gs[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j];
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      w[j] -= lr * mh / (std::sqrt(vh) + kAdamEps);
    }
  }
}

void sgd_step(ParamSet& params, const GradientMap& grads, double lr) {
  std::vector<const Tensor*> gs;
  for (const Param& p : params.params()) {
    if (!grads.contains(p.leaf)) {
      throw ContractError("sgd_step: no gradient for parameter '" + p.name + "'");
    }
    gs.push_back(&grads.at(p.leaf).value());
  }
  auto& ps = params.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor& w = ps[i].leaf.mutable_value();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * (*gs[i])[j];
  }
}

void Optimizer::step(ParamSet& params, const GradientMap& grads) {
  if (kind_ == OptimizerKind::kAdam) {
    optimizer_step(params, grads, adam_, lr_);
  } else {
    sgd_step(params, grads, lr_);
  }
  ++steps_;
}

// --- training ---------------------------------------------------------------------

NetworkSpec main_network_spec(const TrainConfig& cfg, const Dataset& data) {
  if (data.task == Task::kKeypoint) {
    return keypoint_network_spec(data.width, data.height, data.keypoints, cfg.f_channels);
  }
  return classifier_spec(2, cfg.classifier_hidden, data.classes);
}

NetworkSpec critic_spec(const TrainConfig& cfg, const Dataset& data) {
  const std::size_t in =
      data.task == Task::kKeypoint ? 2 * data.keypoints * data.keypoints : data.classes;
  return discriminator_spec(in, cfg.d_hidden);
}

namespace {

// Independent streams derived from the run seed.
constexpr std::uint64_t kStreamF = 1;
constexpr std::uint64_t kStreamD = 2;
constexpr std::uint64_t kStreamShuffle = 3;
constexpr std::uint64_t kStreamAlpha = 4;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream));
}

}  // namespace

ParamSet initial_main_params(const TrainConfig& cfg, const Dataset& data) {
  const NetworkSpec spec = main_network_spec(cfg, data);
  ParamSet f = init_params(spec, stream_seed(cfg.seed, kStreamF));
  if (cfg.task == Task::kKeypoint && cfg.f_head_bias != 0.0) {
    std::size_t last = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (spec.layers[i].kind == LayerKind::kConv3x3) last = i;
    }
    Var bias = f.get("l" + std::to_string(last) + ".bias");
    for (double& v : bias.mutable_value().values()) v = cfg.f_head_bias;
  }
  return f;
}

ParamSet initial_critic_params(const TrainConfig& cfg, const Dataset& data) {
  ParamSet d = init_params(critic_spec(cfg, data), stream_seed(cfg.seed, kStreamD));
  if (cfg.d_zero_init) d.zero();
  return d;
}

namespace {

Tensor one_hot(int label, std::size_t classes) {
  Tensor t(Shape{classes}, 0.0);
  t[static_cast<std::size_t>(label)] = 1.0;
  return t;
}

void check_dataset(const TrainConfig& cfg, const Dataset& data, const char* what) {
  if (data.task != cfg.task) {
    throw ContractError(std::string(what) + " dataset task is " + std::string(to_string(data.task)) +
                        ", config expects " + std::string(to_string(cfg.task)));
  }
  for (const Sample& s : data.samples) {
    if (data.task == Task::kKeypoint && !s.heatmaps) {
      throw ContractError(std::string(what) + " sample " + std::to_string(s.id) +
                          " has no ground-truth heatmaps");
    }
    if (data.task == Task::kClassification &&
        (s.label < 0 || static_cast<std::size_t>(s.label) >= data.classes)) {
      throw ContractError(std::string(what) + " sample " + std::to_string(s.id) +
                          " has an out-of-range label");
    }
  }
}

// What one forward pass of f yields for a sample.
struct Forward {
  Var base_loss;
  Tensor critic_pred;  // t(y') for keypoints, the probability vector otherwise
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const Dataset& train, const Dataset* eval,
          const TrainHooks& hooks, bool adversarial)
      : cfg_(cfg), train_(train), eval_(eval), hooks_(hooks), adversarial_(adversarial) {
    cfg_.validate();
    if (train.size() == 0) throw ContractError("training set is empty");
    check_dataset(cfg_, train, "training");
    if (eval_ != nullptr) check_dataset(cfg_, *eval_, "evaluation");

    f_spec_ = main_network_spec(cfg_, train);
    f_ = initial_main_params(cfg_, train);
    d_spec_ = critic_spec(cfg_, train);
    d_ = initial_critic_params(cfg_, train);

    for (std::size_t i = 0; i < train.size(); ++i) by_id_[train.samples[i].id] = i;
    for (int id : cfg_.tracked_ids) {
      if (!by_id_.contains(id)) {
        throw ContractError("tracked sample id " + std::to_string(id) +
                            " is not in the training set");
      }
    }
    // Ground-truth critic inputs never change, so compute them once.
    real_.reserve(train.size());
    for (const Sample& s : train.samples) real_.push_back(critic_real(s));
  }

  TrainResult run() {
    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    report.config = cfg_;
    report.has_scores = adversarial_;

    Optimizer opt_f(cfg_.optimizer, cfg_.lr_f);
    Optimizer opt_d(cfg_.optimizer, cfg_.lr_d);
    std::mt19937_64 shuffle_rng(stream_seed(cfg_.seed, kStreamShuffle));
    std::mt19937_64 alpha_rng(stream_seed(cfg_.seed, kStreamAlpha));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    report.epochs.push_back(probe(0, report.traces));
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      double loss_sum = 0.0;
      double disc_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t b0 = 0, batch = 0; b0 < order.size(); b0 += cfg_.batch_size, ++batch) {
        const std::size_t b1 = std::min(order.size(), b0 + cfg_.batch_size);
        std::vector<Var> losses;
        std::vector<Tensor> preds;
        std::vector<std::size_t> idx;
        for (std::size_t j = b0; j < b1; ++j) {
          Forward fw = forward_sample(train_.samples[order[j]]);
          loss_sum += fw.base_loss.item();
          losses.push_back(std::move(fw.base_loss));
          preds.push_back(std::move(fw.critic_pred));
          idx.push_back(order[j]);
        }
        const auto where = [&] {
          return " at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch);
        };

        if (!adversarial_) {
          Var obj = losses[0];
          for (std::size_t i = 1; i < losses.size(); ++i) obj = add(obj, losses[i]);
          obj = scale(obj, 1.0 / static_cast<double>(losses.size()));
          if (!std::isfinite(obj.item())) throw TrainingError("non-finite loss" + where());
          const GradientMap gf = backward(obj, {.create_graph = false});
          opt_f.step(f_, gf);
        } else {
          // Both objectives come from the same forward pass; d is updated
          // before f, but only after both gradients have been taken.
          std::vector<Var> d_outs;
          Var ld;
          for (std::size_t c = 0; c < cfg_.n_critic; ++c) {
            std::vector<GpBundle> bundles;
            for (std::size_t i = 0; i < idx.size(); ++i) {
              bundles.push_back(
                  wgan_gp(d_spec_, d_, real_[idx[i]], preds[i], unit(alpha_rng), cfg_.lambda));
            }
            ld = discriminator_loss(bundles[0]);
            for (std::size_t i = 1; i < bundles.size(); ++i) {
              ld = add(ld, discriminator_loss(bundles[i]));
            }
            ld = scale(ld, 1.0 / static_cast<double>(bundles.size()));
            if (!std::isfinite(ld.item())) {
              throw TrainingError("non-finite discriminator loss" + where());
            }
            if (c == 0) {
              for (const GpBundle& g : bundles) d_outs.push_back(neg(g.loss_pred));
            }
            if (c + 1 < cfg_.n_critic && !cfg_.freeze_d) {
              opt_d.step(d_, backward(ld, {.create_graph = false}));
            }
          }
          const Var obj = afl_batch(losses, d_outs);
          if (!std::isfinite(obj.item())) throw TrainingError("non-finite loss" + where());
          const GradientMap gd = backward(ld, {.create_graph = false});
          const GradientMap gf = backward(obj, {.create_graph = false});
          if (cfg_.check_invariants) check_step(obj, losses, d_outs, gf);
          disc_sum += ld.item();
          if (!cfg_.freeze_d) opt_d.step(d_, gd);
          opt_f.step(f_, gf);
        }
        ++batches;
        ++step;
        if (hooks_.on_step) hooks_.on_step(step, f_);
      }
      EpochSummary summary = probe(static_cast<int>(epoch), report.traces);
      summary.steps = batches;
      summary.train_base_loss = loss_sum / static_cast<double>(train_.size());
      if (adversarial_) summary.disc_loss = disc_sum / static_cast<double>(batches);
      report.epochs.push_back(std::move(summary));
      if (hooks_.on_epoch) hooks_.on_epoch(epoch, f_, d_);
    }
    report.total_steps = step;
    report.final_metrics = report.epochs.back().eval;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    TrainResult result;
    result.report = std::move(report);
    result.f_spec = f_spec_;
    result.f = std::move(f_);
    if (adversarial_) {
      result.d_spec = d_spec_;
      result.d = std::move(d_);
    }
    return result;
  }

 private:
  Tensor critic_real(const Sample& s) const {
    if (cfg_.task == Task::kKeypoint) return topology_extract(*s.heatmaps, cfg_.threshold).flatten();
    return one_hot(s.label, train_.classes);
  }

  Forward forward_sample(const Sample& s) const {
    const Var x = constant(s.input);
    if (cfg_.task == Task::kKeypoint) {
      const Var pred = forward_keypoint(f_spec_, f_, x);
      Forward fw{mse(pred, constant(s.heatmaps->tensor())), Tensor{}};
      if (adversarial_) {
        fw.critic_pred = topology_extract(HeatmapStack(pred.value()), cfg_.threshold).flatten();
      }
      return fw;
    }
    const Var probs = forward_classifier(f_spec_, f_, x);
    Forward fw;
    switch (cfg_.base_loss) {
      case BaseLoss::kMse:
        fw.base_loss = mse(probs, constant(one_hot(s.label, train_.classes)));
        break;
      case BaseLoss::kCrossEntropy:
        fw.base_loss = cross_entropy(index(probs, static_cast<std::size_t>(s.label)));
        break;
      case BaseLoss::kFocal:
        fw.base_loss = focal_loss(index(probs, static_cast<std::size_t>(s.label)), cfg_.gamma);
        break;
    }
    fw.critic_pred = probs.value();
    return fw;
  }

  void check_step(const Var& obj, const std::vector<Var>& losses, const std::vector<Var>& d_outs,
                  const GradientMap& gf) const {
    for (const Param& p : d_.params()) {
      if (!gf.contains(p.leaf)) continue;
      for (double g : gf.at(p.leaf).value().values()) {
        if (g != 0.0) {
          throw TrainingError("invariant: f objective leaks gradient into critic parameter " +
                              p.name);
        }
      }
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
      sum += afl(losses[i], d_outs[i]).item();
    }
    const double expected = sum / static_cast<double>(losses.size());
    if (std::abs(obj.item() - expected) > 1e-12 * std::max(1.0, std::abs(expected))) {
      throw TrainingError("invariant: batch objective is not the mean of per-sample terms");
    }
  }

  // Records traces for the tracked samples and evaluates on the held-out set.
  EpochSummary probe(int epoch, std::vector<TraceRow>& traces) const {
    NoGradGuard guard;
    EpochSummary summary;
    summary.epoch = epoch;
    double score_sum = 0.0;
    for (int id : cfg_.tracked_ids) {
      const std::size_t i = by_id_.at(id);
      const Sample& s = train_.samples[i];
      const Forward fw = forward_sample(s);
      TraceRow row;
      row.epoch = epoch;
      row.sample_id = id;
      row.tag = s.tag;
      row.base_loss = fw.base_loss.item();
      if (adversarial_) {
        const double d_out = discriminator_score(d_spec_, d_, constant(fw.critic_pred)).item();
        row.score = difficulty_score(d_out).value;
        score_sum += *row.score;
      }
      traces.push_back(row);
    }
    if (adversarial_ && !cfg_.tracked_ids.empty()) {
      summary.tracked_score_mean = score_sum / static_cast<double>(cfg_.tracked_ids.size());
    }
    if (eval_ != nullptr && eval_->size() > 0) summary.eval = evaluate(cfg_, f_spec_, f_, *eval_);
    return summary;
  }

  TrainConfig cfg_;
  const Dataset& train_;
  const Dataset* eval_;
  const TrainHooks& hooks_;
  bool adversarial_;
  NetworkSpec f_spec_;
  ParamSet f_;
  NetworkSpec d_spec_;
  ParamSet d_;
  std::unordered_map<int, std::size_t> by_id_;
  std::vector<Tensor> real_;
};

}  // namespace

TrainResult train_vanilla(const TrainConfig& cfg, const Dataset& train, const Dataset* eval,
                          const TrainHooks& hooks) {
  return Trainer(cfg, train, eval, hooks, false).run();
}

TrainResult train_afl(const TrainConfig& cfg, const Dataset& train, const Dataset* eval,
                      const TrainHooks& hooks) {
  return Trainer(cfg, train, eval, hooks, true).run();
}

TrainResult train(const TrainConfig& cfg, const Dataset& train, const Dataset* eval,
                  const TrainHooks& hooks) {
  return cfg.use_afl ? train_afl(cfg, train, eval, hooks) : train_vanilla(cfg, train, eval, hooks);
}

EvalResult evaluate(const TrainConfig& cfg, const NetworkSpec& spec, const ParamSet& f,
                    const Dataset& data) {
  NoGradGuard guard;
  EvalResult r;
  if (data.task == Task::kKeypoint) {
    std::vector<HeatmapStack> preds;
    std::vector<CentroidSet> truths;
    std::vector<std::vector<bool>> masks;
    for (const Sample& s : data.samples) {
      preds.emplace_back(forward_keypoint(spec, f, constant(s.input)).value());
      truths.push_back(s.keypoints);
      std::vector<bool> mask(s.keypoints.size());
      for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = s.keypoints.exists(k);
      masks.push_back(std::move(mask));
    }
    r.pck = pck(preds, truths, cfg.pck_fraction, cfg.threshold);
    const FalseNegatives fn = false_negatives(preds, masks, cfg.threshold);
    r.false_negative_count = fn.count;
    r.total_keypoints = fn.total;
    return r;
  }
  std::vector<Tensor> probs;
  std::vector<int> labels;
  for (const Sample& s : data.samples) {
    probs.push_back(forward_classifier(spec, f, constant(s.input)).value());
    labels.push_back(s.label);
  }
  r.top1_accuracy = top1_accuracy(probs, labels);
  const std::vector<double> recall = class_recall(probs, labels, data.classes);
  std::vector<std::size_t> counts(data.classes, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  std::size_t minority = 0;
  for (std::size_t c = 1; c < data.classes; ++c) {
    if (counts[c] < counts[minority]) minority = c;
  }
  r.minority_recall = recall[minority];
  return r;
}

// --- difficulty tracking ----------------------------------------------------------

std::vector<double> gaussian_smooth(std::span<const double> values, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("gaussian_smooth: sigma must be > 0");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  std::vector<double> out(values.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double num = 0.0;
    double den = 0.0;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - radius);
         j <= std::min(n - 1, i + radius); ++j) {
      const double u = static_cast<double>(j - i) / sigma;
      const double w = std::exp(-0.5 * u * u);
      num += w * values[static_cast<std::size_t>(j)];
      den += w;
    }
    out[static_cast<std::size_t>(i)] = num / den;
  }
  return out;
}

DifficultyTrack track_difficulty(std::span<const TraceRow> traces) {
  struct Acc {
    std::vector<double> easy, hard;
  };
  std::map<int, Acc> by_epoch;
  for (const TraceRow& r : traces) {
    if (!r.score) throw ContractError("track_difficulty: traces carry no difficulty scores");
    Acc& a = by_epoch[r.epoch];
    (r.tag == Difficulty::kHard ? a.hard : a.easy).push_back(*r.score);
  }
  if (by_epoch.empty()) throw ContractError("track_difficulty: no traces");
  DifficultyTrack t;
  const auto stats = [](const std::vector<double>& v, GroupCurve& g) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    g.mean.push_back(m);
    g.spread.push_back(std::sqrt(var / static_cast<double>(v.size())));
  };
  for (const auto& [epoch, a] : by_epoch) {
    if (a.easy.empty() || a.hard.empty()) {
      throw ContractError("track_difficulty: epoch " + std::to_string(epoch) +
                          " lacks tracked " + (a.easy.empty() ? "easy" : "hard") + " samples");
    }
    t.epochs.push_back(epoch);
    stats(a.easy, t.easy);
    stats(a.hard, t.hard);
  }
  t.easy.smoothed = gaussian_smooth(t.easy.mean);
  t.hard.smoothed = gaussian_smooth(t.hard.mean);
  return t;
}

}  // namespace afl
