#ifndef AFL_TRAIN_H_
#define AFL_TRAIN_H_

// Vanilla training (f updates w.r.t. the base loss) and adversarial focal
// loss training (d updates w.r.t. the WGAN-GP critic loss, f updates w.r.t.
// the per-sample re-weighted loss), plus the difficulty-score traces both
// produce.
//
// A run is single-threaded and bit-deterministic given (config, dataset).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afl/autograd.h"
#include "afl/metrics.h"
#include "afl/nn.h"
#include "afl/synthdata.h"

namespace afl {

enum class BaseLoss { kMse, kCrossEntropy, kFocal };
enum class OptimizerKind { kAdam, kSgd };

std::string_view to_string(BaseLoss b);
BaseLoss parse_base_loss(std::string_view s);
std::string_view to_string(OptimizerKind o);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  Task task = Task::kKeypoint;
  BaseLoss base_loss = BaseLoss::kMse;
  double gamma = 2.0;
  bool use_afl = false;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr_f = 1e-3;
  double lr_d = 1e-4;
  double lambda = 10.0;
  // Critic updates per f update.
  std::size_t n_critic = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  std::vector<int> tracked_ids;
  double threshold = kExistenceThreshold;
  double pck_fraction = kDefaultPckFraction;
  // Network widths.
  std::size_t f_channels = 8;
  std::size_t classifier_hidden = 16;
  std::size_t d_hidden = 64;
  // Initial bias of the keypoint head's last conv, so sigmoid maps start
  // near sigmoid(f_head_bias) rather than 0.5.
  double f_head_bias = 0.0;
  // Start d at all-zero weights / never update it.
  bool d_zero_init = false;
  bool freeze_d = false;
  // Assert detachment and per-sample weighting on every step.
  bool check_invariants = false;

  void validate() const;
};

// --- optimizers -------------------------------------------------------------------

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;
};

// One Adam step on every parameter; throws ContractError if a parameter has
// no gradient entry.
void optimizer_step(ParamSet& params, const GradientMap& grads, AdamState& state, double lr);
void sgd_step(ParamSet& params, const GradientMap& grads, double lr);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}
  void step(ParamSet& params, const GradientMap& grads);
  std::size_t steps() const { return steps_; }

 private:
  OptimizerKind kind_;
  double lr_;
  AdamState adam_;
  std::size_t steps_ = 0;
};

// --- reports ----------------------------------------------------------------------

struct TraceRow {
  int epoch = 0;
  int sample_id = 0;
  Difficulty tag = Difficulty::kEasy;
  std::optional<double> score;
  double base_loss = 0.0;
};

// Epoch 0 describes the untrained networks; epoch e >= 1 the state after e
// passes over the data.
struct EpochSummary {
  int epoch = 0;
  std::size_t steps = 0;
  std::optional<double> train_base_loss;
  std::optional<double> disc_loss;
  std::optional<double> tracked_score_mean;
  std::optional<EvalResult> eval;
};

struct TrainReport {
  TrainConfig config;
  bool has_scores = false;
  std::vector<EpochSummary> epochs;
  std::vector<TraceRow> traces;
  std::optional<EvalResult> final_metrics;
  std::size_t total_steps = 0;
  // Not exported, so reports stay byte-reproducible.
  double wall_seconds = 0.0;
};

struct TrainResult {
  TrainReport report;
  NetworkSpec f_spec;
  ParamSet f;
  std::optional<NetworkSpec> d_spec;
  ParamSet d;
};

struct TrainHooks {
  // Called after every f update with the global step count (1-based).
  std::function<void(std::size_t step, const ParamSet& f)> on_step;
  // Called after each epoch (1-based) with the current networks.
  std::function<void(std::size_t epoch, const ParamSet& f, const ParamSet& d)> on_epoch;
};

// Network layouts for a config and dataset.
NetworkSpec main_network_spec(const TrainConfig& cfg, const Dataset& data);
NetworkSpec critic_spec(const TrainConfig& cfg, const Dataset& data);

// Parameters a run starts from: seeded from cfg.seed, with the keypoint head
// bias and the zero-critic option applied.
ParamSet initial_main_params(const TrainConfig& cfg, const Dataset& data);
ParamSet initial_critic_params(const TrainConfig& cfg, const Dataset& data);

TrainResult train_vanilla(const TrainConfig& cfg, const Dataset& train,
                          const Dataset* eval = nullptr, const TrainHooks& hooks = {});
TrainResult train_afl(const TrainConfig& cfg, const Dataset& train, const Dataset* eval = nullptr,
                      const TrainHooks& hooks = {});
// Dispatches on cfg.use_afl.
TrainResult train(const TrainConfig& cfg, const Dataset& train, const Dataset* eval = nullptr,
                  const TrainHooks& hooks = {});

// Evaluates a trained main network on a dataset.
EvalResult evaluate(const TrainConfig& cfg, const NetworkSpec& spec, const ParamSet& f,
                    const Dataset& data);

// --- difficulty tracking ----------------------------------------------------------

struct GroupCurve {
  std::vector<double> mean;
  std::vector<double> spread;  // population standard deviation
  std::vector<double> smoothed;
};

struct DifficultyTrack {
  std::vector<int> epochs;
  GroupCurve easy;
  GroupCurve hard;
};

inline constexpr double kSmoothingSigma = 2.0;

// Gaussian smoothing over the index axis, kernel truncated at 3 sigma and
// renormalised at the ends.
std::vector<double> gaussian_smooth(std::span<const double> values, double sigma = kSmoothingSigma);

// Per-epoch score mean and spread of the easy and hard groups. Throws
// ContractError if either group is empty or the traces carry no scores.
DifficultyTrack track_difficulty(std::span<const TraceRow> traces);

// --- export -----------------------------------------------------------------------

void write_traces_csv(const TrainReport& report, const std::filesystem::path& path);
void write_summary_csv(const TrainReport& report, const std::filesystem::path& path);
// Reads traces.csv; throws IoError naming any missing required column.
std::vector<TraceRow> read_traces_csv(const std::filesystem::path& path);

}  // namespace afl

#endif  // AFL_TRAIN_H_
