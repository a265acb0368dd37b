#ifndef AFL_LOSSES_H_
#define AFL_LOSSES_H_

// Loss formulas: the binary p_t convention, cross entropy, focal loss, the
// discriminator-derived difficulty score, adversarial focal loss (AFL) and the
// WGAN-GP critic objective.

#include <functional>
#include <span>

#include "afl/autograd.h"
#include "afl/nn.h"

namespace afl {

inline constexpr double kProbFloor = 1e-7;
inline constexpr double kDefaultGamma = 2.0;
inline constexpr double kDefaultLambda = 10.0;

// Clamps p to [1e-7, 1 - 1e-7].
double clamp_probability(double p);

// p if y == 1, 1 - p if y == 0. p is clamped first.
double pt(double p, int y);
double cross_entropy(double p_t);
double focal_loss(double p_t, double gamma = kDefaultGamma);

// Graph versions; p_t is clamped before the log.
Var cross_entropy(const Var& p_t);
Var focal_loss(const Var& p_t, double gamma = kDefaultGamma);
// Mean squared error over all entries.
Var mse(const Var& prediction, const Var& target);

struct DifficultyScore {
  double value;     // sigma(-d_output), in (0,1)
  double d_output;
};

DifficultyScore difficulty_score(double d_output);
double stable_sigmoid(double x);

// stop_gradient(sigma(-d_output)) * base_loss.
Var afl(const Var& base_loss, const Var& d_output);
// (1/n) sum_i stop_gradient(sigma(-d_i)) * L_i.
Var afl_batch(std::span<const Var> base_losses, std::span<const Var> d_outputs);

// Maps a (differentiable) critic input to a scalar score.
using Critic = std::function<Var(const Var&)>;

Critic make_critic(const NetworkSpec& spec, const ParamSet& d);

struct GpBundle {
  Var loss_real;  // L_d^y  = -d(y)
  Var loss_pred;  // L_d^y' = -d(y')
  Var gp_term;    // lambda * (||grad_{y_mix} d(y_mix)||_2 - 1)^2
  double alpha;
};

// y and y_pred are critic inputs of equal shape; y_mix = alpha*y + (1-alpha)*y_pred.
GpBundle wgan_gp(const Critic& d, const Tensor& y, const Tensor& y_pred, double alpha,
                 double lambda = kDefaultLambda);
GpBundle wgan_gp(const NetworkSpec& spec, const ParamSet& d, const Tensor& y,
                 const Tensor& y_pred, double alpha, double lambda = kDefaultLambda);

// L_d^y - L_d^y' + gp_term.
Var discriminator_loss(const GpBundle& bundle);

}  // namespace afl

#endif  // AFL_LOSSES_H_
