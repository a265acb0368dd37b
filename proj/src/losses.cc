#include "afl/losses.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "afl/errors.h"

namespace afl {

double clamp_probability(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

double pt(double p, int y) {
  if (y != 0 && y != 1) throw ContractError("pt: label must be 0 or 1, got " + std::to_string(y));
  const double q = clamp_probability(p);
  return y == 1 ? q : 1.0 - q;
}

double cross_entropy(double p_t) {
  if (!(p_t > 0.0 && p_t <= 1.0)) {
    throw ContractError("cross_entropy: p_t must lie in (0,1], got " + std::to_string(p_t));
  }
  return -std::log(p_t);
}

double focal_loss(double p_t, double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw ContractError("focal_loss: gamma must be finite and >= 0");
  }
  return std::pow(1.0 - p_t, gamma) * cross_entropy(p_t);
}

Var cross_entropy(const Var& p_t) {
  return neg(log(clamp(p_t, kProbFloor, 1.0 - kProbFloor)));
}

Var focal_loss(const Var& p_t, double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw ContractError("focal_loss: gamma must be finite and >= 0");
  }
  Var q = clamp(p_t, kProbFloor, 1.0 - kProbFloor);
  Var modulator = pow_scalar(add_scalar(neg(q), 1.0), gamma);
  return mul(modulator, neg(log(q)));
}

Var mse(const Var& prediction, const Var& target) {
  return mean(square(sub(prediction, target)));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

DifficultyScore difficulty_score(double d_output) {
  if (!std::isfinite(d_output)) throw ContractError("difficulty_score: non-finite critic output");
  return {stable_sigmoid(-d_output), d_output};
}

Var afl(const Var& base_loss, const Var& d_output) {
  if (base_loss.size() != 1 || d_output.size() != 1) {
    throw ContractError("afl: base loss and critic output must be scalars");
  }
  Var weight = stop_gradient(reshape(sigmoid(neg(d_output)), Shape{}));
  return mul(weight, reshape(base_loss, Shape{}));
}

Var afl_batch(std::span<const Var> base_losses, std::span<const Var> d_outputs) {
  if (base_losses.empty() || base_losses.size() != d_outputs.size()) {
    throw ContractError("afl_batch: need equal, non-zero numbers of losses (" +
                        std::to_string(base_losses.size()) + ") and critic outputs (" +
                        std::to_string(d_outputs.size()) + ")");
  }
  Var total = afl(base_losses[0], d_outputs[0]);
  for (std::size_t i = 1; i < base_losses.size(); ++i) {
    total = add(total, afl(base_losses[i], d_outputs[i]));
  }
  return scale(total, 1.0 / static_cast<double>(base_losses.size()));
}

Critic make_critic(const NetworkSpec& spec, const ParamSet& d) {
  return [&spec, &d](const Var& input) { return discriminator_score(spec, d, input); };
}

GpBundle wgan_gp(const Critic& d, const Tensor& y, const Tensor& y_pred, double alpha,
                 double lambda) {
  if (y.shape() != y_pred.shape()) {
    throw ContractError("wgan_gp: shape mismatch " + shape_str(y.shape()) + " vs " +
                        shape_str(y_pred.shape()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ContractError("wgan_gp: alpha must lie in [0,1]");
  }
  GpBundle bundle;
  bundle.alpha = alpha;
  bundle.loss_real = neg(d(constant(y)));
  bundle.loss_pred = neg(d(constant(y_pred)));

  Tensor mixed(y.shape());
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    mixed[i] = alpha * y[i] + (1.0 - alpha) * y_pred[i];
  }
  // The penalty is itself a gradient, so it is recorded even in no-grad mode.
  EnableGradGuard record;
  Var y_mix = leaf(std::move(mixed), true);
  GradientMap grads = backward(d(y_mix), {.create_graph = true});
  // A critic that ignores its input has no entry; its gradient norm is the floor.
  Var norm = grads.contains(y_mix) ? grad_norm(grads, y_mix) : constant(std::sqrt(1e-12));
  bundle.gp_term = scale(square(add_scalar(norm, -1.0)), lambda);
  return bundle;
}

GpBundle wgan_gp(const NetworkSpec& spec, const ParamSet& d, const Tensor& y,
                 const Tensor& y_pred, double alpha, double lambda) {
  return wgan_gp(make_critic(spec, d), y, y_pred, alpha, lambda);
}

Var discriminator_loss(const GpBundle& bundle) {
  return add(sub(bundle.loss_real, bundle.loss_pred), bundle.gp_term);
}

}  // namespace afl
