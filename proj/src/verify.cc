#include "afl/verify.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <sstream>

#include "afl/errors.h"
#include "afl/losses.h"
#include "afl/nn.h"
#include "afl/synthdata.h"
#include "afl/topology.h"
#include "afl/train.h"

namespace afl {

namespace {

constexpr double kFormulaTol = 1e-10;
constexpr double kGradTol = 1e-6;
constexpr double kSecondOrderTol = 1e-3;
constexpr double kIdentityTol = 1e-12;
constexpr double kTopologyTol = 1e-9;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

CheckResult result(std::string name, bool ok, std::string detail) {
  return {std::move(name), ok, std::move(detail), 0.0};
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Weighted sum with fixed random weights, so no gradient cancels by symmetry.
Var weighted_sum(const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, constant(random_tensor(rng, y.shape(), -1.0, 1.0))));
}

long double ref_sigmoid(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

CheckResult check_loss_formulas() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  bool fl0_exact = true;
  const auto track = [&](double got, long double want) {
    worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(got) - want)));
  };
  for (int i = 0; i < 1000; ++i) {
    const double p = unit(rng);
    const int y = unit(rng) < 0.5 ? 0 : 1;
    long double pc = std::clamp<long double>(p, 1e-7L, 1.0L - 1e-7L);
    const long double pt_ref = y == 1 ? pc : 1.0L - pc;
    const double p_t = pt(p, y);
    track(p_t, pt_ref);

    const double q = 0.001 + 0.999 * unit(rng);
    const double gamma = 5.0 * unit(rng);
    track(cross_entropy(q), -std::log(static_cast<long double>(q)));
    track(focal_loss(q, gamma), std::pow(1.0L - q, static_cast<long double>(gamma)) *
                                    -std::log(static_cast<long double>(q)));
    if (focal_loss(q, 0.0) != cross_entropy(q)) fl0_exact = false;

    const double d = -30.0 + 60.0 * unit(rng);
    track(difficulty_score(d).value, ref_sigmoid(-d));
    const double l = 10.0 * unit(rng);
    track(afl(constant(l), constant(d)).item(), ref_sigmoid(-d) * l);

    // Linear critic w.x: its input gradient is w everywhere.
    const Tensor w = random_tensor(rng, {4}, -1.0, 1.0);
    const Tensor yr = random_tensor(rng, {4}, 0.0, 1.0);
    const Tensor yp = random_tensor(rng, {4}, 0.0, 1.0);
    const Var wv = constant(w);
    const Critic critic = [&](const Var& x) { return dot(wv, x); };
    const GpBundle b = wgan_gp(critic, yr, yp, unit(rng), kDefaultLambda);
    long double wr = 0, wp = 0, ww = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      wr += static_cast<long double>(w[k]) * yr[k];
      wp += static_cast<long double>(w[k]) * yp[k];
      ww += static_cast<long double>(w[k]) * w[k];
    }
    const long double gn = std::sqrt(ww + 1e-12L) - 1.0L;
    track(discriminator_loss(b).item(), -wr + wp + 10.0L * gn * gn);
  }
  const bool ok = worst < kFormulaTol && fl0_exact;
  return result("loss_formulas", ok,
                "max abs error " + sci(worst) + " (limit " + sci(kFormulaTol) +
                    "), FL(gamma=0)==CE bitwise: " + (fl0_exact ? "yes" : "no"));
}

struct OpCase {
  const char* name;
  Shape shape;
  double lo, hi;
  std::function<Var(const Var&)> f;
};

CheckResult check_op_gradients() {
  std::mt19937_64 rng(12);
  const Var c34 = constant(random_tensor(rng, {3, 4}, -1.0, 1.0));
  const Var c4 = constant(random_tensor(rng, {4}, 0.5, 1.5));
  const Var c3 = constant(random_tensor(rng, {3}, -1.0, 1.0));
  const std::vector<OpCase> cases = {
      {"add", {3, 4}, -1, 1, [&](const Var& x) { return add(x, c34); }},
      {"sub", {3, 4}, -1, 1, [&](const Var& x) { return sub(c34, x); }},
      {"mul", {3, 4}, -1, 1, [&](const Var& x) { return mul(x, mul(x, c34)); }},
      {"div", {4}, 0.5, 2, [&](const Var& x) { return div(c4, x); }},
      {"neg", {4}, -1, 1, [](const Var& x) { return neg(x); }},
      {"scale", {4}, -1, 1, [](const Var& x) { return scale(x, -2.5); }},
      {"add_scalar", {4}, -1, 1, [](const Var& x) { return mul(x, add_scalar(x, 0.3)); }},
      {"exp", {4}, -2, 2, [](const Var& x) { return exp(x); }},
      {"log", {4}, 0.2, 3, [](const Var& x) { return log(x); }},
      {"sigmoid", {4}, -4, 4, [](const Var& x) { return sigmoid(x); }},
      {"relu", {4}, 0.1, 1, [](const Var& x) { return relu(sub(x, constant(Tensor({4}, 0.55)))); }},
      {"pow_scalar", {4}, 0.3, 2, [](const Var& x) { return pow_scalar(x, 2.7); }},
      {"sqrt", {4}, 0.3, 2, [](const Var& x) { return sqrt(x); }},
      {"square", {4}, -2, 2, [](const Var& x) { return square(x); }},
      {"clamp", {4}, 0.2, 0.8, [](const Var& x) { return clamp(x, 0.1, 0.9); }},
      {"sum", {3, 4}, -1, 1, [](const Var& x) { return mul(sum(x), sum(x)); }},
      {"mean", {3, 4}, -1, 1, [](const Var& x) { return square(mean(x)); }},
      {"dot", {4}, -1, 1, [&](const Var& x) { return square(dot(x, c4)); }},
      {"expand", {}, -1, 1, [](const Var& x) { return mul(expand(x, {3, 2}), expand(x, {3, 2})); }},
      {"reshape", {3, 4}, -1, 1, [](const Var& x) { return square(reshape(x, {2, 6})); }},
      {"index", {3, 4}, -1, 1, [](const Var& x) { return mul(index(x, 5), index(x, 7)); }},
      {"scatter", {}, -1, 1, [](const Var& x) { return square(scatter(x, 2, {2, 2})); }},
      {"matmul", {3, 4}, -1, 1,
       [](const Var& x) { return matmul(x, transpose(mul(x, x))); }},
      {"transpose", {3, 4}, -1, 1, [&](const Var& x) { return matmul(transpose(x), c34); }},
      {"broadcast_cols", {3}, -1, 1, [](const Var& x) { return square(broadcast_cols(x, 4)); }},
      {"sum_cols", {3, 4}, -1, 1, [](const Var& x) { return square(sum_cols(x)); }},
      {"add_bias", {3}, -1, 1, [&](const Var& x) { return square(add_bias(c34, x)); }},
      {"im2col3x3", {2, 4, 4}, -1, 1, [](const Var& x) { return square(im2col3x3(x)); }},
      {"col2im3x3", {18, 16}, -1, 1,
       [](const Var& x) { return square(col2im3x3(x, 2, 4, 4)); }},
      {"upsample2", {2, 3, 3}, -1, 1, [](const Var& x) { return square(upsample2(x)); }},
      {"sumpool2", {2, 4, 4}, -1, 1, [](const Var& x) { return square(sumpool2(x)); }},
      {"softmax", {5}, -2, 2, [](const Var& x) { return softmax(x); }},
  };
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const OpCase& c = cases[i];
    const Tensor x0 = random_tensor(rng, c.shape, c.lo, c.hi);
    const double err = check_gradient(
        [&](const Var& x) { return weighted_sum(c.f(x), 100 + i); }, x0);
    if (err >= worst) {
      worst = err;
      worst_name = c.name;
    }
  }
  return result("op_gradients", worst < kGradTol,
                std::to_string(cases.size()) + " ops, max relative error " + sci(worst) + " (" +
                    worst_name + ", limit " + sci(kGradTol) + ")");
}

// Gradient check of `out(params)` w.r.t. every parameter tensor in turn.
double network_gradient_error(const ParamSet& base,
                              const std::function<Var(const ParamSet&)>& out) {
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double err = check_gradient(
        [&](const Var& x) {
          ParamSet ps = base.clone();
          ps.params()[i].leaf = x;
          return weighted_sum(out(ps), 200 + i);
        },
        base.params()[i].leaf.value());
    worst = std::max(worst, err);
  }
  return worst;
}

CheckResult check_network_gradients() {
  std::mt19937_64 rng(13);
  const NetworkSpec f = keypoint_network_spec(8, 8, 2, 3);
  const ParamSet fp = init_params(f, 21);
  const Tensor img = random_tensor(rng, {1, 8, 8}, 0.0, 1.0);
  const double e_f = network_gradient_error(
      fp, [&](const ParamSet& ps) { return forward_keypoint(f, ps, constant(img)); });

  const NetworkSpec d = discriminator_spec(8, 6);
  const ParamSet dp = init_params(d, 22);
  const Tensor a = random_tensor(rng, {8}, 0.0, 1.0);
  const double e_d = network_gradient_error(
      dp, [&](const ParamSet& ps) { return discriminator_score(d, ps, constant(a)); });
  // Input gradient, which the gradient penalty relies on.
  const double e_din =
      check_gradient([&](const Var& x) { return discriminator_score(d, dp, x); }, a);

  const NetworkSpec c = classifier_spec(2, 5, 3);
  const ParamSet cp = init_params(c, 23);
  const Tensor pt2 = random_tensor(rng, {2}, -1.0, 1.0);
  const double e_c = network_gradient_error(
      cp, [&](const ParamSet& ps) { return forward_classifier(c, ps, constant(pt2)); });

  const double worst = std::max({e_f, e_d, e_din, e_c});
  return result("network_gradients", worst < kGradTol,
                "keypoint " + sci(e_f) + ", critic " + sci(e_d) + ", critic input " + sci(e_din) +
                    ", classifier " + sci(e_c) + " (limit " + sci(kGradTol) + ")");
}

// Two-layer critic: sigmoid(W1 x + b1) . w2 + b2, built from explicit leaves.
struct SmallCritic {
  Var w1, b1, w2, b2;
  Var operator()(const Var& x) const {
    const Var h = sigmoid(add_bias(matmul(w1, reshape(x, {x.size(), 1})), b1));
    return add(reshape(matmul(w2, h), {}), b2);
  }
};

CheckResult check_gp_second_order() {
  std::mt19937_64 rng(14);
  constexpr std::size_t kIn = 6, kHidden = 12;
  SmallCritic base{leaf(random_tensor(rng, {kHidden, kIn}, -1.0, 1.0)),
                   leaf(random_tensor(rng, {kHidden}, -0.5, 0.5)),
                   leaf(random_tensor(rng, {1, kHidden}, -1.0, 1.0)),
                   leaf(random_tensor(rng, {}, -0.5, 0.5))};
  const Tensor y = random_tensor(rng, {kIn}, 0.0, 1.0);
  const Tensor yp = random_tensor(rng, {kIn}, 0.0, 1.0);
  const double alpha = 0.37;
  const std::size_t count = kHidden * kIn + kHidden + kHidden + 1;
  double worst = 0.0;
  for (int which = 0; which < 4; ++which) {
    SmallCritic probe = base;
    Var* slot[] = {&probe.w1, &probe.b1, &probe.w2, &probe.b2};
    const Tensor x0 = slot[which]->value();
    const double err = check_gradient(
        [&](const Var& x) {
          SmallCritic c = base;
          Var* s[] = {&c.w1, &c.b1, &c.w2, &c.b2};
          *s[which] = x;
          return wgan_gp(Critic(c), y, yp, alpha, kDefaultLambda).gp_term;
        },
        x0, 1e-5);
    worst = std::max(worst, err);
  }
  return result("gp_second_order", worst < kSecondOrderTol,
                std::to_string(count) + "-parameter critic, max relative error " + sci(worst) +
                    " (limit " + sci(kSecondOrderTol) + ")");
}

CheckResult check_detachment_identity() {
  // f: y' = theta * x with squared error; d: a * y' + b.
  const double x = 0.7, target = 1.3;
  Var theta = leaf(Tensor::scalar(0.2));
  Var a = leaf(Tensor::scalar(-0.8));
  Var b = leaf(Tensor::scalar(0.1));
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  bool d_zero = true;
  for (int step = 0; step < 100; ++step) {
    const Var pred = scale(theta, x);
    const Var loss = square(add_scalar(pred, -target));
    const Var d_out = add(mul(a, pred), b);
    const Var obj = afl(loss, d_out);
    const GradientMap g = backward(obj, {.create_graph = false});
    const GradientMap gl = backward(loss, {.create_graph = false});
    const double want = stable_sigmoid(-d_out.item()) * gl.at(theta).item();
    worst = std::max(worst, std::fabs(g.at(theta).item() - want));
    if (g.get_or_zero(a).item() != 0.0 || g.get_or_zero(b).item() != 0.0) d_zero = false;

    const Critic critic = [&](const Var& in) { return add(mul(a, reshape(in, {})), b); };
    const GpBundle bundle = wgan_gp(critic, Tensor::vector({target}),
                                    Tensor::vector({pred.item()}), unit(rng), kDefaultLambda);
    const GradientMap gd = backward(discriminator_loss(bundle), {.create_graph = false});
    const double ga = gd.get_or_zero(a).item(), gb = gd.get_or_zero(b).item();
    const double gt = g.at(theta).item();
    a.mutable_value()[0] -= 0.01 * ga;
    b.mutable_value()[0] -= 0.01 * gb;
    theta.mutable_value()[0] -= 0.05 * gt;
  }
  return result("detachment_identity", worst < kIdentityTol && d_zero,
                "100 steps, max |dAFL/dtheta - sigma(-d)dL/dtheta| " + sci(worst) +
                    ", dAFL/dtheta_d exactly 0: " + (d_zero ? "yes" : "no"));
}

CheckResult check_per_sample_weighting() {
  const std::vector<Var> losses = {constant(0.8), constant(0.3)};
  const std::vector<Var> d = {constant(-1.5), constant(2.0)};
  const double batch = afl_batch(losses, d).item();
  const double each = 0.5 * (afl(losses[0], d[0]).item() + afl(losses[1], d[1]).item());
  const long double pooled = ref_sigmoid(-0.25L) * 0.55L;
  const long double margin = 0.5L * (ref_sigmoid(1.5L) * 0.8L + ref_sigmoid(-2.0L) * 0.3L) - pooled;
  const double err_mean = std::fabs(batch - each);
  const double err_margin = static_cast<double>(std::fabs((batch - pooled) - margin));
  const bool ok = err_mean < kIdentityTol && err_margin < kIdentityTol && std::fabs(margin) > 1e-3;
  return result("per_sample_weighting", ok,
                "batch " + sci(batch) + " vs per-sample mean (err " + sci(err_mean) +
                    "), margin to pooled score " + sci(static_cast<double>(margin)) +
                    " (err " + sci(err_margin) + ")");
}

// Centroids, then affinities via atan2 angles rather than dot products.
AffinityPair brute_force_affinity(const HeatmapStack& h, double threshold) {
  const std::size_t k = h.keypoints();
  std::vector<std::optional<Point>> c(k);
  for (std::size_t m = 0; m < k; ++m) {
    long double w = 0, sx = 0, sy = 0;
    for (std::size_t y = 0; y < h.height(); ++y) {
      for (std::size_t x = 0; x < h.width(); ++x) {
        const long double v = h.at(m, y, x);
        if (v >= threshold) {
          w += v;
          sx += v * x;
          sy += v * y;
        }
      }
    }
    if (w > 0) c[m] = Point{static_cast<double>(sx / w), static_cast<double>(sy / w)};
  }
  AffinityPair out{SquareMatrix(k), SquareMatrix(k)};
  long double gx = 0, gy = 0;
  int n = 0;
  for (const auto& p : c) {
    if (p) {
      gx += p->x;
      gy += p->y;
      ++n;
    }
  }
  if (n > 0) {
    gx /= n;
    gy /= n;
  }
  const long double diag = std::sqrt(static_cast<long double>(h.width()) * h.width() +
                                     static_cast<long double>(h.height()) * h.height());
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (!c[i] || !c[j]) continue;
      const long double dx = c[i]->x - c[j]->x, dy = c[i]->y - c[j]->y;
      out.planar(i, j) = static_cast<double>(1.0L - std::sqrt(dx * dx + dy * dy) / diag);
      const long double ai = std::atan2(c[i]->y - gy, c[i]->x - gx);
      const long double aj = std::atan2(c[j]->y - gy, c[j]->x - gx);
      const long double ri = std::hypot(c[i]->x - gx, c[i]->y - gy);
      const long double rj = std::hypot(c[j]->x - gx, c[j]->y - gy);
      out.angular(i, j) =
          ri < 1e-9L || rj < 1e-9L ? 0.5 : static_cast<double>(0.5L + 0.5L * std::cos(ai - aj));
    }
  }
  return out;
}

CheckResult check_topology() {
  const Dataset scenes = make_keypoint_dataset(SceneConfig{}, 16, 100, 0);
  double worst = 0.0;
  for (const Sample& s : scenes.samples) {
    const AffinityPair got = topology_extract(*s.heatmaps);
    const AffinityPair want = brute_force_affinity(*s.heatmaps, kExistenceThreshold);
    for (std::size_t i = 0; i < got.planar.values().size(); ++i) {
      worst = std::max(worst, std::fabs(got.planar.values()[i] - want.planar.values()[i]));
      worst = std::max(worst, std::fabs(got.angular.values()[i] - want.angular.values()[i]));
    }
  }
  CentroidSet pair;
  pair.points = {Point{0, 0}, Point{64, 48}};
  const double planar = planar_affinity(pair, 64, 64)(0, 1);
  CentroidSet tri;
  tri.points = {Point{0, 0}, Point{2, 0}, Point{0, 2}};
  const double angular = angular_affinity(tri)(0, 1);
  const bool anchors = std::fabs(planar - 0.11612) < 5e-6 && std::fabs(angular - 0.34189) < 5e-6;
  return result("topology_oracle", worst < kTopologyTol && anchors,
                "100 scenes, max deviation from brute force " + sci(worst) + "; anchors planar " +
                    std::to_string(planar) + " (0.11612), angular " + std::to_string(angular) +
                    " (0.34189)");
}

CheckResult check_mutation() {
  std::mt19937_64 rng(17);
  const Tensor x0 = random_tensor(rng, {6}, -2.0, 2.0);
  const double clean =
      check_gradient([](const Var& x) { return weighted_sum(sigmoid(x), 300); }, x0);
  const double broken =
      check_gradient([](const Var& x) { return weighted_sum(corrupted_sigmoid(x), 300); }, x0);
  const bool caught = broken >= kGradTol && clean < kGradTol;
  return result("mutation_caught", caught,
                "corrupted sigmoid derivative error " + sci(broken) + " vs limit " +
                    sci(kGradTol) + " (clean " + sci(clean) + ")");
}

CheckResult check_frozen_critic() {
  SceneConfig sc;
  const Dataset data = make_keypoint_dataset(sc, 18, 32, 0);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr_f = 1e-2;
  cfg.f_head_bias = std::log(0.01 / 0.99);
  cfg.seed = 18;
  cfg.d_zero_init = true;
  cfg.freeze_d = true;
  std::vector<ParamSet> afl_traj, van_traj;
  TrainHooks ha, hv;
  ha.on_step = [&](std::size_t, const ParamSet& f) { afl_traj.push_back(f.clone()); };
  hv.on_step = [&](std::size_t, const ParamSet& f) { van_traj.push_back(f.clone()); };
  train_afl(cfg, data, nullptr, ha);
  TrainConfig half = cfg;
  half.lr_f = cfg.lr_f * 0.5;
  train_vanilla(half, data, nullptr, hv);
  bool same = afl_traj.size() == van_traj.size() && !afl_traj.empty();
  for (std::size_t i = 0; same && i < afl_traj.size(); ++i) same = afl_traj[i] == van_traj[i];
  return result("frozen_critic_equivalence", same,
                std::to_string(afl_traj.size()) + " steps, trajectories bit-identical: " +
                    (same ? "yes" : "no"));
}

CheckResult check_determinism() {
  SceneConfig sc;
  const Dataset data = make_keypoint_dataset(sc, 19, 24, 0);
  TrainConfig cfg;
  cfg.use_afl = true;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 19;
  cfg.f_head_bias = std::log(0.01 / 0.99);
  cfg.check_invariants = true;
  cfg.tracked_ids = {0, 1, 2, 3};
  const TrainResult r1 = train(cfg, data);
  const TrainResult r2 = train(cfg, data);
  bool same = r1.f == r2.f && r1.d == r2.d && r1.report.traces.size() == r2.report.traces.size();
  for (std::size_t i = 0; same && i < r1.report.traces.size(); ++i) {
    same = r1.report.traces[i].score == r2.report.traces[i].score &&
           r1.report.traces[i].base_loss == r2.report.traces[i].base_loss;
  }
  return result("determinism", same,
                "two AFL runs with invariant checks, parameters and traces identical: " +
                    std::string(same ? "yes" : "no"));
}

}  // namespace

Var corrupted_sigmoid(const Var& x) {
  Tensor v = x.value();
  for (double& e : v.values()) e = stable_sigmoid(e);
  return make_op("corrupted_sigmoid", std::move(v), {x}, [](const Node& self, const Var& g) {
    const Var s = constant(self.value);
    return std::vector<Var>{scale(mul(g, mul(s, add_scalar(neg(s), 1.0))), 1.01)};
  });
}

std::vector<VerifyCheck> verify_checks() {
  return {
      {"loss_formulas", check_loss_formulas},
      {"op_gradients", check_op_gradients},
      {"network_gradients", check_network_gradients},
      {"gp_second_order", check_gp_second_order},
      {"detachment_identity", check_detachment_identity},
      {"per_sample_weighting", check_per_sample_weighting},
      {"topology_oracle", check_topology},
      {"mutation_caught", check_mutation},
      {"frozen_critic_equivalence", check_frozen_critic},
      {"determinism", check_determinism},
  };
}

std::vector<CheckResult> run_verify(std::ostream* log) {
  std::vector<CheckResult> out;
  for (const VerifyCheck& c : verify_checks()) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = result(c.name, false, std::string("threw: ") + e.what());
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log != nullptr) {
      char t[32];
      std::snprintf(t, sizeof(t), "%.2fs", r.seconds);
      *log << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "  [" << t << "]\n";
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace afl
