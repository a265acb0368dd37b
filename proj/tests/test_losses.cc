#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "afl/errors.h"
#include "afl/losses.h"
#include "oracles.h"

using namespace afl;

namespace {

Critic linear_critic(std::vector<double> w) {
  return [w](const Var& x) { return dot(constant(Tensor::vector(w)), x); };
}

}  // namespace

TEST_CASE("pt follows the binary label convention") {
  CHECK(pt(0.7, 1) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(pt(0.7, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(pt(0.5, 1) == 0.5);
  CHECK(pt(0.5, 0) == 0.5);
}

TEST_CASE("probabilities are clamped away from 0 and 1") {
  CHECK(clamp_probability(0.0) == kProbFloor);
  CHECK(clamp_probability(1.0) == 1.0 - kProbFloor);
  CHECK(std::isfinite(cross_entropy(pt(0.0, 1))));
}

TEST_CASE("cross entropy") {
  CHECK(cross_entropy(1.0) == 0.0);
  CHECK(cross_entropy(std::exp(-1.0)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cross_entropy(0.5) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
}

TEST_CASE("focal loss reference values") {
  CHECK(focal_loss(0.9, 2.0) == doctest::Approx(0.001053605156578263).epsilon(1e-13));
  CHECK(focal_loss(0.5, 2.0) == doctest::Approx(0.17328679513998633).epsilon(1e-13));
}

TEST_CASE("focal loss with gamma 0 is cross entropy bit for bit") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng);
    CHECK(focal_loss(p, 0.0) == cross_entropy(p));
  }
}

TEST_CASE("focal loss never exceeds cross entropy") {
  for (double gamma : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    for (int i = 1; i <= 1000; ++i) {
      const double p = i / 1000.0;
      CHECK(focal_loss(p, gamma) <= cross_entropy(p));
      if (gamma > 0.0 && p < 1.0) CHECK(focal_loss(p, gamma) < cross_entropy(p));
    }
  }
}

TEST_CASE("focal loss decreases in p_t") {
  for (double gamma : {0.0, 1.0, 2.0, 5.0}) {
    double prev = focal_loss(1e-4, gamma);
    for (int i = 2; i <= 10000; ++i) {
      const double cur = focal_loss(i * 1e-4, gamma);
      REQUIRE(cur <= prev);
      prev = cur;
    }
  }
}

TEST_CASE("formula values agree with a 50-digit oracle") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> up(1e-6, 1.0 - 1e-6);
  std::uniform_real_distribution<double> ug(0.0, 5.0);
  std::uniform_real_distribution<double> ud(-30.0, 30.0);
  std::uniform_real_distribution<double> ul(0.0, 10.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double p = up(rng), gamma = ug(rng), d = ud(rng), l = ul(rng);
    const int y = i % 2;
    const double p_t = pt(p, y);
    worst = std::max(worst, std::abs(p_t - oracle::to_double(oracle::pt(p, y))));
    worst = std::max(worst,
                     std::abs(cross_entropy(p_t) - oracle::to_double(oracle::cross_entropy(p_t))));
    worst = std::max(worst, std::abs(focal_loss(p_t, gamma) -
                                     oracle::to_double(oracle::focal_loss(p_t, gamma))));
    worst = std::max(worst, std::abs(difficulty_score(d).value -
                                     oracle::to_double(oracle::difficulty(d))));
    worst = std::max(worst, std::abs(afl::afl(constant(l), constant(d)).item() -
                                     oracle::to_double(oracle::afl(l, d))));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("difficulty score") {
  CHECK(difficulty_score(0.0).value == 0.5);
  CHECK(difficulty_score(-2.0).value == doctest::Approx(0.8807970779778824).epsilon(1e-15));
  CHECK(difficulty_score(20.0).value < 1e-8);
  CHECK(difficulty_score(20.0).value == doctest::Approx(2.0611536181902036e-9).epsilon(1e-12));
  CHECK(difficulty_score(1e4).value >= 0.0);
  CHECK(difficulty_score(-1e4).value <= 1.0);
  CHECK(difficulty_score(3.5).d_output == 3.5);
}

TEST_CASE("difficulty score is strictly decreasing") {
  double prev = difficulty_score(-30.0).value;
  for (int i = 1; i <= 600; ++i) {
    const double cur = difficulty_score(-30.0 + i * 0.1).value;
    REQUIRE(cur < prev);
    REQUIRE(cur > 0.0);
    REQUIRE(cur < 1.0);
    prev = cur;
  }
}

TEST_CASE("afl values") {
  CHECK(afl::afl(constant(2.0), constant(0.0)).item() == 1.0);
  CHECK(afl::afl(constant(0.0), constant(-7.0)).item() == 0.0);
  CHECK(afl::afl(constant(1.0), constant(-2.0)).item() ==
        doctest::Approx(0.8807970779778824).epsilon(1e-15));
}

TEST_CASE("afl gradient treats the score as a constant") {
  Var theta = leaf(Tensor::scalar(0.7));
  Var d_param = leaf(Tensor::scalar(-1.3));
  Var loss = square(theta);
  Var d_out = mul(d_param, constant(2.0));
  const GradientMap g = backward(afl::afl(loss, d_out));
  const double coef = stable_sigmoid(2.6);
  CHECK(g.get_or_zero(theta).item() == doctest::Approx(coef * 1.4).epsilon(1e-14));
  CHECK(g.get_or_zero(d_param).item() == 0.0);
}

TEST_CASE("afl_batch") {
  SUBCASE("equal-weight example") {
    std::vector<Var> l{constant(1.0), constant(3.0)}, d{constant(0.0), constant(0.0)};
    CHECK(afl_batch(l, d).item() == 1.0);
  }
  SUBCASE("opposite sigmoid tails") {
    std::vector<Var> l{constant(2.0), constant(2.0)}, d{constant(-20.0), constant(20.0)};
    CHECK(afl_batch(l, d).item() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("equals the mean of per-sample values") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Var> l, d;
      double expected = 0.0;
      const int n = 1 + trial % 7;
      for (int i = 0; i < n; ++i) {
        l.push_back(constant(std::abs(u(rng))));
        d.push_back(constant(u(rng)));
        expected += afl::afl(l.back(), d.back()).item();
      }
      CHECK(afl_batch(l, d).item() == doctest::Approx(expected / n).epsilon(1e-14));
    }
  }
  SUBCASE("equal outputs collapse to sigma(-d) mean(L)") {
    std::vector<Var> l{constant(0.5), constant(1.5), constant(4.0)};
    std::vector<Var> d(3, constant(0.8));
    CHECK(afl_batch(l, d).item() == doctest::Approx(stable_sigmoid(-0.8) * 2.0).epsilon(1e-15));
  }
  SUBCASE("unequal outputs differ from the pooled score") {
    std::vector<Var> l{constant(1.0), constant(3.0)}, d{constant(2.0), constant(-1.0)};
    const double per_sample = afl_batch(l, d).item();
    const double pooled = stable_sigmoid(-(2.0 - 1.0) / 2.0) * 2.0;
    CHECK(per_sample == doctest::Approx(0.5 * (stable_sigmoid(-2.0) + 3.0 * stable_sigmoid(1.0))));
    CHECK(std::abs(per_sample - pooled) > 0.1);
  }
  SUBCASE("contract errors") {
    std::vector<Var> one{constant(1.0)}, two{constant(1.0), constant(2.0)}, none;
    CHECK_THROWS_AS(afl_batch(one, two), ContractError);
    CHECK_THROWS_AS(afl_batch(none, none), ContractError);
  }
}

TEST_CASE("wgan_gp with linear critics") {
  const Tensor y = Tensor::vector({0.3, -1.2});
  const Tensor yp = Tensor::vector({2.0, 0.5});
  SUBCASE("unit-norm weights give no penalty") {
    for (double alpha : {0.0, 0.3, 1.0}) {
      const GpBundle b = wgan_gp(linear_critic({0.6, 0.8}), y, yp, alpha);
      CHECK(b.gp_term.item() == doctest::Approx(0.0).epsilon(1e-10));
      CHECK(b.alpha == alpha);
    }
  }
  SUBCASE("weights (3,4) give 160") {
    const GpBundle b = wgan_gp(linear_critic({3.0, 4.0}), y, yp, 0.4);
    CHECK(b.gp_term.item() == doctest::Approx(160.0).epsilon(1e-10));
    CHECK(b.loss_real.item() == doctest::Approx(-(3 * 0.3 - 4 * 1.2)).epsilon(1e-14));
    CHECK(b.loss_pred.item() == doctest::Approx(-(3 * 2.0 + 4 * 0.5)).epsilon(1e-14));
    const double expected =
        oracle::to_double(oracle::linear_critic_loss({3.0, 4.0}, y.raw(), yp.raw(), 10.0));
    CHECK(discriminator_loss(b).item() == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("identical inputs cancel") {
    const GpBundle b = wgan_gp(linear_critic({0.6, 0.8}), y, y, 0.5);
    CHECK(b.loss_real.item() == b.loss_pred.item());
    CHECK(discriminator_loss(b).item() == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("zero critic costs exactly lambda") {
    const GpBundle b = wgan_gp(linear_critic({0.0, 0.0}), y, yp, 0.5);
    // The norm floor sqrt(1e-12) keeps the zero gradient's norm at 1e-6.
    CHECK(discriminator_loss(b).item() == doctest::Approx(10.0 * (1e-6 - 1.0) * (1e-6 - 1.0)).epsilon(1e-12));
    CHECK(discriminator_loss(b).item() == doctest::Approx(10.0).epsilon(1e-5));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(wgan_gp(linear_critic({1.0, 0.0}), y, Tensor::vector({1.0}), 0.5),
                    ContractError);
    CHECK_THROWS_AS(wgan_gp(linear_critic({1.0, 0.0}), y, yp, 1.5), ContractError);
  }
}

TEST_CASE("gp_term is invariant under swapping inputs with alpha -> 1 - alpha") {
  const NetworkSpec spec = discriminator_spec(6, 8);
  const ParamSet d = init_params(spec, 21);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor y = oracle::random_tensor(rng, {6}, 0.0, 1.0);
    const Tensor yp = oracle::random_tensor(rng, {6}, 0.0, 1.0);
    const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double a = wgan_gp(spec, d, y, yp, alpha).gp_term.item();
    const double b = wgan_gp(spec, d, yp, y, 1.0 - alpha).gp_term.item();
    CHECK(a >= 0.0);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("discriminator loss matches an independent evaluation of the MLP critic") {
  const NetworkSpec spec = discriminator_spec(4, 5);
  const ParamSet d = init_params(spec, 2);
  const Tensor y = Tensor::vector({0.1, 0.9, 0.4, 0.3});
  const Tensor yp = Tensor::vector({0.7, 0.2, 0.0, 1.0});
  const GpBundle b = wgan_gp(spec, d, y, yp, 0.25);
  const double dy = discriminator_score(spec, d, constant(y)).item();
  const double dyp = discriminator_score(spec, d, constant(yp)).item();
  CHECK(b.loss_real.item() == -dy);
  CHECK(b.loss_pred.item() == -dyp);
  CHECK(discriminator_loss(b).item() ==
        doctest::Approx(-dy + dyp + b.gp_term.item()).epsilon(1e-14));
}
