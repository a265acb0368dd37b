#ifndef AFL_TESTS_OP_CASES_H_
#define AFL_TESTS_OP_CASES_H_

// Every differentiable op with an input domain on which it is smooth, for
// finite-difference gradient checks.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "afl/autograd.h"
#include "oracles.h"

namespace oracle {

using namespace afl;

struct OpCase {
  std::string name;
  Shape shape;
  double lo, hi;
  std::function<Var(const Var&)> f;
};

// Reduces a tensor-valued op to a scalar with fixed random weights so every
// output entry contributes to the checked gradient.
inline Var weighted_sum(const Var& y) {
  std::mt19937_64 rng(y.size() * 7919);
  return dot(constant(oracle::random_tensor(rng, y.shape(), -1.0, 1.0)), y);
}

inline std::vector<OpCase> op_cases() {
  std::mt19937_64 rng(101);
  const Var other = constant(oracle::random_tensor(rng, {2, 3}, 0.5, 1.5));
  const Var mat = constant(oracle::random_tensor(rng, {3, 4}, -1.0, 1.0));
  const Var rows = constant(oracle::random_tensor(rng, {2}, -1.0, 1.0));
  return {
      {"add", {2, 3}, -1, 1, [=](const Var& x) { return add(x, other); }},
      {"add_self", {2, 3}, -1, 1, [](const Var& x) { return add(x, x); }},
      {"sub", {2, 3}, -1, 1, [=](const Var& x) { return sub(other, x); }},
      {"mul", {2, 3}, -1, 1, [=](const Var& x) { return mul(x, other); }},
      {"mul_self", {2, 3}, -1, 1, [](const Var& x) { return mul(x, x); }},
      {"div_num", {2, 3}, -1, 1, [=](const Var& x) { return div(x, other); }},
      {"div_den", {2, 3}, 0.5, 2, [=](const Var& x) { return div(other, x); }},
      {"neg", {2, 3}, -1, 1, [](const Var& x) { return neg(x); }},
      {"scale", {2, 3}, -1, 1, [](const Var& x) { return scale(x, -2.5); }},
      {"add_scalar", {2, 3}, -1, 1, [](const Var& x) { return add_scalar(x, 0.7); }},
      {"exp", {2, 3}, -2, 2, [](const Var& x) { return exp(x); }},
      {"log", {2, 3}, 0.2, 3, [](const Var& x) { return log(x); }},
      {"sigmoid", {2, 3}, -4, 4, [](const Var& x) { return sigmoid(x); }},
      {"relu", {2, 3}, 0.1, 1, [](const Var& x) { return relu(x); }},
      {"relu_neg", {2, 3}, -1, -0.1, [](const Var& x) { return relu(x); }},
      {"pow_scalar", {2, 3}, 0.3, 2, [](const Var& x) { return pow_scalar(x, 2.7); }},
      {"sqrt", {2, 3}, 0.3, 2, [](const Var& x) { return sqrt(x); }},
      {"square", {2, 3}, -2, 2, [](const Var& x) { return square(x); }},
      {"clamp", {2, 3}, -0.4, 0.4, [](const Var& x) { return clamp(x, -0.5, 0.5); }},
      {"sum", {2, 3}, -1, 1, [](const Var& x) { return sum(x); }},
      {"mean", {2, 3}, -1, 1, [](const Var& x) { return mean(x); }},
      {"dot", {2, 3}, -1, 1, [=](const Var& x) { return dot(x, other); }},
      {"expand", {1}, -1, 1, [](const Var& x) { return expand(x, {2, 2}); }},
      {"reshape", {2, 3}, -1, 1, [](const Var& x) { return reshape(x, {3, 2}); }},
      {"index", {2, 3}, -1, 1, [](const Var& x) { return index(x, 4); }},
      {"scatter", {}, -1, 1, [](const Var& x) { return scatter(x, 2, {2, 2}); }},
      {"matmul_left", {2, 3}, -1, 1, [=](const Var& x) { return matmul(x, mat); }},
      {"matmul_right", {3, 4}, -1, 1, [=](const Var& x) { return matmul(other, x); }},
      {"transpose", {2, 3}, -1, 1, [](const Var& x) { return transpose(x); }},
      {"broadcast_cols", {2}, -1, 1, [](const Var& x) { return broadcast_cols(x, 3); }},
      {"sum_cols", {2, 3}, -1, 1, [](const Var& x) { return sum_cols(x); }},
      {"add_bias_x", {2, 3}, -1, 1, [=](const Var& x) { return add_bias(x, rows); }},
      {"add_bias_b", {2}, -1, 1, [=](const Var& x) { return add_bias(other, x); }},
      {"im2col3x3", {2, 3, 4}, -1, 1, [](const Var& x) { return im2col3x3(x); }},
      {"col2im3x3", {18, 12}, -1, 1, [](const Var& x) { return col2im3x3(x, 2, 3, 4); }},
      {"upsample2", {2, 2, 3}, -1, 1, [](const Var& x) { return upsample2(x); }},
      {"sumpool2", {2, 4, 2}, -1, 1, [](const Var& x) { return sumpool2(x); }},
      {"softmax", {5}, -2, 2, [](const Var& x) { return softmax(x); }},
  };
}


}  // namespace oracle

#endif  // AFL_TESTS_OP_CASES_H_
