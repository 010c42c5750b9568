#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ifield/autodiff.hpp"
#include "ifield/gradcheck.hpp"

namespace ifield::ad {
namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Central differences, written independently of gradcheck().
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor p = x, m = x;
    p[i] += h;
    m[i] -= h;
    g[i] = (f(p) - f(m)) / (2.0 * h);
  }
  return g;
}

TEST(Backward, SquareAtThree) {
  Var x = Var::scalar(3.0, true);
  Var y = x * x;
  auto g = backward(y);
  EXPECT_DOUBLE_EQ(g.at(x)[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SoftmaxDotMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Tensor x0 = random_tensor(1, 5, rng);
  auto f = [](const Var& x) { return sum(softmax_rows(x) * x); };
  Var x(x0, true);
  auto g = backward(f(x));
  const Tensor num = numeric_gradient([&](const Tensor& t) { return f(constant(t)).item(); }, x0, 1e-5);
  for (std::size_t i = 0; i < 5; ++i) {
    const double a = g.at(x)[i];
    EXPECT_LT(std::abs(a - num[i]) / std::max({std::abs(a), std::abs(num[i]), 1e-8}), 1e-5) << i;
  }
}

TEST(Backward, ConstantFunctionHasZeroGradient) {
  Var x(Tensor(2, 3, 1.5), true);
  Var y = sum(x) * 0.0 + 4.0;
  auto g = backward(y);
  ASSERT_TRUE(g.contains(x));
  for (double v : g.at(x).data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsNonScalarRoot) {
  Var x(Tensor(2, 2, 1.0), true);
  EXPECT_THROW(backward(x * 2.0), std::invalid_argument);
}

TEST(Backward, OnlyReachableLeavesReceiveGradients) {
  Var a(Tensor(1, 2, 1.0), true);
  Var b(Tensor(1, 2, 2.0), true);
  Var c(Tensor(1, 2, 3.0), false);
  auto g = backward(sum(a * c));
  EXPECT_TRUE(g.contains(a));
  EXPECT_FALSE(g.contains(b));
  EXPECT_FALSE(g.contains(c));
  EXPECT_TRUE(g.at(a).same_shape(a.value()));
}

TEST(Backward, FanOutAccumulates) {
  Var x = Var::scalar(2.0, true);
  Var y = x * 3.0 + x * x + exp(x);
  auto g = backward(y);
  EXPECT_NEAR(g.at(x)[0], 3.0 + 4.0 + std::exp(2.0), 1e-12);
}

TEST(Backward, LinearityOnRandomGraphs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x0 = random_tensor(3, 4, rng);
    const Tensor w0 = random_tensor(4, 2, rng);
    auto f = [&](const Var& x) { return sum(tanh(matmul(x, constant(w0)))); };
    auto h = [&](const Var& x) { return sum(sigmoid(x) * x) + mean(square(x)); };
    Var x1(x0, true), x2(x0, true), x3(x0, true);
    auto gf = backward(f(x1));
    auto gh = backward(h(x2));
    auto gs = backward(f(x3) + h(x3));
    for (std::size_t i = 0; i < x0.size(); ++i) {
      EXPECT_NEAR(gs.at(x3)[i], gf.at(x1)[i] + gh.at(x2)[i], 1e-12);
    }
  }
}

TEST(Backward, RepeatedPassesAreIdentical) {
  std::mt19937_64 rng(5);
  Var x(random_tensor(4, 3, rng), true);
  Var y = sum(softmax_rows(matmul(x, transpose(x))));
  auto g1 = backward(y, {.retain_graph = true});
  x.zero_grad();
  auto g2 = backward(y, {.retain_graph = true});
  EXPECT_EQ(g1.at(x), g2.at(x));
}

TEST(Backward, LeafGradientsAccumulateAcrossPasses) {
  Var x = Var::scalar(1.0, true);
  backward(x * 2.0);
  backward(x * 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
}

TEST(Broadcast, RowColumnAndScalarOperands) {
  std::mt19937_64 rng(3);
  const Tensor m = random_tensor(3, 4, rng, 0.5, 1.5);
  const Tensor rowv = random_tensor(1, 4, rng, 0.5, 1.5);
  const Tensor colv = random_tensor(3, 1, rng, 0.5, 1.5);
  const Tensor s = Tensor::scalar(1.3);
  auto f = [](const std::vector<Var>& v) {
    return sum((v[0] + v[1]) * v[2] / v[3] - v[0] * v[3]);
  };
  auto r = gradcheck(f, {m, rowv, colv, s});
  EXPECT_TRUE(r.pass) << r.diagnostic;
  EXPECT_THROW(add(constant(Tensor(2, 3)), constant(Tensor(3, 2))), std::invalid_argument);
}

TEST(Ops, EveryPrimitivePassesGradcheck) {
  std::mt19937_64 rng(21);
  const Tensor a = random_tensor(3, 4, rng, 0.2, 1.0);
  const Tensor b = random_tensor(4, 2, rng);
  const std::vector<std::pair<const char*, MultiFunction>> cases = {
      {"matmul", [](const std::vector<Var>& v) { return sum(square(matmul(v[0], v[1]))); }},
      {"log_exp", [](const std::vector<Var>& v) { return sum(log(v[0]) + exp(v[0])); }},
      {"sigmoid_tanh", [](const std::vector<Var>& v) { return sum(sigmoid(v[0]) * tanh(v[0])); }},
      {"softmax", [](const std::vector<Var>& v) { return sum(softmax_rows(v[0]) * v[0]); }},
      {"log_softmax", [](const std::vector<Var>& v) { return sum(log_softmax_rows(v[0]) * v[0]); }},
      {"sqrt_abs", [](const std::vector<Var>& v) { return sum(sqrt(v[0]) + abs(v[0] - 0.55)); }},
      {"reductions", [](const std::vector<Var>& v) { return sum(square(sum_rows(v[0]))) + sum(square(sum_cols(v[0]))); }},
      {"select_slice", [](const std::vector<Var>& v) {
         return sum(square(select_rows(v[0], {2, 0, 2}))) + sum(slice_cols(v[0], 1, 3) * 1.7);
       }},
      {"concat", [](const std::vector<Var>& v) {
         return sum(square(concat_rows({v[0], v[0] * 2.0}))) + sum(square(concat_cols({v[0], matmul(v[0], v[1])})));
       }},
      {"min_max", [](const std::vector<Var>& v) {
         return sum(minimum(v[0], constant(Tensor(1, 1, 0.6))) + maximum(v[0] * 2.0, constant(Tensor(1, 1, 1.1))));
       }},
      {"clamp", [](const std::vector<Var>& v) { return sum(square(clamp(v[0], 0.3, 0.9))); }},
      {"l2_norm", [](const std::vector<Var>& v) { return l2_norm(v[0]) + l2_norm(v[1]); }},
      {"reshape_transpose", [](const std::vector<Var>& v) { return sum(square(reshape(transpose(v[0]), 2, 6))); }},
  };
  for (const auto& [name, f] : cases) {
    auto r = gradcheck(f, {a, b});
    EXPECT_TRUE(r.pass) << name << ": " << r.diagnostic;
  }
}

TEST(Gradcheck, L2NormPasses) {
  std::mt19937_64 rng(1);
  auto r = gradcheck([](const Var& x) { return l2_norm(x); }, random_tensor(3, 3, rng), 1e-5, 1e-4);
  EXPECT_TRUE(r.pass) << r.diagnostic;
}

TEST(Gradcheck, SumIsExact) {
  std::mt19937_64 rng(2);
  auto r = gradcheck([](const Var& x) { return sum(x); }, random_tensor(4, 5, rng), 1e-5, 1e-4);
  EXPECT_TRUE(r.pass);
  EXPECT_LT(r.max_rel_err, 1e-10);
}

// x^2 whose backward reports 4x instead of 2x.
Var planted_square(const Var& x) {
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
  return detail::make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = detail::pgrad(n, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * 4.0 * detail::pval(n, 0)[i];
  });
}

TEST(Gradcheck, PlantedWrongGradientFails) {
  std::mt19937_64 rng(3);
  auto r = gradcheck([](const Var& x) { return sum(planted_square(x)); }, random_tensor(2, 2, rng, 0.5, 1.0));
  EXPECT_FALSE(r.pass);
  EXPECT_NEAR(r.max_rel_err, 0.5, 1e-6);
}

TEST(Gradcheck, NanIsReportedNotThrown) {
  auto r = gradcheck([](const Var& x) { return sum(log(x)); }, Tensor(1, 2, -1.0));
  EXPECT_FALSE(r.pass);
  EXPECT_FALSE(r.diagnostic.empty());
}

}  // namespace
}  // namespace ifield::ad
