#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <set>

#include "generators.hpp"
#include "pgl/gradcheck.hpp"
#include "pgl/ops.hpp"

using namespace pgl;
using pgl::testing::Gen;

namespace {

Tensor T1(std::vector<float> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}
Tensor T2(std::size_t r, std::size_t c, std::vector<float> v) { return Tensor({r, c}, std::move(v)); }

// Naive triple loop used as the matmul oracle.
std::vector<double> naive_matmul(const std::vector<float>& a, const std::vector<float>& b, std::size_t m, std::size_t k,
                                 std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += double(a[i * k + t]) * double(b[t * n + j]);
  return c;
}

}  // namespace

// --- create -----------------------------------------------------------------

TEST(Create, ZerosAndConstant) {
  auto z = create<float>({2, 2}, Init::zeros(), 1);
  EXPECT_EQ(z.values(), std::vector<float>(4, 0.0f));
  auto c = create<float>({3}, Init::constant(1.5), 1);
  EXPECT_EQ(c.values(), std::vector<float>(3, 1.5f));
  EXPECT_EQ(create<float>({2}, Init::ones(), 1).values(), std::vector<float>(2, 1.0f));
}

TEST(Create, KaimingIsDeterministicAndScaled) {
  auto a = create<float>({4, 4}, Init::kaiming_normal(4), 7);
  auto b = create<float>({4, 4}, Init::kaiming_normal(4), 7);
  EXPECT_EQ(a.values(), b.values());
  auto big = create<double>({200, 200}, Init::kaiming_normal(50), 3);
  double ss = 0;
  for (double x : big.values()) ss += x * x;
  EXPECT_NEAR(std::sqrt(ss / big.numel()), std::sqrt(2.0 / 50.0), 0.005);
}

TEST(Create, UniformStaysInRange) {
  auto u = create<float>({1000}, Init::uniform(0.25), 9);
  for (float x : u.values()) {
    EXPECT_GE(x, -0.25f);
    EXPECT_LE(x, 0.25f);
  }
}

TEST(Create, RejectsBadShapes) {
  EXPECT_THROW(make_shape({2, 0}), ShapeError);
  EXPECT_THROW(make_shape({-1}), ShapeError);
  EXPECT_THROW(create<float>({}, Init::zeros(), 1), ShapeError);
  EXPECT_THROW(create<float>({3, 0}, Init::zeros(), 1), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
}

// --- matmul -----------------------------------------------------------------

TEST(Matmul, Examples) {
  auto id = T2(2, 2, {1, 0, 0, 1});
  auto b = T2(2, 2, {5, 6, 7, 8});
  EXPECT_EQ(matmul(id, b).values(), b.values());
  EXPECT_EQ(matmul(T2(2, 2, {1, 2, 3, 4}), b).values(), (std::vector<float>{19, 22, 43, 50}));
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Matmul, MatchesNaiveOracleOnRandomShapes) {
  Gen g(11);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t m = g.size(1, 9), k = g.size(1, 9), n = g.size(1, 9);
    auto a = g.tensor({m, k}), b = g.tensor({k, n});
    auto want = naive_matmul(a.values(), b.values(), m, k, n);
    auto got = matmul(a, b).values();
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Gen g(12);
  for (int trial = 0; trial < 5; ++trial) {
    std::size_t m = g.size(1, 5), k = g.size(1, 5), n = g.size(1, 5);
    double err = max_gradient_error([](const auto& in) { return matmul(in[0], in[1]); },
                                    {g.tensor<double>({m, k}), g.tensor<double>({k, n})});
    EXPECT_LT(err, 1e-4);
  }
}

// --- elementwise ------------------------------------------------------------

TEST(Elementwise, Examples) {
  EXPECT_EQ(relu(T1({-1, 0, 2})).values(), (std::vector<float>{0, 0, 2}));
  EXPECT_EQ(add(T1({1, 2}), T1({3, 4})).values(), (std::vector<float>{4, 6}));
  auto roundtrip = pgl::log(pgl::exp(T1({0.5f, 2.0f}))).values();
  EXPECT_NEAR(roundtrip[0], 0.5, 1e-6);
  EXPECT_NEAR(roundtrip[1], 2.0, 1e-6);
  EXPECT_EQ(sub(T1({5, 5}), T1({1, 2})).values(), (std::vector<float>{4, 3}));
  EXPECT_EQ(mul(T1({2, 3}), T1({4, 5})).values(), (std::vector<float>{8, 15}));
  EXPECT_EQ(neg(T1({1, -2})).values(), (std::vector<float>{-1, 2}));
  EXPECT_EQ(mul(T1({2, 3}), Tensor::scalar(2)).values(), (std::vector<float>{4, 6}));
}

TEST(Elementwise, DispatcherMatchesNamedOps) {
  auto a = T1({1, -2, 3}), b = T1({0.5f, 0.5f, 2});
  EXPECT_EQ(elementwise(Elementwise::add, a, &b).values(), add(a, b).values());
  EXPECT_EQ(elementwise(Elementwise::relu, a).values(), relu(a).values());
  EXPECT_THROW(elementwise(Elementwise::add, a), ContractError);
}

TEST(Elementwise, Errors) {
  EXPECT_THROW(pgl::log(T1({1, 0})), DomainError);
  EXPECT_THROW(pgl::log(T1({-1})), DomainError);
  EXPECT_THROW(add(T1({1, 2}), T1({1, 2, 3})), ShapeError);
}

TEST(Elementwise, ReluGradientIsZeroAtTie) {
  auto x = Tensor({3}, {-1, 0, 2}, true);
  auto g = backward(sum(relu(x)));
  EXPECT_EQ(g.at(x).values(), (std::vector<float>{0, 0, 1}));
}

// --- reduce -----------------------------------------------------------------

TEST(Reduce, Examples) {
  EXPECT_EQ(sum(T2(2, 2, {1, 2, 3, 4})).item(), 10.0f);
  EXPECT_EQ(mean(T2(1, 2, {2, 4})).item(), 3.0f);
  auto x = Tensor({3}, {1, 5, 3}, true);
  auto m = max(x);
  EXPECT_EQ(m.item(), 5.0f);
  EXPECT_EQ(backward(m).at(x).values(), (std::vector<float>{0, 1, 0}));
}

TEST(Reduce, AlongAxes) {
  auto x = T2(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(sum(x, {0}).values(), (std::vector<float>{5, 7, 9}));
  EXPECT_EQ(sum(x, {1}).values(), (std::vector<float>{6, 15}));
  EXPECT_EQ(max(x, {1}).values(), (std::vector<float>{3, 6}));
  EXPECT_THROW(sum(x, {2}), ShapeError);
}

TEST(Reduce, MeanBackwardDistributesEvenly) {
  auto x = Tensor({2, 2}, {1, 2, 3, 4}, true);
  EXPECT_EQ(backward(mean(x)).at(x).values(), std::vector<float>(4, 0.25f));
}

// --- reshape / pad / slice --------------------------------------------------

TEST(ReshapePadSlice, Examples) {
  auto r = reshape(T1({1, 2, 3, 4}), {2, 2});
  EXPECT_EQ(r.shape(), (Shape{2, 2}));
  EXPECT_EQ(r.values(), (std::vector<float>{1, 2, 3, 4}));
  EXPECT_EQ(pad(T1({1}), {{1, 1}}).values(), (std::vector<float>{0, 1, 0}));
  EXPECT_EQ(slice(T1({10, 20, 30}), {{1, 3}}).values(), (std::vector<float>{20, 30}));
  EXPECT_THROW(reshape(T1({1, 2, 3}), {2, 2}), ShapeError);
  EXPECT_THROW(slice(T1({1, 2}), {{1, 3}}), ShapeError);
}

TEST(ReshapePadSlice, SliceUndoesPad) {
  Gen g(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = g.shape();
    auto x = g.tensor(s);
    std::vector<std::pair<std::size_t, std::size_t>> amounts;
    std::vector<Range> inner;
    for (auto d : s) {
      auto b = g.size(0, 2), a = g.size(0, 2);
      amounts.push_back({b, a});
      inner.push_back({b, b + d});
    }
    EXPECT_EQ(slice(pad(x, amounts), inner).values(), x.values());
  }
}

// --- backward ---------------------------------------------------------------

TEST(Backward, Examples) {
  auto x = Tensor({3}, {1, 2, 3}, true);
  EXPECT_EQ(backward(sum(mul(x, x))).at(x).values(), (std::vector<float>{2, 4, 6}));
  EXPECT_EQ(backward(sum(mul(detach(x), x))).at(x).values(), (std::vector<float>{1, 2, 3}));
  EXPECT_THROW(backward(mul(x, x)), ContractError);
}

TEST(Backward, GradientsAccumulateOverReuse) {
  auto x = Tensor({2}, {1, 2}, true);
  auto y = add(add(x, x), mul(x, x));  // 2x + x^2
  EXPECT_EQ(backward(sum(y)).at(x).values(), (std::vector<float>{4, 6}));
}

TEST(Backward, UnreachableParametersAreAbsent) {
  auto x = Tensor({2}, {1, 2}, true);
  auto unused = Tensor({2}, {3, 4}, true);
  auto g = backward(sum(x));
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(unused));
}

TEST(Backward, GradShapesMatchTensorShapes) {
  Gen g(14);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t m = g.size(1, 4), k = g.size(1, 4), n = g.size(1, 4);
    auto a = g.tensor({m, k}, -1, 1, true), b = g.tensor({k, n}, -1, 1, true);
    auto c = relu(matmul(a, b));
    auto grads = backward(sum(c));
    EXPECT_EQ(grads.at(a).shape(), a.shape());
    EXPECT_EQ(grads.at(b).shape(), b.shape());
    EXPECT_EQ(grads.at(c).shape(), c.shape());
  }
}

// Linearity: grad(a f + b g) = a grad f + b grad g.
TEST(BackwardProperty, Linearity) {
  Gen gen(15);
  const double coeffs[] = {-2.0, 0.5, 3.0};
  for (int trial = 0; trial < 20; ++trial) {
    auto s = gen.shape();
    auto x = gen.tensor<double>(s, 0.2, 1.0, true);
    auto f = [](const BasicTensor<double>& t) { return sum(mul(t, t)); };
    auto h = [](const BasicTensor<double>& t) { return sum(pgl::exp(t)); };
    auto gf = backward(f(x)).at(x).values();
    auto gh = backward(h(x)).at(x).values();
    for (double a : coeffs)
      for (double b : coeffs) {
        auto combo = add(scale(f(x), a), scale(h(x), b));
        auto gc = backward(combo).at(x).values();
        for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gh[i], 1e-5);
      }
  }
}

// --- detach -----------------------------------------------------------------

TEST(Detach, Examples) {
  auto x = Tensor({2}, {1, 2}, true);
  auto d = detach(x);
  EXPECT_EQ(d.values(), (std::vector<float>{1, 2}));
  EXPECT_FALSE(d.requires_grad());
  EXPECT_TRUE(backward(sum(mul(d, d))).empty());
}

TEST(DetachProperty, ExactValuesAndZeroContribution) {
  Gen g(16);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = g.shape();
    auto w = g.tensor(s, -1, 1, true);
    auto upstream = relu(mul(w, w));
    auto d = detach(upstream);
    ASSERT_EQ(d.values(), upstream.values());  // bit-equal
    auto v = g.tensor(s, -1, 1, true);
    auto grads = backward(sum(mul(d, v)));
    EXPECT_FALSE(grads.contains(w));
    EXPECT_FALSE(grads.contains(upstream));
    EXPECT_TRUE(grads.contains(v));
  }
}

// --- tape invariants --------------------------------------------------------

TEST(TapeProperty, ParentsPrecedeChildren) {
  Gen g(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = g.tensor({3, 3}, -1, 1, true);
    auto b = g.tensor({3, 3}, -1, 1, true);
    auto c = g.tensor({3, 3});  // untracked
    auto y = sum(mul(relu(add(matmul(a, b), c)), pgl::exp(b)));
    auto tape = tape_of(y);
    std::map<NodeId, std::size_t> position;
    for (std::size_t i = 0; i < tape.size(); ++i) position[tape[i].output] = i;
    for (std::size_t i = 0; i < tape.size(); ++i)
      for (auto p : tape[i].parents) {
        ASSERT_TRUE(position.count(p));
        EXPECT_LT(position[p], i);
      }
  }
}

TEST(TapeProperty, UntrackedTensorsNeverAppearAsParents) {
  auto a = Tensor({2}, {1, 2}, true);
  auto c = Tensor({2}, {3, 4});
  auto tape = tape_of(sum(mul(a, c)));
  for (auto& rec : tape) EXPECT_EQ(rec.parents.size(), rec.op == "leaf" ? 0u : 1u);
  EXPECT_FALSE(c.node_id().has_value());
}

TEST(Determinism, SameSeedSameForwardAndBackward) {
  auto run = [] {
    auto w = create<float>({8, 8}, Init::kaiming_normal(8), 42, true);
    auto x = create<float>({4, 8}, Init::uniform(1.0), 43);
    auto y = sum(relu(matmul(x, w)));
    return std::make_pair(y.item(), backward(y).at(w).values());
  };
  auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// --- gradient suite ---------------------------------------------------------

TEST(GradSuite, AllOpsPassWithinBudget) {
  auto start = std::chrono::steady_clock::now();
  auto results = run_gradcheck_suite(default_grad_cases(), 5);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& r : results) EXPECT_TRUE(r.passed) << r.name << " max error " << r.max_error;
  std::set<std::string> names;
  for (const auto& r : results) names.insert(r.name);
  for (const char* op : {"matmul", "add", "sub", "mul", "relu", "exp", "log", "neg", "sum", "mean", "max", "reshape",
                         "pad", "slice", "linear", "conv2d", "batchnorm_train", "softmax_cross_entropy",
                         "residual_block", "global_avg_pool"})
    EXPECT_TRUE(names.count(op)) << op;
  EXPECT_LT(secs, 60.0);
}

namespace {

// ReLU whose backward has the wrong sign.
template <class T>
BasicTensor<T> broken_relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a[i], T(0));
  auto ab = a.buffer();
  return make_op<T>("broken_relu", a.shape(), std::move(out), {&a},
                    [ab](const std::vector<T>& g, detail::ParentGrads<T>& pg) {
                      auto& ga = pg.slot(0);
                      for (std::size_t i = 0; i < g.size(); ++i)
                        if ((*ab)[i] > T(0)) ga[i] -= g[i];
                    });
}

}  // namespace

TEST(GradSuite, SignFlippedReluIsCaught) {
  auto cases = default_grad_cases();
  cases.push_back({"broken_relu", 1e-4, [](std::mt19937_64& rng) {
                     return max_gradient_error([](const auto& in) { return broken_relu(in[0]); },
                                               {detail::away_from_zero({3, 4}, rng)});
                   }});
  auto results = run_gradcheck_suite(cases, 5);
  EXPECT_FALSE(all_passed(results));
  EXPECT_FALSE(results.back().passed);
}
