#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "gauda/grad_check.hpp"
#include "gauda/losses.hpp"
#include "gauda/rng.hpp"
#include "gauda/serialize.hpp"
#include "gauda/tape.hpp"
#include "gauda/tensor.hpp"

using namespace gauda;

TEST(Tensor, MatmulSmallExample) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(a, b), Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(Tensor, MatmulMatchesNaiveTripleLoop) {
  RngStream rng(3);
  const Tensor a = gaussian(rng, {5, 7}), b = gaussian(rng, {7, 4});
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
}

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), std::invalid_argument);
  EXPECT_THROW(add(Tensor({2, 3}), Tensor({3, 2})), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{}), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{2, 0}), std::invalid_argument);
}

TEST(Tensor, NonFiniteResultIsRejected) {
  Tensor a({1, 1}, 1e308), b({1, 1}, 1e308);
  EXPECT_THROW(matmul(a, b), NumericError);
}

TEST(Tensor, ArgmaxLowestIndexOnTies) {
  const std::vector<double> v{0.2, 0.4, 0.4};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(Rng, SameSeedSameStream) {
  RngStream a(42, 7), b(42, 7), c(42, 8);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, SplitStreamsAreDistinctAndStable) {
  RngStream root(1);
  RngStream s1 = root.split(1), s1b = root.split(1), s2 = root.split(2);
  EXPECT_EQ(s1.next_u64(), s1b.next_u64());
  EXPECT_NE(root.split(1).next_u64(), s2.next_u64());
}

TEST(Rng, NormalMomentsAndUniformRange) {
  RngStream rng(9);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    ss += z * z;
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.02);
}

TEST(Rng, UniformIndexCoversRange) {
  RngStream rng(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(rng.uniform_index(7));
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(*seen.rbegin(), 6u);
}

TEST(Losses, MseValueAndGradient) {
  const auto lg = mse(Tensor::row({1.0, 2.0}), Tensor::row({0.0, 0.0}));
  EXPECT_DOUBLE_EQ(lg.loss, 2.5);
  EXPECT_DOUBLE_EQ(lg.grad[0], 1.0);
  EXPECT_DOUBLE_EQ(lg.grad[1], 2.0);
}

TEST(Losses, CrossEntropyUniformLogits) {
  const auto lg = cross_entropy(Tensor::matrix({{0.0, 0.0}}), Tensor::matrix({{1.0, 0.0}}));
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(lg.grad[0], -0.5, 1e-15);
}

TEST(Losses, CrossEntropyStableForHugeLogits) {
  const auto lg = cross_entropy(Tensor::matrix({{1000.0, 0.0}}), Tensor::matrix({{0.0, 1.0}}));
  EXPECT_NEAR(lg.loss, 1000.0, 1e-9);
}

TEST(Losses, CrossEntropyRejectsNonOneHot) {
  EXPECT_THROW(cross_entropy(Tensor::matrix({{0.0, 0.0}}), Tensor::matrix({{0.5, 0.5}})), std::invalid_argument);
}

TEST(Tape, ReluMatmulGradCheck) {
  RngStream rng(11);
  const Tensor w = gaussian(rng, {3, 2});
  const Tensor target = gaussian(rng, {4, 2});
  auto f = tape_function([&](Tape& t, Var x) { return t.mse(t.relu(t.matmul(x, t.constant(w))), target); });
  EXPECT_LT(grad_check(f, gaussian(rng, {4, 3}), 1e-5), 1e-6);
}

TEST(Tape, SoftmaxLogMeanGradCheck) {
  RngStream rng(12);
  auto f = tape_function([](Tape& t, Var x) { return t.mean(t.log(t.softmax(x))); });
  EXPECT_LT(grad_check(f, gaussian(rng, {3, 4}), 1e-5), 1e-6);
}

TEST(Tape, MulScaleAddRowGradCheck) {
  RngStream rng(13);
  const Tensor b = gaussian(rng, {1, 3});
  auto f = tape_function([&](Tape& t, Var x) {
    Var y = t.add_row(t.mul(x, x), t.constant(b));
    return t.mean(t.scale(y, 0.7));
  });
  EXPECT_LT(grad_check(f, gaussian(rng, {2, 3}), 1e-5), 1e-6);
}

TEST(Tape, StraightThroughPassesGradientUnchanged) {
  Tape t;
  Var z = t.leaf(Tensor::row({1.0, 2.0}));
  Var q = t.straight_through(z, Tensor::row({5.0, 5.0}));
  EXPECT_EQ(t.value(q), Tensor::row({5.0, 5.0}));
  t.backward(t.mse(q, Tensor::row({0.0, 0.0})));
  EXPECT_DOUBLE_EQ(t.grad(z)[0], 5.0);
  EXPECT_DOUBLE_EQ(t.grad(z)[1], 5.0);
}

TEST(Tape, StopGradientBlocksFlow) {
  Tape t;
  Var z = t.leaf(Tensor::row({1.0}));
  t.backward(t.mse(t.stop_gradient(z), Tensor::row({0.0})));
  EXPECT_DOUBLE_EQ(t.grad(z)[0], 0.0);
}

TEST(Tape, BackwardNeedsScalarRoot) {
  Tape t;
  Var z = t.leaf(Tensor::row({1.0, 2.0}));
  EXPECT_THROW(t.backward(z), std::invalid_argument);
}

TEST(GradCheck, DetectsWrongGradient) {
  DifferentiableFn bad = [](const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v * v;
    return std::pair{s, x};  // true gradient is 2x
  };
  EXPECT_GT(grad_check(bad, Tensor::row({1.0, -2.0}), 1e-5), 0.1);
}

TEST(Serialize, RoundTripIsBitExact) {
  RngStream rng(4);
  const std::vector<Tensor> ts{gaussian(rng, {3, 5}), Tensor::vector({1e-300, -0.0, 3.5})};
  const auto path = std::filesystem::temp_directory_path() / "gauda_roundtrip.gaud";
  save_tensors(path, ts);
  const auto back = load_tensors(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], ts[0]);
  EXPECT_EQ(std::signbit(back[1][1]), true);
  std::filesystem::remove(path);
}

TEST(Serialize, RejectsBadMagic) {
  const auto path = std::filesystem::temp_directory_path() / "gauda_bad.gaud";
  std::ofstream(path) << "NOPE";
  EXPECT_THROW(load_tensors(path), std::runtime_error);
  std::filesystem::remove(path);
}
