// Copyright 2026 The dgpsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <set>

#include "dgpsim/numerics.hpp"
#include "support.hpp"

namespace dgpsim {
namespace {

TEST(Rng, SameSeedAndStreamReplay) {
  Rng a(7, 3);
  Rng b(7, 3);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsAreIndependent) {
  Rng a(7, 1);
  Rng b(7, 2);
  Rng c(8, 1);
  int same_ab = 0;
  int same_ac = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    same_ab += x == b.next_u64();
    same_ac += x == c.next_u64();
  }
  EXPECT_EQ(same_ab, 0);
  EXPECT_EQ(same_ac, 0);
}

TEST(Rng, UniformAndIndexRanges) {
  Rng rng(1, 9);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.uniform_index(7), 7u);
  }
  EXPECT_THROW(rng.uniform_index(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
  Rng rng(2, 2);
  const int n = 200000;
  double s = 0.0;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    sq += z * z;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.02);
}

TEST(Rng, PermutationIsBijection) {
  Rng rng(3, 3);
  const auto p = rng.permutation(50);
  std::set<std::size_t> seen(p.begin(), p.end());
  EXPECT_EQ(seen.size(), 50u);
  EXPECT_EQ(*seen.rbegin(), 49u);
}

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(Tensor<double>({2, 3}, VectorXd::Zero(5)), std::invalid_argument);
  const Tensor<double> t({2, 3}, VectorXd::LinSpaced(6, 0, 5));
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), 3);
  EXPECT_EQ(t.matrix()(1, 0), 3.0);  // row-major layout
}

TEST(TensorSet, FlattenRoundTripAndArithmetic) {
  Rng rng(4, 4);
  const auto a = testing::random_gradient_set(rng, {{3, 4}, {4}, {2}});
  const auto b = testing::random_gradient_set(rng, {{3, 4}, {4}, {2}});
  EXPECT_EQ(a.unflatten(a.flatten()), a);
  EXPECT_EQ(a.total_size(), 18);
  const VectorXd fa = a.flatten();
  const VectorXd fb = b.flatten();
  EXPECT_NEAR(dot(a, b), fa.dot(fb), 1e-12);
  EXPECT_NEAR(squared_norm(a - b), (fa - fb).squaredNorm(), 1e-12);
  EXPECT_TRUE(((a + b).flatten() - (fa + fb)).isZero(0.0));
  EXPECT_TRUE(((2.0 * a).flatten() - 2.0 * fa).isZero(0.0));
  EXPECT_TRUE((mean(std::vector<GradientSet>{a, b}).flatten() - 0.5 * (fa + fb)).norm() < 1e-14);
}

TEST(TensorSet, StructureMismatchThrows) {
  Rng rng(5, 5);
  const auto a = testing::random_gradient_set(rng, {{3}});
  const auto b = testing::random_gradient_set(rng, {{4}});
  EXPECT_THROW(a + b, std::invalid_argument);
  EXPECT_THROW(dot(a, b), std::invalid_argument);
  EXPECT_THROW(a.at("missing"), std::out_of_range);
}

TEST(Gaussian, RejectsNegativeStdAndHonoursZero) {
  Rng rng(6, 6);
  EXPECT_THROW(gaussian(rng, {3}, 0.0, -1.0), std::invalid_argument);
  const auto t = gaussian(rng, {5}, 0.25, 0.0);
  EXPECT_TRUE((t.data().array() == 0.25).all());
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps).
  AdamState s = AdamState::zeros(3);
  VectorXd g(3);
  g << 2.0, -0.5, 0.0;
  const VectorXd step = adam_step(s, g, 0.1);
  EXPECT_NEAR(step(0), 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_NEAR(step(1), -0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_EQ(step(2), 0.0);
}

TEST(Adam, MatchesScalarRecurrence) {
  AdamState s = AdamState::zeros(1);
  double m = 0.0;
  double v = 0.0;
  Rng rng(7, 7);
  for (int t = 1; t <= 20; ++t) {
    const double g = rng.normal();
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double expected = 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(adam_step(s, VectorXd::Constant(1, g), 0.01)(0), expected, 1e-14);
  }
  EXPECT_THROW(adam_step(s, VectorXd::Zero(2), 0.01), std::invalid_argument);
}

}  // namespace
}  // namespace dgpsim
