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

#include "dgpsim/model.hpp"
#include "support.hpp"

namespace dgpsim {
namespace {

TEST(Mlp, RejectsBrokenLayerChains) {
  DenseLayer<double> a{MatrixXd::Zero(3, 2), VectorXd::Zero(3)};
  DenseLayer<double> b{MatrixXd::Zero(2, 4), VectorXd::Zero(2)};
  EXPECT_THROW(MlpModel({a, b}), std::invalid_argument);
  DenseLayer<double> c{MatrixXd::Zero(3, 2), VectorXd::Zero(2)};
  EXPECT_THROW(MlpModel({c}), std::invalid_argument);
  EXPECT_THROW(MlpModel(std::vector<DenseLayer<double>>{}), std::invalid_argument);
}

TEST(Mlp, ParameterRoundTripAndUpdate) {
  Rng rng(1, 1);
  const auto model = testing::random_model(rng, {5, 4, 3});
  EXPECT_EQ(model.param_count(), 5 * 4 + 4 + 4 * 3 + 3);
  EXPECT_EQ(MlpModel::from_parameters(model.parameters()), model);
  const auto step = GradientSet::zeros_like(model.parameters());
  EXPECT_EQ(model.updated(step, 0.5), model);
  const auto ones = model.parameters().unflatten(VectorXd::Ones(model.param_count()));
  const auto moved = model.updated(ones, 0.25);
  EXPECT_TRUE((model.parameters().flatten() - moved.parameters().flatten()).isApproxToConstant(0.25));
}

TEST(Mlp, ZeroWeightsTwoClassesGiveFairCoin) {
  // Symmetric logits: p = (1/2, 1/2), loss ln 2, output-bias gradient p - y.
  const MlpModel model({DenseLayer<double>{MatrixXd::Zero(2, 3), VectorXd::Zero(2)}});
  Batch b{MatrixXd::Ones(1, 3), {0}};
  const auto lg = loss_and_grad(model, b);
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-15);
  const auto& gb = lg.grads.at(bias_id(0)).data();
  EXPECT_NEAR(gb(0), -0.5, 1e-15);
  EXPECT_NEAR(gb(1), 0.5, 1e-15);
}

TEST(Mlp, SoftmaxIsStableForHugeLogits) {
  MatrixXd logits(1, 3);
  logits << 1000.0, 1000.0, -1000.0;
  const auto p = softmax_rows<double>(logits);
  EXPECT_NEAR(p(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(p(0, 2), 0.0, 1e-15);
}

TEST(Mlp, AnalyticGradientMatchesFiniteDifferences) {
  Rng rng(2, 2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = testing::random_model(rng, {6, 5, 4, 3});
    const auto batch = testing::random_batch(rng, 1 + static_cast<Index>(rng.uniform_index(4)), 6, 3);
    const VectorXd analytic = loss_and_grad(model, batch).grads.flatten();
    const VectorXd numeric = testing::finite_diff_param_grad(model, batch, 1e-6);
    EXPECT_LE((analytic - numeric).norm(), 1e-6 * std::max(1.0, analytic.norm())) << "trial " << trial;
  }
}

TEST(Mlp, OutputBiasGradientSumsToZero) {
  Rng rng(3, 3);
  const auto model = testing::random_model(rng, {4, 8, 5});
  const auto batch = testing::random_batch(rng, 3, 4, 5);
  EXPECT_NEAR(loss_and_grad(model, batch).grads.at(bias_id(1)).data().sum(), 0.0, 1e-15);
}

TEST(Mlp, SoftTargetsReduceToOneHot) {
  Rng rng(4, 4);
  const auto model = testing::random_model(rng, {3, 4, 2});
  const auto batch = testing::random_batch(rng, 2, 3, 2);
  const auto hard = loss_and_grad(model, batch);
  const auto tr = backprop<double>(model, batch.inputs, one_hot(batch.labels, 2));
  EXPECT_EQ(tr.loss, hard.loss);
  EXPECT_EQ(gradients_from_trace(model, tr), hard.grads);
}

TEST(Batch, ValidationErrors) {
  Batch b{MatrixXd::Zero(2, 3), {0}};
  EXPECT_THROW(b.validate(2), std::invalid_argument);
  b.labels = {0, 5};
  EXPECT_THROW(b.validate(2), std::invalid_argument);
  Rng rng(5, 5);
  const auto model = testing::random_model(rng, {4, 2});
  EXPECT_THROW(loss_and_grad(model, Batch{MatrixXd::Zero(1, 3), {0}}), std::invalid_argument);
}

TEST(Imprint, PreActivationsOfWorkedExample) {
  // x = (0.4, 0.8), measurement (0.5, 0.5), thresholds (0.3, 0.7):
  // h = 0.6 - c = (0.3, -0.1).
  const MlpModel base({DenseLayer<double>{MatrixXd::Ones(2, 2), VectorXd::Zero(2)}});
  ImprintSpec spec;
  spec.measurement = VectorXd::Constant(2, 0.5);
  spec.thresholds = {0.3, 0.7};
  const auto model = insert_imprint(base, spec);
  Eigen::RowVector2d x(0.4, 0.8);
  const auto& first = model.layers().front();
  const VectorXd h = first.weight * x.transpose() + first.bias;
  EXPECT_NEAR(h(0), 0.3, 1e-15);
  EXPECT_NEAR(h(1), -0.1, 1e-15);
  EXPECT_NEAR(h(2), 0.4, 1e-15);  // pass-through rows carry x itself
  EXPECT_NEAR(h(3), 0.8, 1e-15);
}

TEST(Imprint, WidenedLayerSharesImprintColumn) {
  Rng rng(6, 6);
  const auto base = testing::random_model(rng, {4, 3, 2});
  ImprintSpec spec;
  spec.measurement = VectorXd::Constant(4, 0.25);
  spec.thresholds = {0.1, 0.2, 0.4};
  const auto model = insert_imprint(base, spec);
  ASSERT_EQ(model.depth(), 3u);
  const auto& widened = model.layers()[1].weight;
  EXPECT_EQ(widened.cols(), 3 + 4);
  for (Index k = 1; k < 3; ++k) EXPECT_EQ(widened.col(k), widened.col(0));
  EXPECT_EQ(MatrixXd(widened.rightCols(4)), base.layers()[0].weight);
  EXPECT_EQ(model.layers()[2].weight, base.layers()[1].weight);
}

TEST(Imprint, SpecValidation) {
  ImprintSpec spec;
  spec.measurement = VectorXd::Ones(2);
  spec.thresholds = {0.5};
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec.thresholds = {0.5, 0.5};
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec.thresholds = {0.1, 0.5};
  Rng rng(7, 7);
  EXPECT_THROW(insert_imprint(testing::random_model(rng, {3, 2}), spec), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(8, 8);
  const auto model = testing::random_model(rng, {7, 5, 3, 4});
  EXPECT_EQ(checkpoint_from_json(checkpoint_to_json(model)), model);
  EXPECT_EQ(checkpoint_to_json(model), checkpoint_to_json(checkpoint_from_json(checkpoint_to_json(model))));
  EXPECT_THROW(checkpoint_from_json("[1,2]"), std::invalid_argument);
}

}  // namespace
}  // namespace dgpsim
