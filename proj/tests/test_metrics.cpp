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

#include "dgpsim/metrics.hpp"
#include "support.hpp"

namespace dgpsim {
namespace {

Tensor<double> random_image(Rng& rng, Index h, Index w) {
  Tensor<double> t({h, w});
  for (Index i = 0; i < t.size(); ++i) t.data()(i) = rng.uniform();
  return t;
}

TEST(Distance, EuclideanAndCosine) {
  VectorXd a(2);
  VectorXd b(2);
  a << 1.0, 0.0;
  b << 0.0, 2.0;
  EXPECT_DOUBLE_EQ(vector_distance(a, b, DistanceMetric::kEuclidean), std::sqrt(5.0));
  EXPECT_DOUBLE_EQ(vector_distance(a, b, DistanceMetric::kCosine), 1.0);
  EXPECT_NEAR(vector_distance(a, 3.0 * a, DistanceMetric::kCosine), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(vector_distance(a, -a, DistanceMetric::kCosine), 2.0);
  EXPECT_DOUBLE_EQ(vector_distance(VectorXd::Zero(2), a, DistanceMetric::kCosine), 1.0);
  EXPECT_THROW(vector_distance(a, VectorXd::Zero(3), DistanceMetric::kEuclidean), std::invalid_argument);
  EXPECT_EQ(parse_metric("cosine"), DistanceMetric::kCosine);
  EXPECT_THROW(parse_metric("manhattan"), std::invalid_argument);
}

TEST(Distance, SparseOperandsCompareDensified) {
  Rng rng(1, 1);
  const auto g = testing::random_gradient_set(rng, {{4, 4}, {4}});
  const auto pruned = dgp_prune(g, {0.1, 0.5});
  EXPECT_DOUBLE_EQ(grad_distance(pruned, dense_wire(g), DistanceMetric::kEuclidean),
                   norm(densify(pruned) - g));
}

TEST(Quality, IdenticalImagesArePerfect) {
  Rng rng(2, 2);
  const auto img = random_image(rng, 8, 8);
  const auto q = image_quality(img, img, 1.0);
  EXPECT_EQ(q.mse, 0.0);
  EXPECT_TRUE(std::isinf(q.psnr));
  EXPECT_NEAR(q.ssim, 1.0, 1e-15);
}

TEST(Quality, MseAndPsnrFormulas) {
  Tensor<double> a({2, 2}, VectorXd::Zero(4));
  Tensor<double> b({2, 2}, VectorXd::Constant(4, 0.1));
  const auto q = image_quality(a, b, 1.0);
  EXPECT_NEAR(q.mse, 0.01, 1e-15);
  EXPECT_NEAR(q.psnr, 20.0, 1e-12);
}

TEST(Quality, SsimMatchesLoopReference) {
  Rng rng(3, 3);
  for (const auto& [h, w] : std::vector<std::pair<Index, Index>>{{8, 8}, {4, 4}, {2, 5}, {3, 3}, {6, 9}}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto a = random_image(rng, h, w);
      const auto b = random_image(rng, h, w);
      EXPECT_NEAR(ssim(a, b, 1.0), testing::ssim_reference(a.matrix(), b.matrix(), 1.0), 1e-12);
    }
  }
}

TEST(Quality, SsimIsSymmetricAndBounded) {
  Rng rng(4, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_image(rng, 8, 8);
    const auto b = random_image(rng, 8, 8);
    const double s = ssim(a, b, 1.0);
    EXPECT_NEAR(s, ssim(b, a, 1.0), 1e-15);
    EXPECT_LE(s, 1.0);
    EXPECT_GE(s, -1.0);
  }
  Tensor<double> x({8, 8});
  EXPECT_THROW(ssim(x, Tensor<double>({4, 4}), 1.0), std::invalid_argument);
  EXPECT_THROW(ssim(x, x, 0.0), std::invalid_argument);
}

TEST(Quality, AsImagePicksSquarestGrid) {
  EXPECT_EQ(as_image(VectorXd::Zero(64)).shape(), (Shape{8, 8}));
  EXPECT_EQ(as_image(VectorXd::Zero(16)).shape(), (Shape{4, 4}));
  EXPECT_EQ(as_image(VectorXd::Zero(10)).shape(), (Shape{2, 5}));
  EXPECT_EQ(as_image(VectorXd::Zero(7)).shape(), (Shape{1, 7}));
}

TEST(Bytes, SparseFormulaCountsIdPrefix) {
  SparseGradient wire;
  wire.tensors.push_back({"fc0.weight", {4, 4}, {0, 5, 9}, {1.0, 2.0, 3.0}});
  wire.tensors.push_back({"fc0.bias", {4}, {}, {}});
  EXPECT_EQ(wire_bytes(wire), (1 + 10 + 4 + 24) + (1 + 8 + 4));
  EXPECT_EQ(dense_bytes(20), 80);
  wire.dense = true;
  EXPECT_EQ(wire_bytes(wire), 80);
}

TEST(Bytes, LocationDownloadAddsBitmask) {
  LocationSet s;
  s.ids = {"a", "b"};
  s.masks = {std::vector<bool>(10, false), std::vector<bool>(3, true)};
  s.masks[0][4] = true;
  EXPECT_EQ(location_download_bytes(s), 4 * 4 + 2 + 1);
}

TEST(Ledger, TotalsFlagsAndCsv) {
  CommLedger ledger;
  SparseGradient cheap;
  cheap.tensors.push_back({"a", {100}, {1}, {1.0}});
  SparseGradient costly;
  costly.tensors.push_back({"a", {2}, {0, 1}, {1.0, 2.0}});  // 22 bytes vs 8 dense
  EXPECT_EQ(ledger.record_upload(0, 0, cheap), 14);
  EXPECT_EQ(ledger.record_upload(0, 1, costly), 22);
  ledger.record_download(0, 0, 400);
  ledger.record_download(0, 1, 8);
  ledger.record_upload(1, 0, cheap);
  EXPECT_EQ(ledger.total_upload(), 50);
  EXPECT_EQ(ledger.total_download(), 408);
  EXPECT_EQ(ledger.round_upload(0), 36);
  EXPECT_EQ(ledger.total_upload_entries(), 4);
  EXPECT_EQ(ledger.flags().size(), 1u);
  EXPECT_EQ(ledger.to_csv(), "round,user,upload_bytes,download_bytes\n0,0,14,400\n0,1,22,8\n1,0,14,0\n");
}

}  // namespace
}  // namespace dgpsim
