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

#include "dgpsim/sim.hpp"
#include "support.hpp"

namespace dgpsim {
namespace {

RunConfig small_config() {
  RunConfig cfg;
  cfg.users = 4;
  cfg.rounds = 12;
  cfg.batch_size = 8;
  cfg.hidden = {16};
  cfg.eval_every = 4;
  return cfg;
}

std::vector<int> class_counts(const Dataset& d) {
  std::vector<int> c(static_cast<std::size_t>(d.num_classes), 0);
  for (int y : d.labels) ++c[static_cast<std::size_t>(y)];
  return c;
}

TEST(Dataset, GlyphsAreBalancedBoundedAndReplayable) {
  Rng a(1, streams::kData);
  Rng b(1, streams::kData);
  const auto split = make_dataset(DatasetKind::kGlyphs, a);
  EXPECT_EQ(split.train, make_dataset(DatasetKind::kGlyphs, b).train);
  EXPECT_EQ(split.train.size(), 2000);
  EXPECT_EQ(split.test.size(), 500);
  EXPECT_EQ(split.train.dim(), 64);
  EXPECT_EQ(class_counts(split.train), (std::vector<int>{500, 500, 500, 500}));
  EXPECT_EQ(class_counts(split.test), (std::vector<int>{125, 125, 125, 125}));
  EXPECT_GE(split.train.inputs.minCoeff(), 0.0);
  EXPECT_LE(split.train.inputs.maxCoeff(), 1.0);
}

TEST(Dataset, BlobCentresAreFiveApart) {
  Rng rng(2, streams::kData);
  const auto split = make_dataset(DatasetKind::kBlobs, rng);
  EXPECT_EQ(split.train.dim(), 16);
  std::vector<VectorXd> centres(4, VectorXd::Zero(16));
  const auto counts = class_counts(split.train);
  for (Index i = 0; i < split.train.size(); ++i) {
    const auto y = static_cast<std::size_t>(split.train.labels[static_cast<std::size_t>(i)]);
    centres[y] += split.train.inputs.row(i).transpose() / counts[y];
  }
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) EXPECT_NEAR((centres[a] - centres[b]).norm(), 5.0, 0.5);
  }
  EXPECT_THROW(parse_dataset_kind("mnist"), std::invalid_argument);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  RunConfig cfg = small_config();
  cfg.defense.kind = "dgp";
  cfg.lr_milestones = {5, 9};
  const auto back = RunConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  auto j = cfg.to_json();
  j["typo"] = 1;
  EXPECT_THROW(RunConfig::from_json(j), std::invalid_argument);
  j = cfg.to_json();
  j["defense"]["k1"] = 0.6;
  j["defense"]["k2"] = 0.6;
  EXPECT_THROW(RunConfig::from_json(j), std::invalid_argument);
}

TEST(Config, OverridesUseDottedKeys) {
  const auto cfg = apply_overrides(small_config(), {{"defense.kind", "topk"}, {"defense.k", "0.3"}, {"rounds", "7"}});
  EXPECT_EQ(cfg.defense.kind, "topk");
  EXPECT_DOUBLE_EQ(cfg.defense.k, 0.3);
  EXPECT_EQ(cfg.rounds, 7);
  EXPECT_THROW(apply_overrides(small_config(), {{"users", "0"}}), std::invalid_argument);
  EXPECT_THROW(apply_overrides(small_config(), {{"defense.kind", "magic"}}), std::invalid_argument);
}

TEST(Config, AdgpPreconditions) {
  DefenseConfig d{"adgp"};
  d.k = 0.2;
  EXPECT_NO_THROW(d.validate());
  d.k1 = 0.3;
  EXPECT_THROW(d.validate(), std::invalid_argument);
  d.k1 = 0.05;
  d.k = 0.6;
  EXPECT_THROW(d.validate(), std::invalid_argument);
}

TEST(Config, StepSchedule) {
  RunConfig cfg;
  cfg.lr = 1.0;
  cfg.lr_milestones = {10, 20};
  cfg.lr_gamma = 0.5;
  EXPECT_DOUBLE_EQ(cfg.lr_at(9), 1.0);
  EXPECT_DOUBLE_EQ(cfg.lr_at(10), 0.5);
  EXPECT_DOUBLE_EQ(cfg.lr_at(25), 0.25);
}

TEST(Train, DeterministicForEqualSeeds) {
  const auto cfg = small_config();
  const auto a = train(cfg);
  const auto b = train(cfg);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].to_json(), b.records[i].to_json());
  EXPECT_EQ(a.final_model, b.final_model);
  RunConfig other = cfg;
  other.seed = 2;
  EXPECT_FALSE(train(other).final_model == a.final_model);
}

TEST(Train, ZeroPruningMatchesPlainSgdBitwise) {
  RunConfig plain = small_config();
  RunConfig pruned = plain;
  pruned.defense.kind = "dgp";
  pruned.defense.k1 = 0.0;
  pruned.defense.k2 = 0.0;
  const auto a = train(plain);
  const auto b = train(pruned);
  EXPECT_EQ(a.final_model, b.final_model);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].train_loss, b.records[i].train_loss);
    EXPECT_EQ(a.records[i].test_accuracy, b.records[i].test_accuracy);
  }
}

TEST(Train, RecordsAndLedgerAgree) {
  RunConfig cfg = small_config();
  cfg.defense.kind = "dgp";
  const auto r = train(cfg);
  ASSERT_EQ(r.records.size(), 12u);
  std::int64_t up = 0;
  for (const auto& rec : r.records) {
    up += rec.upload_bytes;
    EXPECT_EQ(rec.test_accuracy.has_value(), (rec.round + 1) % 4 == 0);
    EXPECT_LE(*rec.aggregation_residual, 1e-12);
  }
  EXPECT_EQ(up, r.ledger.total_upload());
  EXPECT_EQ(r.ledger.total_download(), 12 * 4 * dense_bytes(r.final_model.param_count()));
}

TEST(Train, ErrorFeedbackIdentityHolds) {
  RunConfig cfg = small_config();
  cfg.defense.kind = "dgp";
  cfg.track_ef_identity = true;
  for (const auto& rec : train(cfg).records) EXPECT_LE(*rec.ef_identity_residual, 1e-12);
}

TEST(Train, AdgpDownloadsOnlyTheLocationSet) {
  RunConfig cfg = small_config();
  cfg.defense.kind = "adgp";
  cfg.defense.k = 0.2;
  const auto r = train(cfg);
  RunConfig dgp = cfg;
  dgp.defense.kind = "dgp";
  EXPECT_LT(r.ledger.total_download(), train(dgp).ledger.total_download());
}

TEST(Train, DivergenceIsReported) {
  RunConfig cfg = small_config();
  cfg.lr = 1e300;
  const auto r = train(cfg);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.records.back().diagnostic.empty());
}

TEST(Train, HooksSeeEveryUpload) {
  RunConfig cfg = small_config();
  cfg.rounds = 3;
  int uploads = 0;
  RunHooks hooks;
  hooks.on_upload = [&uploads](const UploadEvent&) { ++uploads; };
  train(cfg, hooks);
  EXPECT_EQ(uploads, 12);
}

TEST(Snapshot, ReplaysTheRecordedUpload) {
  RunConfig cfg = small_config();
  cfg.defense.kind = "dgp";
  std::optional<GradientSet> seen;
  RunHooks hooks;
  hooks.on_upload = [&seen](const UploadEvent& ev) {
    if (ev.round == 5 && ev.user == 2) seen = densify(ev.wire);
  };
  train(cfg, hooks);
  const auto snap = snapshot_gradients(cfg, 5, 2);
  ASSERT_TRUE(seen.has_value());
  EXPECT_EQ(densify(snap.wire), *seen);
  EXPECT_EQ(snap.observation.batch_size, 8);
  EXPECT_THROW(snapshot_gradients(cfg, 12, 0), std::out_of_range);
  EXPECT_THROW(snapshot_gradients(cfg, 0, 4), std::out_of_range);
}

TEST(Imprint, DatasetSpecQuantilesIncrease) {
  Rng rng(3, streams::kData);
  const auto split = make_dataset(DatasetKind::kGlyphs, rng);
  const auto spec = dataset_imprint_spec(split.train, 6);
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(spec.rows(), 6u);
  RunConfig cfg = small_config();
  cfg.imprint_bins = 6;
  EXPECT_EQ(initial_model(cfg, split.train).depth(), 3u);
  cfg.dataset = DatasetKind::kBlobs;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Trials, ImprintTrialUndefendedIsExact) {
  Rng data_rng(4, streams::kData);
  const auto split = make_dataset(DatasetKind::kGlyphs, data_rng);
  Rng rng(4, 99);
  const auto report = imprint_trial(split.test, {16}, NoDefense{}, 5, rng);
  ASSERT_TRUE(report.success);
  EXPECT_GE(report.mean_ssim(), 0.99);
}

TEST(Sweep, HigherTopShareWeakensOptAttack) {
  RunConfig base;
  base.rounds = 30;
  base.defense.kind = "dgp";
  OptAttackConfig opt;
  opt.distance = DistanceMetric::kCosine;
  opt.iterations = 1000;
  const auto rows = param_sweep(base, "p", {1.0 / 15.0, 1.0 / 7.0, 1.0 / 3.0}, "opt-cos", 10, 1.0 / 15.0, 0.8, opt);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_GE(rows[0].ssim, rows[1].ssim);
  EXPECT_GE(rows[1].ssim, rows[2].ssim);
  EXPECT_THROW(param_sweep(base, "q", {0.1}, "opt-cos", 1), std::invalid_argument);
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 0.9486832980505138, 1e-12);
  EXPECT_THROW(spearman({1}, {1}), std::invalid_argument);
}

}  // namespace
}  // namespace dgpsim
