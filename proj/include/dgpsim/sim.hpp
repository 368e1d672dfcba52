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

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpsim/attack.hpp"
#include "dgpsim/defense.hpp"
#include "dgpsim/metrics.hpp"
#include "dgpsim/model.hpp"

namespace dgpsim {

enum class DatasetKind { kBlobs, kGlyphs };

struct Dataset {
  MatrixXd inputs;
  std::vector<int> labels;
  Index num_classes = 4;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }
  Batch subset(std::span<const std::size_t> rows) const;
  Batch all() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// blobs: 4 unit-variance Gaussian clusters in 16-d, centres 5 sigma apart.
// glyphs: 8x8 renderings of bar / cross / diag / ring with jitter and pixel
// noise, clipped to [0, 1]. Both are 2000 train / 500 test, class-balanced.
DatasetSplit make_dataset(DatasetKind kind, Rng& rng);
DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind kind);

inline constexpr Index kGlyphSide = 8;
inline constexpr Index kBlobDim = 16;

/// Upload defense selection as stored in a run config.
struct DefenseConfig {
  std::string kind = "none";  // none | topk | dgp | adgp | dp
  double k = 0.2;
  double k1 = 0.05;
  double k2 = 0.75;
  double std = 1e-2;

  void validate() const;
  bool is_adgp() const { return kind == "adgp"; }
  // Not valid for adgp, which is a multi-user protocol.
  Defense to_defense() const;
  std::string label() const;
};

struct RunConfig {
  DatasetKind dataset = DatasetKind::kGlyphs;
  int users = 10;
  int rounds = 300;
  int batch_size = 16;
  double lr = 0.1;
  std::vector<int> lr_milestones;  // lr *= lr_gamma at each listed round
  double lr_gamma = 0.1;
  std::vector<Index> hidden{32};
  DefenseConfig defense;
  bool error_feedback = true;
  std::uint64_t seed = 1;
  int eval_every = 10;
  bool track_full_grad = false;
  bool track_ef_identity = false;
  int imprint_bins = 0;  // > 0 inserts an attacker imprint layer at init

  void validate() const;
  double lr_at(int round) const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Applies "a.b=value"-style overrides (dotted keys into the JSON form).
// Values are parsed as JSON when possible and kept as strings otherwise.
RunConfig apply_overrides(const RunConfig& base, const std::vector<std::pair<std::string, std::string>>& overrides);

struct RoundRecord {
  int round = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double grad_sq_mean = 0.0;  // mean over users of ||grad_{t,i}||^2
  double grad_sq_max = 0.0;
  double err_sq_mean = 0.0;   // mean over users of ||e_{t+1,i}||^2
  double err_avg_sq = 0.0;    // ||mean_i e_{t+1,i}||^2
  double prune_ratio_max = 0.0;  // max_i ||P - g||^2 / ||P||^2
  std::optional<double> test_accuracy;
  std::optional<double> full_grad_sq;         // ||grad l(W_t)||^2 on the training set
  std::optional<double> ef_identity_residual;  // ||W - V - lr * mean e|| / ||W||
  std::optional<double> aggregation_residual;  // ||(W_t - W_{t+1}) - lr * mean g||
  std::int64_t upload_bytes = 0;
  std::int64_t download_bytes = 0;
  std::int64_t upload_entries = 0;
  std::string diagnostic;

  nlohmann::json to_json() const;
  static RoundRecord from_json(const nlohmann::json& j);
};

struct RunResult {
  std::vector<RoundRecord> records;
  MlpModel final_model;
  CommLedger ledger;
  bool diverged = false;
  double final_accuracy = 0.0;
  std::vector<std::string> warnings;
};

/// Everything a user uploads in one round, seen from the server side.
struct UploadEvent {
  int round = 0;
  int user = 0;
  const MlpModel& model;
  const Batch& batch;
  const GradientSet& raw_grad;
  const ErrorState& error_before;
  const SparseGradient& wire;
};

struct RunHooks {
  std::function<void(const RoundRecord&)> on_record;
  std::function<void(const UploadEvent&)> on_upload;
  int stop_after_round = -1;  // >= 0 ends the run once this round has uploaded
};

RunResult train(const RunConfig& cfg, const RunHooks& hooks = {});

// Initial server model for a config (imprint layer included when requested).
MlpModel initial_model(const RunConfig& cfg, const Dataset& train);
ImprintSpec dataset_imprint_spec(const Dataset& train, int bins);
double accuracy(const MlpModel& model, const Dataset& data);
GradientSet full_gradient(const MlpModel& model, const Dataset& data);

struct Snapshot {
  GradObservation observation;
  Batch batch;
  GradientSet raw_grad;
  SparseGradient wire;
};

/// Deterministically replays a run up to round t and returns user i's upload.
Snapshot snapshot_gradients(const RunConfig& cfg, int round, int user);

// Single-sample opt attack on a fresh model (round 0, no residual) with the
// given defense applied to the upload.
AttackReport opt_trial(const Dataset& data, const std::vector<Index>& hidden, const Defense& defense,
                       const OptAttackConfig& attack, Rng& rng);

// Imprint attack on `bins` samples chosen so that each lands in its own bin;
// thresholds sit at midpoints between their sorted brightness values.
AttackReport imprint_trial(const Dataset& data, const std::vector<Index>& hidden, const Defense& defense, int bins,
                           Rng& rng);

struct DistanceBin {
  double target = 0.0;
  bool empty = true;
  double achieved = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  int samples = 0;
};

/// For each target relative distance ||grad - g|| / ||grad||, picks the DGP
/// configuration (top-only removal included) whose achieved ratio is closest
/// and within +-0.05, then attacks the pruned observation.
std::vector<DistanceBin> distance_sweep(const RunConfig& cfg, const std::vector<double>& targets,
                                        const OptAttackConfig& attack, int samples);

struct SweepRow {
  double value = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
  double accuracy = 0.0;
};

// param = "sum_k" (p fixed) or "p" (sum_k fixed). attack = "imprint",
// "opt-euclid" or "opt-cos". A training run per value gives the accuracy.
std::vector<SweepRow> param_sweep(const RunConfig& base, const std::string& param, const std::vector<double>& values,
                                  const std::string& attack, int trials, double fixed_p = 1.0 / 15.0,
                                  double fixed_sum_k = 0.8, const OptAttackConfig& opt = {});

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dgpsim
