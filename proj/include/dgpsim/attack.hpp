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
#include <optional>
#include <string>
#include <vector>

#include "dgpsim/defense.hpp"
#include "dgpsim/metrics.hpp"
#include "dgpsim/model.hpp"

namespace dgpsim {

/// What the attacker sees: the shared model and one user's upload.
/// `present` marks the locations the upload actually carried; pruned
/// locations are excluded from every attack objective.
struct GradObservation {
  MlpModel model;
  GradientSet observed;
  std::vector<std::vector<bool>> present;
  std::string snapshot_id;
  Index batch_size = 1;

  static GradObservation full(const MlpModel& model, const GradientSet& grads, std::string snapshot_id = {});
  static GradObservation from_wire(const MlpModel& model, const SparseGradient& wire, std::string snapshot_id = {});

  Index num_classes() const { return model.num_classes(); }
  VectorXd mask_vector() const;
  void validate() const;
};

struct AttackReport {
  std::string attack;
  bool success = false;
  std::string failure_reason;
  std::vector<VectorXd> recovered;
  std::vector<int> labels;       // inferred or optimized; -1 when undecidable
  std::vector<int> true_labels;  // filled when scored
  // Gradient distance between the candidate's gradient and the observation,
  // over observed locations only.
  double obs_distance_euclidean = std::numeric_limits<double>::quiet_NaN();
  double obs_distance_cosine = std::numeric_limits<double>::quiet_NaN();
  // Distance to the true, undefended gradient (scoring only).
  double true_distance_euclidean = std::numeric_limits<double>::quiet_NaN();
  double true_distance_cosine = std::numeric_limits<double>::quiet_NaN();
  std::vector<QualityScores> quality;  // one per ground-truth sample
  int iterations = 0;
  double wall_seconds = 0.0;

  double mean_mse() const;
  double mean_ssim() const;
  // Wall time is left out unless asked for, so reports replay byte-identically.
  std::string to_json(bool include_timing = false) const;
};

/// Label of a single-sample observation from the sign pattern of the output
/// layer; nullopt when the observation carries no usable output-layer entry.
std::optional<int> infer_label(const GradObservation& obs);

AttackReport bias_attack(const GradObservation& obs, double tol = 1e-12);

enum class GradProvider { kFiniteDiff, kDoubleBackprop };
enum class AttackInit { kZeros, kGaussian, kGiven };

struct OptAttackConfig {
  DistanceMetric distance = DistanceMetric::kEuclidean;
  int iterations = 2000;
  double lr = 0.1;
  AttackInit init = AttackInit::kGaussian;
  GradProvider grad_provider = GradProvider::kDoubleBackprop;
  int restarts = 3;
  std::uint64_t seed = 0;
  bool lr_decay = true;           // x0.1 at 3/8, 5/8 and 7/8 of the budget
  VectorXd init_point;            // used with AttackInit::kGiven
  double finite_diff_step = 1e-4;

  void validate() const;
};

// Gradient-matching objective for candidate input x and label targets t
// (a probability row). Euclidean uses the squared distance.
double attack_loss(const MlpModel& model, const VectorXd& x, const VectorXd& targets, const GradObservation& obs,
                   DistanceMetric distance);

// d(attack_loss)/dx. Finite differences are central with step h per input
// dimension; double backprop differentiates through the analytic backward
// pass and is exact (ReLU masks held fixed).
VectorXd attack_grad(GradProvider provider, const MlpModel& model, const VectorXd& x, const VectorXd& targets,
                     const GradObservation& obs, DistanceMetric distance, double h = 1e-4);

// Exact d(attack_loss)/d(targets); used when the label is optimized jointly.
VectorXd attack_grad_targets(const MlpModel& model, const VectorXd& x, const VectorXd& targets,
                             const GradObservation& obs, DistanceMetric distance);

/// Optimizes a dummy input (B = 1) with Adam to match the observation.
/// `truth`, when given, is used only to score the result.
AttackReport opt_attack(const GradObservation& obs, const OptAttackConfig& cfg, const Batch* truth = nullptr);

/// Recovers one input per imprint bin from adjacent-row differences of the
/// imprint layer (rows 0..R-1 of the first layer).
AttackReport imprint_attack(const GradObservation& obs, const ImprintSpec& spec, const Batch* truth = nullptr,
                            double tol = 1e-12);

// Fills quality/true_labels: every truth sample is matched with the recovered
// candidate of highest SSIM; with no candidates it is scored against zeros.
void score_report(AttackReport& report, const Batch& truth, double dynamic_range = 1.0);

}  // namespace dgpsim
