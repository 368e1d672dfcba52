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

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgpsim/defense.hpp"
#include "dgpsim/metrics.hpp"
#include "dgpsim/model.hpp"
#include "dgpsim/sim.hpp"

namespace dgpsim {

enum class CheckStatus { kPass, kFail, kFlagged, kSkipped, kInvalidPremise, kFlat };

std::string to_string(CheckStatus status);

/// Outcome of one executable check. `measured` is the worst observed value
/// and `bound` the value it is compared against.
struct BoundReport {
  std::string claim_id;
  double measured = 0.0;
  double bound = 0.0;
  CheckStatus status = CheckStatus::kSkipped;
  std::map<std::string, double> inputs;
  std::vector<std::string> notes;

  bool satisfied() const { return status == CheckStatus::kPass; }
  nlohmann::json to_json() const;
};

// Lower edge of the pruning-ratio band for DGP(k1, k2).
double pruning_ratio_floor(const DgpConfig& cfg);

// ||grads - DGP(grads)||^2 / ||grads||^2; NaN when the gradient is zero.
double pruning_ratio(const GradientSet& grads, const DgpConfig& cfg);

/// Every non-degenerate sample must fall strictly inside the band; the
/// maximum ratio is reported as the empirical constant.
BoundReport check_assumption1(const std::vector<GradientSet>& samples, const DgpConfig& cfg);

double ef_residual_bound(double gamma, double grad_sq_bound);

/// Residual-norm bound at every round, with the constant and gradient bound
/// taken as the maxima observed over the whole run.
BoundReport check_lemma1(const std::vector<RoundRecord>& records);

// Degraded passive-attack accuracy once uploads are pruned.
double degraded_epsilon(double epsilon, double gamma, double grad_norm, DistanceMetric metric);

// ||DGP(g) - g|| <= sqrt(gamma) ||g|| on the samples gamma was estimated from.
BoundReport check_theorem1(const std::vector<GradientSet>& samples, const DgpConfig& cfg);

/// Data-distance lower bound from the gradient distance and the spectral norm
/// of the input Jacobian of the gradient map (power iteration, matrix-free).
/// Soft check: exceeding the true distance by more than 20% is flagged.
BoundReport check_prop1(const MlpModel& model, const VectorXd& x, const VectorXd& x_prime, int label,
                        int power_iterations = 20, double slack = 0.2);

double input_jacobian_norm(const MlpModel& model, const VectorXd& x, int label, int power_iterations = 20);

struct ConvergenceInputs {
  double loss_gap = 1.0;  // l(W_0) - l*
  double lr = 0.01;
  int rounds = 100;
  double smoothness = 1.0;
  double grad_sq = 1.0;
  double noise_sq = 1.0;
  double gamma = 0.5;
};

double convergence_bound(const ConvergenceInputs& in);

// Step size minimizing the leading terms of the convergence bound.
double convergence_step_size(double loss_gap, double smoothness, int rounds, double grad_sq, double noise_sq);

struct TrendFit {
  double scale = 0.0;   // c in c / sqrt(T) + d
  double offset = 0.0;  // d
};

// Least-squares fit of values[T-1] ~ c / sqrt(T) + d.
TrendFit fit_inverse_sqrt(const std::vector<double>& values);

// Running averages of the recorded full-gradient norms.
std::vector<double> running_average_grad_sq(const std::vector<RoundRecord>& records);

/// (a) decreasing trend of the running average in both runs and (b) the
/// pruned run ends within `ratio_limit` of the plain run.
BoundReport check_convergence(const std::vector<RoundRecord>& pruned, const std::vector<RoundRecord>& plain,
                              double ratio_limit = 2.0);

// claim_id,measured,bound,pass
std::string verify_csv(const std::vector<BoundReport>& reports);

}  // namespace dgpsim
