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

#include "dgpsim/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dgpsim/attack.hpp"

namespace dgpsim {

namespace {

VectorXd one_hot_vector(Index classes, int label) {
  VectorXd t = VectorXd::Zero(classes);
  t(label) = 1.0;
  return t;
}

VectorXd gradient_map(const MlpModel& model, const VectorXd& x, const VectorXd& targets) {
  const auto tr = backprop<double>(model, x.transpose(), targets.transpose());
  return gradients_from_trace(model, tr).flatten();
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::kPass: return "pass";
    case CheckStatus::kFail: return "fail";
    case CheckStatus::kFlagged: return "flagged";
    case CheckStatus::kSkipped: return "skipped";
    case CheckStatus::kInvalidPremise: return "invalid-premise";
    case CheckStatus::kFlat: return "flat";
  }
  return "unknown";
}

nlohmann::json BoundReport::to_json() const {
  nlohmann::json j = {{"claim_id", claim_id}, {"status", to_string(status)}, {"inputs", inputs}, {"notes", notes}};
  j["measured"] = std::isfinite(measured) ? nlohmann::json(measured) : nlohmann::json(nullptr);
  j["bound"] = std::isfinite(bound) ? nlohmann::json(bound) : nlohmann::json(nullptr);
  return j;
}

double pruning_ratio_floor(const DgpConfig& cfg) {
  cfg.validate();
  const double s = 1.0 - std::sqrt(1.0 - cfg.k1 * cfg.k2);
  return s * s;
}

double pruning_ratio(const GradientSet& grads, const DgpConfig& cfg) {
  const double total = squared_norm(grads);
  if (total == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return squared_norm(grads - densify(dgp_prune(grads, cfg))) / total;
}

BoundReport check_assumption1(const std::vector<GradientSet>& samples, const DgpConfig& cfg) {
  BoundReport r;
  r.claim_id = "pruning_ratio_band";
  r.bound = pruning_ratio_floor(cfg);
  r.inputs = {{"k1", cfg.k1}, {"k2", cfg.k2}};
  r.measured = 0.0;
  int checked = 0;
  int violations = 0;
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const double ratio = pruning_ratio(samples[s], cfg);
    if (std::isnan(ratio)) {
      r.notes.push_back("sample " + std::to_string(s) + " skipped: zero gradient");
      continue;
    }
    if (cfg.k1 == 0.0 && cfg.k2 == 0.0) {
      r.notes.push_back("sample " + std::to_string(s) + " skipped: no pruning");
      continue;
    }
    if (ratio >= 1.0 && squared_norm(densify(dgp_prune(samples[s], cfg))) == 0.0) {
      r.notes.push_back("sample " + std::to_string(s) + " skipped: empty retained band");
      continue;
    }
    ++checked;
    r.measured = std::max(r.measured, ratio);
    lowest = std::min(lowest, ratio);
    if (!(ratio > r.bound && ratio < 1.0)) ++violations;
  }
  r.inputs["checked"] = checked;
  r.inputs["violations"] = violations;
  r.inputs["min_ratio"] = checked > 0 ? lowest : 0.0;
  r.inputs["gamma"] = r.measured;
  if (checked == 0) {
    r.status = CheckStatus::kSkipped;
  } else {
    r.status = violations == 0 ? CheckStatus::kPass : CheckStatus::kFail;
  }
  return r;
}

double ef_residual_bound(double gamma, double grad_sq_bound) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("residual bound requires gamma in [0, 1)");
  return 3.0 * gamma * (2.0 + gamma) / (2.0 * (1.0 - gamma) * (1.0 - gamma)) * grad_sq_bound;
}

BoundReport check_lemma1(const std::vector<RoundRecord>& records) {
  BoundReport r;
  r.claim_id = "ef_residual_bound";
  if (records.empty()) {
    r.status = CheckStatus::kSkipped;
    r.notes.push_back("no rounds recorded");
    return r;
  }
  double gamma = 0.0;
  double grad_sq = 0.0;
  for (const auto& rec : records) {
    gamma = std::max(gamma, rec.prune_ratio_max);
    grad_sq = std::max(grad_sq, rec.grad_sq_max);
  }
  r.inputs = {{"gamma", gamma}, {"grad_sq", grad_sq}};
  if (gamma >= 1.0) {
    r.status = CheckStatus::kInvalidPremise;
    r.notes.push_back("observed pruning ratio reached 1");
    return r;
  }
  r.bound = ef_residual_bound(gamma, grad_sq);
  int violations = 0;
  for (const auto& rec : records) {
    r.measured = std::max(r.measured, rec.err_sq_mean);
    if (rec.err_sq_mean > r.bound) {
      ++violations;
      r.notes.push_back("round " + std::to_string(rec.round) + " exceeds bound");
    }
  }
  r.inputs["violations"] = violations;
  r.status = violations == 0 ? CheckStatus::kPass : CheckStatus::kFail;
  return r;
}

double degraded_epsilon(double epsilon, double gamma, double grad_norm, DistanceMetric metric) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (metric == DistanceMetric::kEuclidean) return epsilon + std::sqrt(gamma) * grad_norm;
  return epsilon + (1.0 - epsilon) * std::sqrt(gamma);
}

BoundReport check_theorem1(const std::vector<GradientSet>& samples, const DgpConfig& cfg) {
  BoundReport r;
  r.claim_id = "pruned_distance_bound";
  double gamma = 0.0;
  for (const auto& g : samples) {
    const double ratio = pruning_ratio(g, cfg);
    if (!std::isnan(ratio)) gamma = std::max(gamma, ratio);
  }
  r.inputs = {{"gamma", gamma}};
  int checked = 0;
  int violations = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& g : samples) {
    const double gn = norm(g);
    if (gn == 0.0) continue;
    ++checked;
    const double lhs = norm(densify(dgp_prune(g, cfg)) - g);
    const double rhs = std::sqrt(gamma) * gn;
    // Relative slack absorbs the rounding of sqrt(gamma) * ||g|| vs the norm itself.
    if (lhs > rhs * (1.0 + 1e-12)) ++violations;
    if (lhs - rhs > worst) {
      worst = lhs - rhs;
      r.measured = lhs;
      r.bound = rhs;
    }
  }
  r.inputs["checked"] = checked;
  r.inputs["violations"] = violations;
  r.status = checked == 0 ? CheckStatus::kSkipped : (violations == 0 ? CheckStatus::kPass : CheckStatus::kFail);
  return r;
}

double input_jacobian_norm(const MlpModel& model, const VectorXd& x, int label, int power_iterations) {
  const VectorXd targets = one_hot_vector(model.num_classes(), label);
  const VectorXd phi = gradient_map(model, x, targets);
  const GradientSet like = model.parameters();
  const double h = 1e-5 * std::max(1.0, x.norm());

  auto jv = [&](const VectorXd& v) -> VectorXd {
    return (gradient_map(model, x + h * v, targets) - gradient_map(model, x - h * v, targets)) / (2.0 * h);
  };
  // J^T u is the input gradient of ||phi(x) - (phi(x) - u / 2)||^2, which the
  // exact double-backprop provider differentiates.
  auto jtu = [&](const VectorXd& u) -> VectorXd {
    const auto obs = GradObservation::full(model, like.unflatten(phi - 0.5 * u));
    return attack_grad(GradProvider::kDoubleBackprop, model, x, targets, obs, DistanceMetric::kEuclidean);
  };

  VectorXd v = VectorXd::Ones(x.size()).normalized();
  double sigma = 0.0;
  for (int it = 0; it < power_iterations; ++it) {
    const VectorXd next = jtu(jv(v));
    const double n = next.norm();
    if (n == 0.0) return 0.0;
    v = next / n;
  }
  sigma = jv(v).norm();
  return sigma;
}

BoundReport check_prop1(const MlpModel& model, const VectorXd& x, const VectorXd& x_prime, int label,
                        int power_iterations, double slack) {
  BoundReport r;
  r.claim_id = "data_distance_lower_bound";
  const VectorXd targets = one_hot_vector(model.num_classes(), label);
  const double grad_gap = (gradient_map(model, x, targets) - gradient_map(model, x_prime, targets)).norm();
  const double data_gap = (x - x_prime).norm();
  const double jnorm = input_jacobian_norm(model, x, label, power_iterations);
  r.inputs = {{"jacobian_norm", jnorm}, {"gradient_distance", grad_gap}};
  r.measured = data_gap;
  if (jnorm == 0.0) {
    r.bound = std::numeric_limits<double>::quiet_NaN();
    r.status = CheckStatus::kInvalidPremise;
    r.notes.push_back("zero Jacobian norm: bound undefined");
    return r;
  }
  r.bound = grad_gap / jnorm;
  if (r.bound <= data_gap * (1.0 + slack)) {
    r.status = CheckStatus::kPass;
  } else {
    r.status = CheckStatus::kFlagged;
    r.notes.push_back("first-order bound exceeds the data distance beyond the allowed slack");
  }
  return r;
}

double convergence_bound(const ConvergenceInputs& in) {
  if (!(in.lr > 0.0) || in.rounds < 1) throw std::invalid_argument("bound needs lr > 0 and rounds >= 1");
  const double k = in.smoothness;
  const double eta = in.lr;
  return 4.0 * in.loss_gap / (eta * in.rounds) + 2.0 * k * eta * (in.grad_sq + in.noise_sq) +
         4.0 * eta * eta * k * k * ef_residual_bound(in.gamma, in.grad_sq);
}

double convergence_step_size(double loss_gap, double smoothness, int rounds, double grad_sq, double noise_sq) {
  const double den = smoothness * rounds * (grad_sq + noise_sq);
  if (!(den > 0.0) || !(loss_gap >= 0.0)) throw std::invalid_argument("step-size rule needs positive inputs");
  return std::sqrt(loss_gap / den);
}

TrendFit fit_inverse_sqrt(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("trend fit needs at least two points");
  const auto n = static_cast<Index>(values.size());
  MatrixXd a(n, 2);
  VectorXd b(n);
  for (Index i = 0; i < n; ++i) {
    a(i, 0) = 1.0 / std::sqrt(static_cast<double>(i + 1));
    a(i, 1) = 1.0;
    b(i) = values[static_cast<std::size_t>(i)];
  }
  const VectorXd sol = a.colPivHouseholderQr().solve(b);
  return {sol(0), sol(1)};
}

std::vector<double> running_average_grad_sq(const std::vector<RoundRecord>& records) {
  std::vector<double> out;
  double sum = 0.0;
  for (const auto& rec : records) {
    if (!rec.full_grad_sq) throw std::invalid_argument("run did not track the full gradient norm");
    sum += *rec.full_grad_sq;
    out.push_back(sum / static_cast<double>(out.size() + 1));
  }
  return out;
}

BoundReport check_convergence(const std::vector<RoundRecord>& pruned, const std::vector<RoundRecord>& plain,
                              double ratio_limit) {
  BoundReport r;
  r.claim_id = "convergence_trend";
  for (const auto* run : {&pruned, &plain}) {
    for (const auto& rec : *run) {
      if (!rec.diagnostic.empty()) {
        r.status = CheckStatus::kFail;
        r.notes.push_back("diverged: " + rec.diagnostic);
        return r;
      }
    }
  }
  if (pruned.size() < 2 || plain.size() < 2) {
    r.status = CheckStatus::kSkipped;
    r.notes.push_back("need at least two rounds per run");
    return r;
  }
  const auto avg_pruned = running_average_grad_sq(pruned);
  const auto avg_plain = running_average_grad_sq(plain);

  bool trends_ok = true;
  bool flat = false;
  for (const auto* avg : {&avg_pruned, &avg_plain}) {
    const auto fit = fit_inverse_sqrt(*avg);
    const double hi = *std::max_element(avg->begin(), avg->end());
    const double lo = *std::min_element(avg->begin(), avg->end());
    const bool is_pruned = avg == &avg_pruned;
    r.inputs[is_pruned ? "pruned_fit_scale" : "plain_fit_scale"] = fit.scale;
    r.inputs[is_pruned ? "pruned_fit_offset" : "plain_fit_offset"] = fit.offset;
    if (hi - lo <= 1e-12 * std::max(1.0, hi)) {
      flat = true;
      continue;
    }
    if (!(fit.scale > 0.0 && avg->back() < avg->front())) {
      trends_ok = false;
      r.notes.push_back(std::string(is_pruned ? "pruned" : "plain") + " run shows no decreasing trend");
    }
  }
  r.measured = avg_pruned.back();
  r.bound = ratio_limit * avg_plain.back();
  r.inputs["plain_final"] = avg_plain.back();
  if (flat) {
    r.status = CheckStatus::kFlat;
    r.notes.push_back("running average is constant");
    return r;
  }
  const bool ratio_ok = r.measured <= r.bound;
  if (!ratio_ok) r.notes.push_back("pruned run ends above the allowed multiple of the plain run");
  r.status = trends_ok && ratio_ok ? CheckStatus::kPass : CheckStatus::kFail;
  return r;
}

std::string verify_csv(const std::vector<BoundReport>& reports) {
  std::ostringstream os;
  os << "claim_id,measured,bound,pass\n";
  for (const auto& r : reports) {
    os << r.claim_id << ',' << format_double(r.measured) << ',' << format_double(r.bound) << ','
       << (r.satisfied() ? "true" : "false") << '\n';
  }
  return os.str();
}

}  // namespace dgpsim
