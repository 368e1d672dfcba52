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

#include "dgpsim/attack.hpp"

#include <chrono>
#include <json.hpp>

namespace dgpsim {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

nlohmann::json number_or_string(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

AttackReport failure(std::string attack, std::string reason) {
  AttackReport r;
  r.attack = std::move(attack);
  r.success = false;
  r.failure_reason = std::move(reason);
  return r;
}

// Objective value and its derivative with respect to the flattened candidate
// gradient.
struct ObjectiveValue {
  double loss = 0.0;
  VectorXd dgrad;
};

ObjectiveValue match_objective(const VectorXd& g, const VectorXd& observed, const VectorXd& mask,
                               DistanceMetric distance) {
  ObjectiveValue out;
  if (distance == DistanceMetric::kEuclidean) {
    const VectorXd r = (g - observed).cwiseProduct(mask);
    out.loss = r.squaredNorm();
    out.dgrad = 2.0 * r;
    return out;
  }
  const VectorXd gm = g.cwiseProduct(mask);
  const VectorXd om = observed.cwiseProduct(mask);
  const double ng = gm.norm();
  const double no = om.norm();
  if (ng == 0.0 || no == 0.0) {
    out.loss = 1.0;
    out.dgrad = VectorXd::Zero(g.size());
    return out;
  }
  const double c = gm.dot(om) / (ng * no);
  out.loss = 1.0 - c;
  out.dgrad = -(om / (ng * no) - (c / (ng * ng)) * gm);
  return out;
}

struct Evaluation {
  double loss = 0.0;
  VectorXd dx;
  VectorXd dtargets;
};

// Reverse sweep through the backward pass of a single-sample backprop. `adj`
// holds d(objective)/d(gradient) shaped like the parameter set.
Evaluation differentiate_through_backward(const MlpModel& model, const BackpropTrace<double>& tr,
                                          const GradientSet& adj) {
  const auto& layers = model.layers();
  const std::size_t depth = layers.size();
  auto act = [&](std::size_t l) -> VectorXd { return tr.activations[l].row(0).transpose(); };
  auto delta = [&](std::size_t l) -> VectorXd { return tr.deltas[l].row(0).transpose(); };
  auto relu_mask = [&](std::size_t l) -> VectorXd {
    return (tr.pre[l].row(0).transpose().array() > 0.0).cast<double>().matrix();
  };

  std::vector<VectorXd> d_delta(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    const auto gw = adj.tensors[2 * l].matrix();
    const auto& gb = adj.tensors[2 * l + 1].data();
    d_delta[l] = gw * act(l) + gb;
    if (l > 0) d_delta[l] += layers[l].weight * relu_mask(l - 1).cwiseProduct(d_delta[l - 1]);
  }

  Evaluation out;
  const VectorXd p = tr.probs.row(0).transpose();
  const VectorXd& v = d_delta[depth - 1];
  VectorXd d_pre = p.cwiseProduct(v.array().matrix() - VectorXd::Constant(v.size(), p.dot(v)));
  out.dtargets = -v;
  for (std::size_t l = depth; l-- > 0;) {
    const VectorXd d_act = layers[l].weight.transpose() * d_pre + adj.tensors[2 * l].matrix().transpose() * delta(l);
    if (l > 0) {
      d_pre = relu_mask(l - 1).cwiseProduct(d_act);
    } else {
      out.dx = d_act;
    }
  }
  return out;
}

class MatchingProblem {
 public:
  MatchingProblem(const GradObservation& obs, DistanceMetric distance)
      : obs_(obs), observed_(obs.observed.flatten()), mask_(obs.mask_vector()), distance_(distance) {}

  double loss(const VectorXd& x, const VectorXd& targets) const {
    const auto tr = backprop(obs_.model, row(x), row(targets));
    return match_objective(gradients_from_trace(obs_.model, tr).flatten(), observed_, mask_, distance_).loss;
  }

  Evaluation evaluate(const VectorXd& x, const VectorXd& targets) const {
    const auto tr = backprop(obs_.model, row(x), row(targets));
    const auto grads = gradients_from_trace(obs_.model, tr);
    const auto obj = match_objective(grads.flatten(), observed_, mask_, distance_);
    Evaluation ev = differentiate_through_backward(obs_.model, tr, grads.unflatten(obj.dgrad));
    ev.loss = obj.loss;
    return ev;
  }

  VectorXd finite_diff(const VectorXd& x, const VectorXd& targets, double h) const {
    VectorXd g(x.size());
    VectorXd probe = x;
    for (Index i = 0; i < x.size(); ++i) {
      probe[i] = x[i] + h;
      const double up = loss(probe, targets);
      probe[i] = x[i] - h;
      const double down = loss(probe, targets);
      probe[i] = x[i];
      g[i] = (up - down) / (2.0 * h);
    }
    return g;
  }

  // Distances over observed locations, reported as plain (unsquared) values.
  std::pair<double, double> distances(const VectorXd& x, const VectorXd& targets) const {
    const auto tr = backprop(obs_.model, row(x), row(targets));
    const VectorXd g = gradients_from_trace(obs_.model, tr).flatten().cwiseProduct(mask_);
    const VectorXd o = observed_.cwiseProduct(mask_);
    return {vector_distance(g, o, DistanceMetric::kEuclidean), vector_distance(g, o, DistanceMetric::kCosine)};
  }

 private:
  static MatrixXd row(const VectorXd& v) { return v.transpose(); }

  const GradObservation& obs_;
  VectorXd observed_;
  VectorXd mask_;
  DistanceMetric distance_;
};

VectorXd softmax(const VectorXd& z) { return softmax_rows<double>(z.transpose()).row(0).transpose(); }

VectorXd softmax_vjp(const VectorXd& q, const VectorXd& upstream) {
  return q.cwiseProduct(upstream - VectorXd::Constant(q.size(), q.dot(upstream)));
}

int argmax(const VectorXd& v) {
  Index i = 0;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

void add_true_distances(AttackReport& report, const MlpModel& model, const Batch& truth, const VectorXd& targets) {
  const auto true_grads = loss_and_grad(model, truth).grads;
  const auto tr = backprop(model, MatrixXd(report.recovered.front().transpose()), MatrixXd(targets.transpose()));
  const auto cand = gradients_from_trace(model, tr);
  report.true_distance_euclidean = grad_distance(true_grads, cand, DistanceMetric::kEuclidean);
  report.true_distance_cosine = grad_distance(true_grads, cand, DistanceMetric::kCosine);
}

}  // namespace

GradObservation GradObservation::full(const MlpModel& model, const GradientSet& grads, std::string snapshot_id) {
  GradObservation obs;
  obs.model = model;
  obs.observed = grads;
  for (const auto& t : grads.tensors) obs.present.emplace_back(static_cast<std::size_t>(t.size()), true);
  obs.snapshot_id = std::move(snapshot_id);
  obs.validate();
  return obs;
}

GradObservation GradObservation::from_wire(const MlpModel& model, const SparseGradient& wire,
                                           std::string snapshot_id) {
  GradObservation obs;
  obs.model = model;
  obs.observed = densify(wire);
  for (const auto& st : wire.tensors) {
    std::vector<bool> m(static_cast<std::size_t>(st.dense_size()), wire.dense);
    for (auto idx : st.indices) m[idx] = true;
    obs.present.push_back(std::move(m));
  }
  obs.snapshot_id = std::move(snapshot_id);
  obs.validate();
  return obs;
}

VectorXd GradObservation::mask_vector() const {
  VectorXd m(observed.total_size());
  Index off = 0;
  for (const auto& p : present) {
    for (bool b : p) m[off++] = b ? 1.0 : 0.0;
  }
  return m;
}

void GradObservation::validate() const {
  const auto params = model.parameters();
  if (!params.same_structure(observed)) throw std::invalid_argument("observation does not match the model");
  if (present.size() != observed.count()) throw std::invalid_argument("observation mask count mismatch");
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (static_cast<Index>(present[i].size()) != observed.tensors[i].size()) {
      throw std::invalid_argument("observation mask size mismatch for " + observed.ids[i]);
    }
  }
}

double AttackReport::mean_mse() const {
  if (quality.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& q : quality) s += q.mse;
  return s / static_cast<double>(quality.size());
}

double AttackReport::mean_ssim() const {
  if (quality.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& q : quality) s += q.ssim;
  return s / static_cast<double>(quality.size());
}

std::string AttackReport::to_json(bool include_timing) const {
  nlohmann::json j;
  j["attack"] = attack;
  j["success"] = success;
  if (!failure_reason.empty()) j["failure_reason"] = failure_reason;
  j["labels"] = labels;
  j["true_labels"] = true_labels;
  j["obs_distance_euclidean"] = number_or_string(obs_distance_euclidean);
  j["obs_distance_cosine"] = number_or_string(obs_distance_cosine);
  j["true_distance_euclidean"] = number_or_string(true_distance_euclidean);
  j["true_distance_cosine"] = number_or_string(true_distance_cosine);
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& q : quality) {
    samples.push_back({{"mse", number_or_string(q.mse)}, {"psnr", number_or_string(q.psnr)}, {"ssim", number_or_string(q.ssim)}});
  }
  j["samples"] = samples;
  j["mean_mse"] = number_or_string(mean_mse());
  j["mean_ssim"] = number_or_string(mean_ssim());
  nlohmann::json rec = nlohmann::json::array();
  for (const auto& x : recovered) rec.push_back(std::vector<double>(x.data(), x.data() + x.size()));
  j["recovered"] = rec;
  j["iterations"] = iterations;
  if (include_timing) j["wall_seconds"] = wall_seconds;
  return j.dump();
}

std::optional<int> infer_label(const GradObservation& obs) {
  obs.validate();
  const std::size_t last = obs.model.depth() - 1;
  const auto& gb = obs.observed.tensors[2 * last + 1].data();
  const auto& bias_present = obs.present[2 * last + 1];
  int best = -1;
  double most_negative = 0.0;
  for (Index i = 0; i < gb.size(); ++i) {
    if (bias_present[static_cast<std::size_t>(i)] && gb[i] < most_negative) {
      most_negative = gb[i];
      best = static_cast<int>(i);
    }
  }
  if (best >= 0) return best;

  // Bias entries pruned away: the true row of the output weight gradient is
  // the only one with non-positive entries (features are post-ReLU).
  const auto gw = obs.observed.tensors[2 * last].matrix();
  const auto& w_present = obs.present[2 * last];
  for (Index r = 0; r < gw.rows(); ++r) {
    double sum = 0.0;
    for (Index c = 0; c < gw.cols(); ++c) {
      if (w_present[static_cast<std::size_t>(r * gw.cols() + c)]) sum += gw(r, c);
    }
    if (sum < most_negative) {
      most_negative = sum;
      best = static_cast<int>(r);
    }
  }
  if (best >= 0) return best;
  return std::nullopt;
}

AttackReport bias_attack(const GradObservation& obs, double tol) {
  obs.validate();
  const auto start = Clock::now();
  const auto gw = obs.observed.tensors[0].matrix();
  const auto& gb = obs.observed.tensors[1].data();
  Index row = -1;
  double largest = tol;
  for (Index j = 0; j < gb.size(); ++j) {
    if (obs.present[1][static_cast<std::size_t>(j)] && std::abs(gb[j]) > largest) {
      largest = std::abs(gb[j]);
      row = j;
    }
  }
  if (row < 0) return failure("bias", "no first-layer bias gradient above tolerance");
  AttackReport r;
  r.attack = "bias";
  r.success = true;
  r.recovered.push_back(gw.row(row).transpose() / gb[row]);
  if (const auto y = infer_label(obs)) r.labels.push_back(*y);
  r.wall_seconds = seconds_since(start);
  return r;
}

void OptAttackConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("attack iterations must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("attack learning rate must be positive");
  if (restarts < 1) throw std::invalid_argument("attack restarts must be >= 1");
  if (!(finite_diff_step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
}

double attack_loss(const MlpModel& model, const VectorXd& x, const VectorXd& targets, const GradObservation& obs,
                   DistanceMetric distance) {
  if (!(model == obs.model)) throw std::invalid_argument("attack_loss: model differs from observation");
  return MatchingProblem(obs, distance).loss(x, targets);
}

VectorXd attack_grad(GradProvider provider, const MlpModel& model, const VectorXd& x, const VectorXd& targets,
                     const GradObservation& obs, DistanceMetric distance, double h) {
  if (!(model == obs.model)) throw std::invalid_argument("attack_grad: model differs from observation");
  const MatchingProblem problem(obs, distance);
  if (provider == GradProvider::kFiniteDiff) return problem.finite_diff(x, targets, h);
  return problem.evaluate(x, targets).dx;
}

VectorXd attack_grad_targets(const MlpModel& model, const VectorXd& x, const VectorXd& targets,
                             const GradObservation& obs, DistanceMetric distance) {
  if (!(model == obs.model)) throw std::invalid_argument("attack_grad_targets: model differs from observation");
  return MatchingProblem(obs, distance).evaluate(x, targets).dtargets;
}

AttackReport opt_attack(const GradObservation& obs, const OptAttackConfig& cfg, const Batch* truth) {
  cfg.validate();
  obs.validate();
  const std::string name = cfg.distance == DistanceMetric::kEuclidean ? "opt-euclid" : "opt-cos";
  if (obs.batch_size != 1) return failure(name, "optimization attack expects a single-sample observation");
  const auto start = Clock::now();
  const Index d = obs.model.input_dim();
  const Index classes = obs.model.num_classes();
  if (cfg.init == AttackInit::kGiven && cfg.init_point.size() != d) {
    throw std::invalid_argument("attack init point has wrong dimension");
  }

  const MatchingProblem problem(obs, cfg.distance);
  const std::optional<int> label = infer_label(obs);
  const bool joint = !label.has_value();
  Rng rng(cfg.seed, streams::kAttackInit);

  double best_loss = std::numeric_limits<double>::infinity();
  VectorXd best_x;
  VectorXd best_targets;
  int iterations = 0;

  for (int restart = 0; restart < cfg.restarts; ++restart) {
    VectorXd x = cfg.init == AttackInit::kZeros  ? VectorXd::Zero(d)
                 : cfg.init == AttackInit::kGiven ? cfg.init_point
                                                  : gaussian(rng, {d}, 0.5, 0.5).data();
    VectorXd z = joint ? gaussian(rng, {classes}, 0.0, 1.0).data() : VectorXd();
    const Index n = joint ? d + classes : d;
    AdamState adam = AdamState::zeros(n);

    for (int it = 0; it < cfg.iterations; ++it, ++iterations) {
      const VectorXd targets = joint ? softmax(z) : VectorXd(one_hot(std::vector<int>{*label}, classes).row(0).transpose());
      Evaluation ev = problem.evaluate(x, targets);
      if (!std::isfinite(ev.loss) || !ev.dx.allFinite()) break;
      if (ev.loss < best_loss) {
        best_loss = ev.loss;
        best_x = x;
        best_targets = targets;
      }
      if (cfg.grad_provider == GradProvider::kFiniteDiff) ev.dx = problem.finite_diff(x, targets, cfg.finite_diff_step);

      double lr = cfg.lr;
      if (cfg.lr_decay) {
        const double frac = static_cast<double>(it) / cfg.iterations;
        if (frac >= 3.0 / 8.0) lr *= 0.1;
        if (frac >= 5.0 / 8.0) lr *= 0.1;
        if (frac >= 7.0 / 8.0) lr *= 0.1;
      }
      VectorXd grad(n);
      grad.head(d) = ev.dx;
      if (joint) grad.tail(classes) = softmax_vjp(targets, ev.dtargets);
      const VectorXd step = adam_step(adam, grad, lr);
      x -= step.head(d);
      if (joint) z -= step.tail(classes);
    }
  }

  if (!std::isfinite(best_loss)) return failure(name, "objective was non-finite in every restart");

  AttackReport r;
  r.attack = name;
  r.success = true;
  r.recovered.push_back(best_x);
  r.labels.push_back(joint ? argmax(best_targets) : *label);
  std::tie(r.obs_distance_euclidean, r.obs_distance_cosine) = problem.distances(best_x, best_targets);
  r.iterations = iterations;
  if (truth != nullptr) {
    score_report(r, *truth);
    add_true_distances(r, obs.model, *truth, best_targets);
  }
  r.wall_seconds = seconds_since(start);
  return r;
}

AttackReport imprint_attack(const GradObservation& obs, const ImprintSpec& spec, const Batch* truth, double tol) {
  spec.validate();
  obs.validate();
  const Index rows = static_cast<Index>(spec.rows());
  const auto gw = obs.observed.tensors[0].matrix();
  const auto& gb = obs.observed.tensors[1].data();
  if (gw.rows() < rows || gw.cols() != spec.measurement.size()) {
    return failure("imprint", "model has no imprint layer matching the spec");
  }
  for (Index k = 0; k < rows; ++k) {
    if (!obs.model.layers()[0].weight.row(k).isApprox(spec.measurement.transpose()) ||
        obs.model.layers()[0].bias[k] != -spec.thresholds[static_cast<std::size_t>(k)]) {
      return failure("imprint", "model has no imprint layer matching the spec");
    }
  }

  const auto start = Clock::now();
  AttackReport r;
  r.attack = "imprint";
  for (Index k = 0; k < rows; ++k) {
    const bool last = k + 1 == rows;
    const double den = last ? gb[k] : gb[k] - gb[k + 1];
    if (std::abs(den) <= tol) continue;
    const VectorXd num = last ? VectorXd(gw.row(k).transpose()) : VectorXd((gw.row(k) - gw.row(k + 1)).transpose());
    r.recovered.push_back(num / den);
  }
  r.success = !r.recovered.empty();
  if (!r.success) r.failure_reason = "no imprint bin with a denominator above tolerance";
  if (truth != nullptr) score_report(r, *truth);
  r.wall_seconds = seconds_since(start);
  return r;
}

void score_report(AttackReport& report, const Batch& truth, double dynamic_range) {
  report.quality.clear();
  report.true_labels = truth.labels;
  for (Index n = 0; n < truth.size(); ++n) {
    const auto img = as_image(truth.inputs.row(n).transpose());
    if (report.recovered.empty()) {
      report.quality.push_back(image_quality(img, as_image(VectorXd::Zero(truth.inputs.cols())), dynamic_range));
      continue;
    }
    QualityScores best;
    bool first = true;
    for (const auto& cand : report.recovered) {
      if (cand.size() != truth.inputs.cols()) throw std::invalid_argument("recovered sample has wrong dimension");
      const auto q = image_quality(img, as_image(cand), dynamic_range);
      if (first || q.ssim > best.ssim) {
        best = q;
        first = false;
      }
    }
    report.quality.push_back(best);
  }
}

}  // namespace dgpsim
