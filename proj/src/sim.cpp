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

#include "dgpsim/sim.hpp"

#include <algorithm>
#include <set>

namespace dgpsim {

namespace {

constexpr Index kTrainSize = 2000;
constexpr Index kTestSize = 500;
constexpr Index kClasses = 4;

Dataset take_rows(const MatrixXd& inputs, const std::vector<int>& labels, Index begin, Index count) {
  Dataset d;
  d.inputs = inputs.middleRows(begin, count);
  d.labels.assign(labels.begin() + begin, labels.begin() + begin + count);
  d.num_classes = kClasses;
  return d;
}

void paint(Eigen::Ref<Matrix<double>> img, Index r, Index c, double v) {
  if (r >= 0 && r < kGlyphSide && c >= 0 && c < kGlyphSide) img(r, c) = v;
}

Matrix<double> render_glyph(int cls, Rng& rng) {
  Matrix<double> img = Matrix<double>::Zero(kGlyphSide, kGlyphSide);
  const double ink = 0.6 + 0.4 * rng.uniform();
  switch (cls) {
    case 0: {  // vertical bar, two pixels wide
      const Index c = 1 + static_cast<Index>(rng.uniform_index(5));
      const Index top = static_cast<Index>(rng.uniform_index(2));
      const Index bottom = 6 + static_cast<Index>(rng.uniform_index(2));
      for (Index r = top; r <= bottom; ++r) {
        paint(img, r, c, ink);
        paint(img, r, c + 1, ink);
      }
      break;
    }
    case 1: {  // plus sign
      const Index cy = 2 + static_cast<Index>(rng.uniform_index(4));
      const Index cx = 2 + static_cast<Index>(rng.uniform_index(4));
      const Index arm = 2 + static_cast<Index>(rng.uniform_index(2));
      for (Index k = -arm; k <= arm; ++k) {
        paint(img, cy + k, cx, ink);
        paint(img, cy, cx + k, ink);
      }
      break;
    }
    case 2: {  // diagonal stroke
      const Index offset = static_cast<Index>(rng.uniform_index(3)) - 1;
      for (Index r = 0; r < kGlyphSide; ++r) paint(img, r, r + offset, ink);
      break;
    }
    default: {  // square ring
      const Index size = 4 + static_cast<Index>(rng.uniform_index(3));
      const Index r0 = static_cast<Index>(rng.uniform_index(static_cast<std::size_t>(kGlyphSide - size + 1)));
      const Index c0 = static_cast<Index>(rng.uniform_index(static_cast<std::size_t>(kGlyphSide - size + 1)));
      for (Index k = 0; k < size; ++k) {
        paint(img, r0, c0 + k, ink);
        paint(img, r0 + size - 1, c0 + k, ink);
        paint(img, r0 + k, c0, ink);
        paint(img, r0 + k, c0 + size - 1, ink);
      }
      break;
    }
  }
  for (Index i = 0; i < img.size(); ++i) img.data()[i] = std::clamp(img.data()[i] + 0.1 * rng.normal(), 0.0, 1.0);
  return img;
}

std::vector<std::size_t> sample_without_replacement(const std::vector<std::size_t>& pool, std::size_t count,
                                                    Rng& rng) {
  std::vector<std::size_t> p = pool;
  for (std::size_t i = 0; i < count; ++i) std::swap(p[i], p[i + rng.uniform_index(p.size() - i)]);
  p.resize(count);
  return p;
}

void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.contains(key)) throw std::invalid_argument("unknown " + where + " key '" + key + "'");
  }
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

Batch Dataset::subset(std::span<const std::size_t> rows) const {
  Batch b;
  b.inputs.resize(static_cast<Index>(rows.size()), dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.inputs.row(static_cast<Index>(i)) = inputs.row(static_cast<Index>(rows[i]));
    b.labels.push_back(labels[rows[i]]);
  }
  return b;
}

Batch Dataset::all() const { return {inputs, labels}; }

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "blobs") return DatasetKind::kBlobs;
  if (name == "glyphs") return DatasetKind::kGlyphs;
  throw std::invalid_argument("unknown dataset '" + name + "'");
}

std::string to_string(DatasetKind kind) { return kind == DatasetKind::kBlobs ? "blobs" : "glyphs"; }

DatasetSplit make_dataset(DatasetKind kind, Rng& rng) {
  const Index total = kTrainSize + kTestSize;
  const Index dim = kind == DatasetKind::kBlobs ? kBlobDim : kGlyphSide * kGlyphSide;
  MatrixXd inputs(total, dim);
  std::vector<int> labels(static_cast<std::size_t>(total));
  // Balanced per split: each split is a multiple of the class count.
  for (Index i = 0; i < total; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % kClasses);
  auto shuffle_part = [&](Index begin, Index count) {
    const auto perm = rng.permutation(static_cast<std::size_t>(count));
    std::vector<int> copy(labels.begin() + begin, labels.begin() + begin + count);
    for (Index i = 0; i < count; ++i) labels[static_cast<std::size_t>(begin + i)] = copy[perm[static_cast<std::size_t>(i)]];
  };
  shuffle_part(0, kTrainSize);
  shuffle_part(kTrainSize, kTestSize);

  if (kind == DatasetKind::kBlobs) {
    const double scale = 5.0 / std::sqrt(2.0);
    for (Index i = 0; i < total; ++i) {
      for (Index j = 0; j < dim; ++j) inputs(i, j) = rng.normal();
      inputs(i, labels[static_cast<std::size_t>(i)]) += scale;
    }
  } else {
    for (Index i = 0; i < total; ++i) {
      const auto img = render_glyph(labels[static_cast<std::size_t>(i)], rng);
      inputs.row(i) = Eigen::Map<const Eigen::RowVectorXd>(img.data(), img.size());
    }
  }
  return {take_rows(inputs, labels, 0, kTrainSize), take_rows(inputs, labels, kTrainSize, kTestSize)};
}

void DefenseConfig::validate() const {
  if (kind == "none") return;
  if (kind == "topk") {
    if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("topk requires 0 < k <= 1");
    return;
  }
  if (kind == "dgp") {
    DgpConfig{k1, k2}.validate();
    return;
  }
  if (kind == "adgp") {
    DgpConfig{k1, k2}.validate();
    if (!(k > 0.0 && 2.0 * k <= 1.0)) throw std::invalid_argument("adgp requires 0 < k and 2k <= 1");
    if (!(k1 < k)) throw std::invalid_argument("adgp requires k1 < k");
    return;
  }
  if (kind == "dp") {
    if (!(std >= 0.0)) throw std::invalid_argument("dp requires std >= 0");
    return;
  }
  throw std::invalid_argument("unknown defense '" + kind + "'");
}

Defense DefenseConfig::to_defense() const {
  validate();
  if (kind == "none") return NoDefense{};
  if (kind == "topk") return TopK{k};
  if (kind == "dgp") return Dgp{{k1, k2}};
  if (kind == "dp") return DpGaussian{std};
  throw std::invalid_argument("defense '" + kind + "' is not a per-user defense");
}

std::string DefenseConfig::label() const {
  std::ostringstream os;
  os << kind;
  if (kind == "topk") os << "(" << k << ")";
  if (kind == "dgp") os << "(" << k1 << "," << k2 << ")";
  if (kind == "adgp") os << "(" << k1 << "," << k2 << "," << k << ")";
  if (kind == "dp") os << "(" << std << ")";
  return os.str();
}

void RunConfig::validate() const {
  if (users < 1) throw std::invalid_argument("users must be >= 1");
  if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (batch_size > kTrainSize / users) throw std::invalid_argument("batch_size exceeds a user's shard");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (!(lr_gamma > 0.0)) throw std::invalid_argument("lr_gamma must be > 0");
  for (Index h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden widths must be >= 1");
  }
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (imprint_bins == 1 || imprint_bins < 0) throw std::invalid_argument("imprint_bins must be 0 or >= 2");
  if (imprint_bins > 0 && dataset != DatasetKind::kGlyphs) {
    throw std::invalid_argument("imprint layers assume non-negative pixel inputs (glyphs)");
  }
  defense.validate();
}

double RunConfig::lr_at(int round) const {
  double v = lr;
  for (int m : lr_milestones) {
    if (round >= m) v *= lr_gamma;
  }
  return v;
}

nlohmann::json RunConfig::to_json() const {
  return {{"dataset", to_string(dataset)},
          {"users", users},
          {"rounds", rounds},
          {"batch_size", batch_size},
          {"lr", lr},
          {"lr_milestones", lr_milestones},
          {"lr_gamma", lr_gamma},
          {"hidden", hidden},
          {"defense", {{"kind", defense.kind}, {"k", defense.k}, {"k1", defense.k1}, {"k2", defense.k2}, {"std", defense.std}}},
          {"error_feedback", error_feedback},
          {"seed", seed},
          {"eval_every", eval_every},
          {"track_full_grad", track_full_grad},
          {"track_ef_identity", track_ef_identity},
          {"imprint_bins", imprint_bins}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  require_keys(j,
               {"dataset", "users", "rounds", "batch_size", "lr", "lr_milestones", "lr_gamma", "hidden", "defense",
                "error_feedback", "seed", "eval_every", "track_full_grad", "track_ef_identity", "imprint_bins"},
               "config");
  RunConfig c;
  try {
    c.dataset = parse_dataset_kind(j.value("dataset", to_string(c.dataset)));
    c.users = j.value("users", c.users);
    c.rounds = j.value("rounds", c.rounds);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.lr_milestones = j.value("lr_milestones", c.lr_milestones);
    c.lr_gamma = j.value("lr_gamma", c.lr_gamma);
    c.hidden = j.value("hidden", c.hidden);
    if (j.contains("defense")) {
      const auto& d = j.at("defense");
      if (d.is_string()) {
        c.defense.kind = d.get<std::string>();
      } else {
        require_keys(d, {"kind", "k", "k1", "k2", "std"}, "defense");
        c.defense.kind = d.value("kind", c.defense.kind);
        c.defense.k = d.value("k", c.defense.k);
        c.defense.k1 = d.value("k1", c.defense.k1);
        c.defense.k2 = d.value("k2", c.defense.k2);
        c.defense.std = d.value("std", c.defense.std);
      }
    }
    c.error_feedback = j.value("error_feedback", c.error_feedback);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.track_full_grad = j.value("track_full_grad", c.track_full_grad);
    c.track_ef_identity = j.value("track_ef_identity", c.track_ef_identity);
    c.imprint_bins = j.value("imprint_bins", c.imprint_bins);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json j = base.to_json();
  for (const auto& [key, raw] : overrides) {
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    j[nlohmann::json::json_pointer(pointer)] = value;
  }
  return RunConfig::from_json(j);
}

nlohmann::json RoundRecord::to_json() const {
  nlohmann::json j = {{"round", round},
                      {"lr", lr},
                      {"train_loss", train_loss},
                      {"grad_sq_mean", grad_sq_mean},
                      {"grad_sq_max", grad_sq_max},
                      {"err_sq_mean", err_sq_mean},
                      {"err_avg_sq", err_avg_sq},
                      {"prune_ratio_max", prune_ratio_max},
                      {"upload_bytes", upload_bytes},
                      {"download_bytes", download_bytes},
                      {"upload_entries", upload_entries}};
  if (test_accuracy) j["test_accuracy"] = *test_accuracy;
  if (full_grad_sq) j["full_grad_sq"] = *full_grad_sq;
  if (ef_identity_residual) j["ef_identity_residual"] = *ef_identity_residual;
  if (aggregation_residual) j["aggregation_residual"] = *aggregation_residual;
  if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
  return j;
}

RoundRecord RoundRecord::from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<int>();
  r.lr = j.value("lr", 0.0);
  r.train_loss = j.value("train_loss", 0.0);
  r.grad_sq_mean = j.value("grad_sq_mean", 0.0);
  r.grad_sq_max = j.value("grad_sq_max", 0.0);
  r.err_sq_mean = j.value("err_sq_mean", 0.0);
  r.err_avg_sq = j.value("err_avg_sq", 0.0);
  r.prune_ratio_max = j.value("prune_ratio_max", 0.0);
  r.upload_bytes = j.value("upload_bytes", std::int64_t{0});
  r.download_bytes = j.value("download_bytes", std::int64_t{0});
  r.upload_entries = j.value("upload_entries", std::int64_t{0});
  if (j.contains("test_accuracy")) r.test_accuracy = j.at("test_accuracy").get<double>();
  if (j.contains("full_grad_sq")) r.full_grad_sq = j.at("full_grad_sq").get<double>();
  if (j.contains("ef_identity_residual")) r.ef_identity_residual = j.at("ef_identity_residual").get<double>();
  if (j.contains("aggregation_residual")) r.aggregation_residual = j.at("aggregation_residual").get<double>();
  r.diagnostic = j.value("diagnostic", std::string());
  return r;
}

ImprintSpec dataset_imprint_spec(const Dataset& train, int bins) {
  if (bins < 2) throw std::invalid_argument("imprint needs at least two bins");
  ImprintSpec spec;
  spec.measurement = VectorXd::Constant(train.dim(), 1.0 / static_cast<double>(train.dim()));
  std::vector<double> m(static_cast<std::size_t>(train.size()));
  for (Index i = 0; i < train.size(); ++i) m[static_cast<std::size_t>(i)] = train.inputs.row(i).dot(spec.measurement);
  std::sort(m.begin(), m.end());
  for (int k = 1; k <= bins; ++k) {
    const auto pos = static_cast<std::size_t>(static_cast<double>(k) / (bins + 1) * static_cast<double>(m.size() - 1));
    double c = m[pos];
    if (!spec.thresholds.empty() && c <= spec.thresholds.back()) c = std::nextafter(spec.thresholds.back(), 1e300);
    spec.thresholds.push_back(c);
  }
  return spec;
}

MlpModel initial_model(const RunConfig& cfg, const Dataset& train) {
  Rng init_rng(cfg.seed, streams::kInit);
  std::vector<Index> dims{train.dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(train.num_classes);
  MlpModel model = MlpModel::random(dims, init_rng);
  if (cfg.imprint_bins > 0) model = insert_imprint(model, dataset_imprint_spec(train, cfg.imprint_bins));
  return model;
}

double accuracy(const MlpModel& model, const Dataset& data) {
  const MatrixXd logits = forward(model, data.inputs);
  Index correct = 0;
  for (Index i = 0; i < logits.rows(); ++i) {
    Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

GradientSet full_gradient(const MlpModel& model, const Dataset& data) { return loss_and_grad(model, data.all()).grads; }

RunResult train(const RunConfig& cfg, const RunHooks& hooks) {
  cfg.validate();
  Rng data_rng(cfg.seed, streams::kData);
  const DatasetSplit split = make_dataset(cfg.dataset, data_rng);
  const auto n_users = static_cast<std::size_t>(cfg.users);

  std::vector<std::vector<std::size_t>> shards(n_users);
  const auto perm = data_rng.permutation(static_cast<std::size_t>(split.train.size()));
  for (std::size_t j = 0; j < perm.size(); ++j) shards[j % n_users].push_back(perm[j]);

  MlpModel model = initial_model(cfg, split.train);
  const Index param_count = model.param_count();
  std::vector<Rng> batch_rngs;
  for (std::size_t i = 0; i < n_users; ++i) batch_rngs.emplace_back(cfg.seed, streams::kBatchBase + i);
  Rng dp_rng(cfg.seed, streams::kDpNoise);
  Rng leader_rng(cfg.seed, streams::kAdgpLeader);

  const bool adgp = cfg.defense.is_adgp();
  const Defense defense = adgp ? Defense{NoDefense{}} : cfg.defense.to_defense();
  const bool use_ef = cfg.error_feedback && (adgp || is_sparsifying(defense));
  const GradientSet zero_params = GradientSet::zeros_like(model.parameters());
  std::vector<ErrorState> errors(n_users, ErrorState{zero_params});
  const bool track_identity = cfg.track_ef_identity && cfg.lr_milestones.empty();
  GradientSet dummy = model.parameters();

  RunResult result;
  for (int t = 0; t < cfg.rounds; ++t) {
    RoundRecord rec;
    rec.round = t;
    rec.lr = cfg.lr_at(t);
    if (cfg.track_full_grad) rec.full_grad_sq = squared_norm(full_gradient(model, split.train));

    std::vector<Batch> batches;
    std::vector<GradientSet> grads;
    bool finite = true;
    for (std::size_t i = 0; i < n_users; ++i) {
      const auto rows = sample_without_replacement(shards[i], static_cast<std::size_t>(cfg.batch_size), batch_rngs[i]);
      batches.push_back(split.train.subset(rows));
      auto lg = loss_and_grad(model, batches.back());
      finite = finite && std::isfinite(lg.loss) && lg.grads.all_finite();
      rec.train_loss += lg.loss / static_cast<double>(n_users);
      grads.push_back(std::move(lg.grads));
    }
    if (!finite) {
      rec.diagnostic = "non-finite loss or gradient at round " + std::to_string(t);
      result.diverged = true;
      result.records.push_back(rec);
      if (hooks.on_record) hooks.on_record(rec);
      break;
    }

    const std::vector<ErrorState> errors_before = errors;
    std::vector<SparseGradient> wires;
    std::optional<LocationSet> locations;
    if (adgp) {
      std::vector<AdgpUser> users;
      for (std::size_t i = 0; i < n_users; ++i) users.push_back({grads[i], use_ef ? errors[i] : ErrorState{zero_params}});
      auto res = adgp_round(users, cfg.defense.k, {cfg.defense.k1, cfg.defense.k2}, leader_rng);
      wires = std::move(res.wires);
      if (use_ef) errors = std::move(res.states);
      locations = std::move(res.locations);
    } else {
      for (std::size_t i = 0; i < n_users; ++i) {
        if (use_ef) {
          auto r = ef_round(grads[i], errors[i], defense, &dp_rng);
          wires.push_back(std::move(r.wire));
          errors[i] = std::move(r.state);
        } else {
          wires.push_back(apply_defense(defense, grads[i], &dp_rng));
        }
      }
    }

    std::vector<GradientSet> dense;
    for (std::size_t i = 0; i < n_users; ++i) {
      const auto& w = wires[i];
      for (const auto& msg : w.warnings) result.warnings.push_back("round " + std::to_string(t) + ": " + msg);
      if (hooks.on_upload) hooks.on_upload({t, static_cast<int>(i), model, batches[i], grads[i], errors_before[i], w});
      result.ledger.record_upload(t, static_cast<int>(i), w);
      result.ledger.record_download(t, static_cast<int>(i),
                                    locations ? location_download_bytes(*locations) : dense_bytes(param_count));
      dense.push_back(densify(w));

      const GradientSet compensated = grads[i] + errors_before[i].residual;
      const double p_sq = squared_norm(compensated);
      if (p_sq > 0.0) rec.prune_ratio_max = std::max(rec.prune_ratio_max, squared_norm(compensated - dense.back()) / p_sq);
      const double g_sq = squared_norm(grads[i]);
      rec.grad_sq_mean += g_sq / static_cast<double>(n_users);
      rec.grad_sq_max = std::max(rec.grad_sq_max, g_sq);
      rec.err_sq_mean += squared_norm(errors[i].residual) / static_cast<double>(n_users);
    }
    std::vector<GradientSet> residuals;
    for (const auto& e : errors) residuals.push_back(e.residual);
    const GradientSet mean_error = mean(residuals);
    rec.err_avg_sq = squared_norm(mean_error);

    const GradientSet step = mean(dense);
    const GradientSet before = model.parameters();
    model = model.updated(step, rec.lr);
    const GradientSet after = model.parameters();
    rec.aggregation_residual = norm((before - after) - rec.lr * step);
    if (track_identity) {
      dummy = dummy - rec.lr * mean(grads);
      const double w_norm = norm(after);
      rec.ef_identity_residual = norm((after - dummy) - rec.lr * mean_error) / (w_norm > 0.0 ? w_norm : 1.0);
    }
    if (!after.all_finite()) {
      rec.diagnostic = "non-finite parameters after round " + std::to_string(t);
      result.diverged = true;
    }

    if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.rounds) rec.test_accuracy = accuracy(model, split.test);
    rec.upload_bytes = result.ledger.round_upload(t);
    rec.download_bytes = result.ledger.round_download(t);
    for (const auto& e : result.ledger.entries()) {
      if (e.round == t) rec.upload_entries += e.upload_entries;
    }
    result.records.push_back(rec);
    if (hooks.on_record) hooks.on_record(rec);
    if (result.diverged || hooks.stop_after_round == t) break;
  }
  result.final_model = model;
  result.final_accuracy = accuracy(model, split.test);
  return result;
}

Snapshot snapshot_gradients(const RunConfig& cfg, int round, int user) {
  cfg.validate();
  if (round < 0 || round >= cfg.rounds) throw std::out_of_range("round " + std::to_string(round) + " out of range");
  if (user < 0 || user >= cfg.users) throw std::out_of_range("user " + std::to_string(user) + " out of range");
  std::optional<Snapshot> snap;
  RunHooks hooks;
  hooks.stop_after_round = round;
  hooks.on_upload = [&](const UploadEvent& ev) {
    if (ev.round != round || ev.user != user) return;
    auto obs = GradObservation::from_wire(ev.model, ev.wire,
                                          "seed" + std::to_string(cfg.seed) + "/r" + std::to_string(round) + "/u" +
                                              std::to_string(user));
    obs.batch_size = ev.batch.size();
    snap = Snapshot{std::move(obs), ev.batch, ev.raw_grad, ev.wire};
  };
  const auto result = train(cfg, hooks);
  if (!snap) throw std::runtime_error("run ended before round " + std::to_string(round) + (result.diverged ? " (diverged)" : ""));
  return *snap;
}

AttackReport opt_trial(const Dataset& data, const std::vector<Index>& hidden, const Defense& defense,
                       const OptAttackConfig& attack, Rng& rng) {
  std::vector<Index> dims{data.dim()};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(data.num_classes);
  const MlpModel model = MlpModel::random(dims, rng);
  const std::vector<std::size_t> row{rng.uniform_index(static_cast<std::size_t>(data.size()))};
  const Batch batch = data.subset(row);
  const auto grads = loss_and_grad(model, batch).grads;
  const auto wire = apply_defense(defense, grads, &rng);
  const auto obs = GradObservation::from_wire(model, wire);
  OptAttackConfig cfg = attack;
  cfg.seed = rng.next_u64();
  return opt_attack(obs, cfg, &batch);
}

AttackReport imprint_trial(const Dataset& data, const std::vector<Index>& hidden, const Defense& defense, int bins,
                           Rng& rng) {
  if (bins < 2) throw std::invalid_argument("imprint trial needs at least two bins");
  std::vector<Index> dims{data.dim()};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(data.num_classes);
  const MlpModel base = MlpModel::random(dims, rng);

  ImprintSpec spec;
  spec.measurement = VectorXd::Constant(data.dim(), 1.0 / static_cast<double>(data.dim()));
  std::vector<std::pair<double, std::size_t>> picked;
  std::set<double> seen;
  while (picked.size() < static_cast<std::size_t>(bins)) {
    const std::size_t i = rng.uniform_index(static_cast<std::size_t>(data.size()));
    const double m = data.inputs.row(static_cast<Index>(i)).dot(spec.measurement);
    if (seen.insert(m).second) picked.emplace_back(m, i);
  }
  std::sort(picked.begin(), picked.end());
  spec.thresholds.push_back(picked[0].first - 0.5 * (picked[1].first - picked[0].first));
  for (std::size_t k = 1; k < picked.size(); ++k) spec.thresholds.push_back(0.5 * (picked[k - 1].first + picked[k].first));

  std::vector<std::size_t> rows;
  for (const auto& p : picked) rows.push_back(p.second);
  const Batch batch = data.subset(rows);
  const MlpModel model = insert_imprint(base, spec);
  const auto grads = loss_and_grad(model, batch).grads;
  auto obs = GradObservation::from_wire(model, apply_defense(defense, grads, &rng));
  obs.batch_size = batch.size();
  return imprint_attack(obs, spec, &batch);
}

std::vector<DistanceBin> distance_sweep(const RunConfig& cfg, const std::vector<double>& targets,
                                        const OptAttackConfig& attack, int samples) {
  for (double t : targets) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("distance targets must lie in (0, 1)");
  }
  Rng data_rng(cfg.seed, streams::kData);
  const DatasetSplit split = make_dataset(cfg.dataset, data_rng);

  std::vector<DgpConfig> grid;
  for (double k1 : {0.0, 0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
    for (int j = 0; j <= 9; ++j) {
      const double k2 = 0.1 * j;
      if (k1 + k2 < 1.0 - 1e-12) grid.push_back({k1, k2});
    }
  }

  std::vector<DistanceBin> bins;
  for (double t : targets) bins.push_back({t});
  for (int s = 0; s < samples; ++s) {
    Rng rng(cfg.seed, 7000 + static_cast<std::uint64_t>(s));
    std::vector<Index> dims{split.test.dim()};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(split.test.num_classes);
    const MlpModel model = MlpModel::random(dims, rng);
    const std::vector<std::size_t> row{rng.uniform_index(static_cast<std::size_t>(split.test.size()))};
    const Batch batch = split.test.subset(row);
    const auto grads = loss_and_grad(model, batch).grads;
    const double gnorm = norm(grads);
    if (gnorm == 0.0) continue;

    std::vector<std::pair<double, SparseGradient>> options;
    for (const auto& c : grid) {
      auto wire = dgp_prune(grads, c);
      options.emplace_back(norm(grads - densify(wire)) / gnorm, std::move(wire));
    }
    for (auto& bin : bins) {
      std::size_t best = 0;
      for (std::size_t o = 1; o < options.size(); ++o) {
        if (std::abs(options[o].first - bin.target) < std::abs(options[best].first - bin.target)) best = o;
      }
      if (std::abs(options[best].first - bin.target) > 0.05) continue;
      OptAttackConfig ac = attack;
      ac.seed = rng.next_u64();
      const auto report = opt_attack(GradObservation::from_wire(model, options[best].second), ac, &batch);
      const double n = bin.samples;
      bin.empty = false;
      bin.achieved = (bin.achieved * n + options[best].first) / (n + 1);
      bin.k1 = grid[best].k1;
      bin.k2 = grid[best].k2;
      bin.mse = (bin.mse * n + report.mean_mse()) / (n + 1);
      const double psnr = std::isfinite(report.quality.front().psnr) ? report.quality.front().psnr : 100.0;
      bin.psnr = (bin.psnr * n + psnr) / (n + 1);
      bin.ssim = (bin.ssim * n + report.mean_ssim()) / (n + 1);
      bin.samples += 1;
    }
  }
  return bins;
}

std::vector<SweepRow> param_sweep(const RunConfig& base, const std::string& param, const std::vector<double>& values,
                                  const std::string& attack, int trials, double fixed_p, double fixed_sum_k,
                                  const OptAttackConfig& opt) {
  if (param != "sum_k" && param != "p") throw std::invalid_argument("sweep parameter must be sum_k or p");
  if (attack != "imprint" && attack != "opt-euclid" && attack != "opt-cos") {
    throw std::invalid_argument("sweep attack must be imprint, opt-euclid or opt-cos");
  }
  if (trials < 1) throw std::invalid_argument("sweep needs at least one trial");
  Rng data_rng(base.seed, streams::kData);
  const DatasetSplit split = make_dataset(base.dataset, data_rng);

  std::vector<SweepRow> rows;
  for (double v : values) {
    const DgpConfig dgp =
        param == "sum_k" ? DgpConfig::from_sum_and_ratio(v, fixed_p) : DgpConfig::from_sum_and_ratio(fixed_sum_k, v);
    const Defense defense = Dgp{dgp};
    SweepRow row{v, 0.0, 0.0, 0.0};
    for (int trial = 0; trial < trials; ++trial) {
      Rng rng(base.seed, 8000 + static_cast<std::uint64_t>(trial));
      AttackReport report;
      if (attack == "imprint") {
        report = imprint_trial(split.test, base.hidden, defense, 9, rng);
      } else {
        OptAttackConfig ac = opt;
        ac.distance = attack == "opt-cos" ? DistanceMetric::kCosine : DistanceMetric::kEuclidean;
        report = opt_trial(split.test, base.hidden, defense, ac, rng);
      }
      row.ssim += report.mean_ssim() / trials;
      row.mse += report.mean_mse() / trials;
    }
    RunConfig run = base;
    run.defense.kind = "dgp";
    run.defense.k1 = dgp.k1;
    run.defense.k2 = dgp.k2;
    row.accuracy = train(run).final_accuracy;
    rows.push_back(row);
  }
  return rows;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman needs two equal-length samples");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const Eigen::Map<const VectorXd> x(ra.data(), static_cast<Index>(ra.size()));
  const Eigen::Map<const VectorXd> y(rb.data(), static_cast<Index>(rb.size()));
  const VectorXd xc = x.array() - x.mean();
  const VectorXd yc = y.array() - y.mean();
  const double den = xc.norm() * yc.norm();
  return den == 0.0 ? 0.0 : xc.dot(yc) / den;
}

}  // namespace dgpsim
