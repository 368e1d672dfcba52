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

#include "dgpsim/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dgpsim/plot.hpp"
#include "dgpsim/sim.hpp"
#include "dgpsim/theory.hpp"

namespace dgpsim::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Inapplicable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out;
  std::vector<std::string> extras;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

fs::path prepare_out(const std::string& dir) {
  const fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) throw std::runtime_error("output directory " + p.string() + " is not writable");
  return p;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() <= 2) throw ConfigError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("option '" + a + "' needs a value");
      out.emplace_back(body, extras[++i]);
    }
  }
  return out;
}

RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& extras) {
  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_file(config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
      cfg = RunConfig::from_json(j);
    }
    cfg = apply_overrides(cfg, parse_overrides(extras));
    if (const char* seed = std::getenv("DGPSIM_SEED"); seed != nullptr && *seed != '\0') {
      try {
        cfg.seed = std::stoull(seed);
      } catch (const std::exception&) {
        throw ConfigError(std::string("DGPSIM_SEED is not an unsigned integer: ") + seed);
      }
    }
    cfg.validate();
    return cfg;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
}

std::vector<RoundRecord> read_records(const fs::path& run_dir) {
  std::istringstream in(read_file(run_dir / "records.jsonl"));
  std::vector<RoundRecord> records;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) records.push_back(RoundRecord::from_json(nlohmann::json::parse(line)));
  }
  return records;
}

RunConfig run_config(const std::string& run_dir) {
  return RunConfig::from_json(nlohmann::json::parse(read_file(fs::path(run_dir) / "config.json")));
}

// --- train ---------------------------------------------------------------

int cmd_train(const Common& c, std::ostream& out) {
  const RunConfig cfg = resolve_config(c.config, c.extras);
  const fs::path dir = prepare_out(c.out);
  std::ostringstream records;
  RunHooks hooks;
  hooks.on_record = [&records](const RoundRecord& r) { records << r.to_json().dump() << '\n'; };
  const RunResult result = train(cfg, hooks);
  write_file(dir / "config.json", cfg.to_json().dump(2) + "\n");
  write_file(dir / "records.jsonl", records.str());
  write_file(dir / "model.json", checkpoint_to_json(result.final_model));
  write_file(dir / "ledger.csv", result.ledger.to_csv());
  if (result.diverged) {
    out << "diverged: " << result.records.back().diagnostic << '\n';
    return kDiverged;
  }
  out << "final_accuracy " << fmt(result.final_accuracy) << '\n';
  return kOk;
}

// --- attack --------------------------------------------------------------

struct AttackArgs {
  std::string run;
  std::string attack = "opt-euclid";
  int round = 0;
  int user = 0;
  int rounds = 100;
  int iterations = 2000;
  int restarts = 3;
};

void write_images(const fs::path& dir, const AttackReport& report, const Batch& truth) {
  for (Index k = 0; k < truth.size(); ++k) {
    const VectorXd x = truth.inputs.row(k).transpose();
    write_file(dir / ("truth_" + std::to_string(k) + ".pgm"), pgm_image(as_image(x)));
  }
  for (std::size_t k = 0; k < report.recovered.size(); ++k) {
    write_file(dir / ("recovered_" + std::to_string(k) + ".pgm"), pgm_image(as_image(report.recovered[k])));
  }
}

int cmd_label(const RunConfig& cfg, const AttackArgs& a, const fs::path& dir, std::ostream& out) {
  const int rounds = std::min(a.rounds, cfg.rounds);
  if (rounds < 1) throw ConfigError("label attack needs --rounds >= 1");
  std::ostringstream lines;
  int correct = 0;
  RunHooks hooks;
  hooks.stop_after_round = rounds - 1;
  hooks.on_upload = [&](const UploadEvent& ev) {
    if (ev.user != a.user) return;
    const auto obs = GradObservation::from_wire(ev.model, ev.wire);
    const auto label = infer_label(obs);
    const int truth = ev.batch.labels.front();
    if (label && *label == truth) ++correct;
    nlohmann::json j = {{"round", ev.round}, {"user", ev.user}, {"true_label", truth}};
    j["inferred_label"] = label ? nlohmann::json(*label) : nlohmann::json(nullptr);
    lines << j.dump() << '\n';
  };
  train(cfg, hooks);
  write_file(dir / "attack.jsonl", lines.str());
  out << "label_accuracy " << fmt(static_cast<double>(correct) / rounds) << '\n';
  return kOk;
}

int cmd_attack(const Common& c, const AttackArgs& a, std::ostream& out) {
  RunConfig cfg;
  if (!a.run.empty()) {
    try {
      cfg = apply_overrides(run_config(a.run), parse_overrides(c.extras));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(e.what());
    }
  } else {
    cfg = resolve_config(c.config, c.extras);
  }
  const fs::path dir = prepare_out(c.out.empty() ? (a.run.empty() ? "." : a.run) : c.out);
  const bool passive = a.attack != "imprint";
  if (a.attack != "opt-euclid" && a.attack != "opt-cos" && a.attack != "bias" && a.attack != "label" &&
      a.attack != "imprint") {
    throw ConfigError("unknown attack '" + a.attack + "'");
  }
  if (passive && cfg.batch_size != 1) {
    throw Inapplicable(a.attack + " attack needs single-sample uploads (batch_size = 1)");
  }
  if (!passive && cfg.imprint_bins < 2) throw Inapplicable("model has no imprint layer (imprint_bins = 0)");
  if (a.attack == "label") return cmd_label(cfg, a, dir, out);

  Snapshot snap;
  try {
    snap = snapshot_gradients(cfg, a.round, a.user);
  } catch (const std::out_of_range& e) {
    throw ConfigError(e.what());
  }
  AttackReport report;
  if (a.attack == "bias") {
    report = bias_attack(snap.observation);
    score_report(report, snap.batch);
  } else if (a.attack == "imprint") {
    Rng data_rng(cfg.seed, streams::kData);
    const auto split = make_dataset(cfg.dataset, data_rng);
    report = imprint_attack(snap.observation, dataset_imprint_spec(split.train, cfg.imprint_bins), &snap.batch);
  } else {
    OptAttackConfig ac;
    ac.distance = a.attack == "opt-cos" ? DistanceMetric::kCosine : DistanceMetric::kEuclidean;
    ac.iterations = a.iterations;
    ac.restarts = a.restarts;
    ac.seed = Rng(cfg.seed, streams::kAttackInit + 16 * static_cast<std::uint64_t>(a.round * cfg.users + a.user))
                  .next_u64();
    try {
      ac.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    report = opt_attack(snap.observation, ac, &snap.batch);
  }
  write_file(dir / "attack.jsonl", report.to_json() + "\n");
  write_images(dir, report, snap.batch);
  if (!report.success) {
    out << "attack failed: " << report.failure_reason << '\n';
    return kOk;
  }
  out << "mse " << fmt(report.mean_mse()) << " ssim " << fmt(report.mean_ssim()) << '\n';
  return kOk;
}

// --- sweep ---------------------------------------------------------------

struct SweepArgs {
  std::string param = "sum_k";
  std::string values;
  std::string attack;
  int trials = 3;
  int iterations = 2000;
};

int cmd_sweep(const Common& c, const SweepArgs& s, std::ostream& out) {
  const RunConfig cfg = resolve_config(c.config, c.extras);
  std::vector<double> values;
  std::stringstream ss(s.values);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      values.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad sweep value '" + tok + "'");
    }
  }
  if (values.empty()) throw ConfigError("sweep needs --values");
  const std::string attack = s.attack.empty() ? (s.param == "p" ? "opt-cos" : "imprint") : s.attack;
  OptAttackConfig opt;
  opt.iterations = s.iterations;
  std::vector<SweepRow> rows;
  try {
    rows = param_sweep(cfg, s.param, values, attack, s.trials, 1.0 / 15.0, 0.8, opt);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const fs::path dir = prepare_out(c.out);
  std::ostringstream csv;
  csv << "value,ssim,mse,accuracy\n";
  for (const auto& r : rows) csv << fmt(r.value) << ',' << fmt(r.ssim) << ',' << fmt(r.mse) << ',' << fmt(r.accuracy) << '\n';
  write_file(dir / "sweep.csv", csv.str());
  out << csv.str();
  return kOk;
}

// --- verify --------------------------------------------------------------

int cmd_verify(const Common& c, std::ostream& out) {
  RunConfig pruned = resolve_config(c.config, c.extras);
  if (pruned.defense.kind != "dgp") pruned.defense = DefenseConfig{"dgp"};
  pruned.error_feedback = true;
  pruned.track_full_grad = true;
  RunConfig plain = pruned;
  plain.defense = DefenseConfig{};

  std::vector<GradientSet> samples;
  RunHooks hooks;
  hooks.on_upload = [&samples](const UploadEvent& ev) {
    if (samples.size() < 500) samples.push_back(ev.raw_grad);
  };
  const RunResult a = train(pruned, hooks);
  const RunResult b = train(plain);
  const DgpConfig dgp{pruned.defense.k1, pruned.defense.k2};

  const std::vector<BoundReport> reports{check_assumption1(samples, dgp), check_theorem1(samples, dgp),
                                         check_lemma1(a.records), check_convergence(a.records, b.records)};
  const fs::path dir = prepare_out(c.out);
  std::ostringstream jsonl;
  for (const auto& r : reports) jsonl << r.to_json().dump() << '\n';
  write_file(dir / "verify.jsonl", jsonl.str());
  const std::string csv = verify_csv(reports);
  write_file(dir / "verify.csv", csv);
  out << csv;
  if (a.diverged || b.diverged) return kDiverged;
  const bool failed = std::any_of(reports.begin(), reports.end(),
                                  [](const BoundReport& r) { return r.status == CheckStatus::kFail; });
  return failed ? kFailure : kOk;
}

// --- comm ----------------------------------------------------------------

struct CommRow {
  std::string label;
  std::int64_t upload = 0;
  std::int64_t download = 0;
  std::int64_t entries = 0;
  Index params = 0;
  int rounds = 0;
  int users = 0;
};

CommRow summarize(const std::string& label, const std::vector<RoundRecord>& records, Index params, int users) {
  CommRow row{label, 0, 0, 0, params, static_cast<int>(records.size()), users};
  for (const auto& r : records) {
    row.upload += r.upload_bytes;
    row.download += r.download_bytes;
    row.entries += r.upload_entries;
  }
  return row;
}

int cmd_comm(const Common& c, const std::vector<std::string>& runs, std::ostream& out) {
  std::vector<CommRow> rows;
  if (!runs.empty()) {
    for (const auto& dir : runs) {
      const RunConfig cfg = run_config(dir);
      const Index params = checkpoint_from_json(read_file(fs::path(dir) / "model.json")).param_count();
      rows.push_back(summarize(cfg.defense.kind, read_records(dir), params, cfg.users));
    }
  } else {
    const RunConfig base = resolve_config(c.config, c.extras);
    std::vector<DefenseConfig> defenses(4, base.defense);
    defenses[0].kind = "none";
    defenses[1].kind = "topk";
    defenses[1].k = std::max(1e-6, 1.0 - base.defense.k1 - base.defense.k2);
    defenses[2].kind = "dgp";
    defenses[3].kind = "adgp";
    for (const auto& d : defenses) {
      RunConfig cfg = base;
      cfg.defense = d;
      try {
        cfg.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(d.kind + ": " + e.what());
      }
      const RunResult r = train(cfg);
      rows.push_back(summarize(d.kind, r.records, r.final_model.param_count(), cfg.users));
    }
  }
  std::ostringstream csv;
  csv << "defense,rounds,param_count,upload_bytes,download_bytes,upload_entries\n";
  for (const auto& r : rows) {
    csv << r.label << ',' << r.rounds << ',' << r.params << ',' << r.upload << ',' << r.download << ',' << r.entries
        << '\n';
  }
  write_file(prepare_out(c.out) / "comm.csv", csv.str());
  out << csv.str();
  auto find = [&rows](const std::string& label) -> const CommRow* {
    for (const auto& r : rows) {
      if (r.label == label) return &r;
    }
    return nullptr;
  };
  if (const auto* d = find("dgp"); d && d->rounds > 0 && d->params > 0) {
    const double dense = static_cast<double>(dense_bytes(d->params)) * d->rounds * d->users;
    out << "dgp_upload_vs_dense " << fmt(static_cast<double>(d->upload) / dense) << '\n';
    if (const auto* ad = find("adgp"); ad && d->download > 0) {
      out << "adgp_download_vs_dgp " << fmt(static_cast<double>(ad->download) / static_cast<double>(d->download)) << '\n';
    }
  }
  return kOk;
}

// --- report --------------------------------------------------------------

int cmd_report(const Common& c, const std::vector<std::string>& runs, std::ostream& out) {
  const fs::path dir = prepare_out(c.out);
  std::ostringstream acc_csv;
  acc_csv << "run,round,test_accuracy\n";
  std::ostringstream quality_csv;
  quality_csv << "run,obs_distance_euclidean,ssim\n";
  std::vector<Series> curves;
  std::vector<Series> scatter;
  for (const auto& run : runs) {
    const std::string label = fs::path(run).filename().string().empty() ? run : fs::path(run).filename().string();
    Series s{label, {}, {}};
    for (const auto& r : read_records(run)) {
      if (!r.test_accuracy) continue;
      acc_csv << label << ',' << r.round << ',' << fmt(*r.test_accuracy) << '\n';
      s.xs.push_back(r.round);
      s.ys.push_back(*r.test_accuracy);
    }
    curves.push_back(std::move(s));
    const fs::path attack_file = fs::path(run) / "attack.jsonl";
    if (!fs::exists(attack_file)) continue;
    std::istringstream in(read_file(attack_file));
    Series pts{label, {}, {}};
    for (std::string line; std::getline(in, line);) {
      const auto j = nlohmann::json::parse(line);
      if (!j.contains("obs_distance_euclidean") || !j["obs_distance_euclidean"].is_number() || !j.contains("samples")) {
        continue;
      }
      for (const auto& q : j["samples"]) {
        pts.xs.push_back(j["obs_distance_euclidean"].get<double>());
        pts.ys.push_back(q["ssim"].get<double>());
        quality_csv << label << ',' << fmt(pts.xs.back()) << ',' << fmt(pts.ys.back()) << '\n';
      }
    }
    if (!pts.xs.empty()) scatter.push_back(std::move(pts));
  }
  if (runs.empty()) {
    write_file(dir / "accuracy.csv", "");
    out << "no runs given\n";
    return kOk;
  }
  write_file(dir / "accuracy.csv", acc_csv.str());
  write_file(dir / "accuracy.svg", svg_chart(curves, "test accuracy", "round", "accuracy"));
  if (!scatter.empty()) {
    write_file(dir / "quality.csv", quality_csv.str());
    write_file(dir / "quality.svg", svg_chart(scatter, "reconstruction quality", "gradient distance", "SSIM", false));
  }
  out << "wrote " << (dir / "accuracy.csv").string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dgpsim: dual gradient pruning collaborative-learning simulator", "dgpsim"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--out", common.out, "output directory");
    sub->allow_extras();
  };

  auto* train_cmd = app.add_subcommand("train", "run collaborative training");
  add_common(train_cmd);

  AttackArgs attack_args;
  auto* attack_cmd = app.add_subcommand("attack", "attack one upload of a replayed run");
  add_common(attack_cmd);
  attack_cmd->add_option("--run", attack_args.run, "run directory written by train");
  attack_cmd->add_option("--attack", attack_args.attack, "opt-euclid | opt-cos | bias | label | imprint");
  attack_cmd->add_option("--round", attack_args.round, "round of the attacked upload");
  attack_cmd->add_option("--user", attack_args.user, "user of the attacked upload");
  attack_cmd->add_option("--rounds", attack_args.rounds, "rounds covered by the label attack");
  attack_cmd->add_option("--iterations", attack_args.iterations, "optimizer iterations per restart");
  attack_cmd->add_option("--restarts", attack_args.restarts, "optimizer restarts");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "attack quality and accuracy across DGP settings");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--param", sweep_args.param, "sum_k | p");
  sweep_cmd->add_option("--values", sweep_args.values, "comma-separated values");
  sweep_cmd->add_option("--attack", sweep_args.attack, "imprint | opt-euclid | opt-cos");
  sweep_cmd->add_option("--trials", sweep_args.trials, "attack trials per value");
  sweep_cmd->add_option("--iterations", sweep_args.iterations, "optimizer iterations for opt attacks");

  auto* verify_cmd = app.add_subcommand("verify", "check the formal bounds on paired runs");
  add_common(verify_cmd);

  std::vector<std::string> runs;
  auto* comm_cmd = app.add_subcommand("comm", "communication cost per defense");
  add_common(comm_cmd);
  comm_cmd->add_option("--run", runs, "finished run directories (repeatable)");

  auto* report_cmd = app.add_subcommand("report", "accuracy curves and quality scatter");
  add_common(report_cmd);
  report_cmd->add_option("--run", runs, "run directories (repeatable)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }

  CLI::App* sub = app.get_subcommands().front();
  common.extras = sub->remaining();
  try {
    if (sub == train_cmd) return cmd_train(common, out);
    if (sub == attack_cmd) return cmd_attack(common, attack_args, out);
    if (sub == sweep_cmd) return cmd_sweep(common, sweep_args, out);
    if (sub == verify_cmd) return cmd_verify(common, out);
    if (sub == comm_cmd) return cmd_comm(common, runs, out);
    return cmd_report(common, runs, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const Inapplicable& e) {
    err << "inapplicable attack: " << e.what() << '\n';
    return kInapplicable;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace dgpsim::cli
