#pragma once

// Subcommand bodies shared by the CLI and the tests. Each returns a process
// exit status: 0 success, 1 validation failure, 2 runtime/numeric failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "switokd/checkpoint.hpp"
#include "switokd/config.hpp"
#include "switokd/distill.hpp"
#include "switokd/error.hpp"
#include "switokd/grad_check.hpp"
#include "switokd/metrics.hpp"
#include "switokd/trainer.hpp"

namespace switokd {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitRuntime = 2 };

namespace fs = std::filesystem;

/// Lists every regular file under `dir` relative to it, excluding the manifest.
inline std::vector<std::string> list_artifacts(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel != kManifestFile) out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Trains `cfg` into `out_dir`. Throws on failure; cmd_train maps exceptions
/// to exit codes.
inline TrainResult train_to_directory(const TrainConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  RunManifest manifest;
  manifest.config = to_key_values(cfg);
  manifest.dataset = data_key_values(cfg);
  manifest.started = utc_timestamp();

  {
    std::ofstream snap(out_dir / kConfigSnapshotFile);
    write_key_values(snap, manifest.config);
  }
  const DataSplit data = load_dataset(cfg);

  std::ofstream iterations(out_dir / kIterationsFile);
  std::ofstream epochs(out_dir / kEpochsFile);
  if (!iterations || !epochs) throw NumericError("cannot write to " + out_dir.string());
  epochs << kEpochCsvHeader << '\n';

  std::optional<Trainer> trainer;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& rec) {
    iterations << step_json(rec, trainer->members(), trainer->timelines()).dump() << '\n';
  };
  hooks.on_epoch = [&](const EpochRecord& r) {
    write_epoch_row(epochs, r);
    epochs.flush();
  };

  const auto finish = [&](const std::string& status) {
    iterations.close();
    epochs.close();
    manifest.finished = utc_timestamp();
    manifest.status = status;
    manifest.artifacts = list_artifacts(out_dir);
    std::ofstream m(out_dir / kManifestFile);
    m << manifest_json(manifest).dump(2) << '\n';
  };

  trainer.emplace(cfg, data, hooks);
  try {
    for (std::size_t e = 0; e < cfg.epochs; ++e) trainer->run_epoch(e);
  } catch (const NumericError&) {
    finish("aborted");
    throw;
  }
  for (const auto& m : trainer->members()) save_checkpoint(out_dir / (m.name + ".ckpt"), m.net);
  finish("ok");
  return trainer->result();
}

inline TrainConfig load_config(const fs::path& config, const std::vector<std::string>& overrides) {
  KeyValues kv = read_key_values(config);
  apply_overrides(kv, overrides);
  return config_from_key_values(kv);
}

/// Runs `body`, reporting exceptions on `err` with the matching exit code.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const TrainingAborted& e) {
    err << "error: training aborted at iteration " << e.iteration() << ": " << e.what() << '\n';
    return kExitRuntime;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

inline int cmd_train(const fs::path& config, const std::vector<std::string>& overrides,
                     const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const TrainConfig cfg = load_config(config, overrides);
    const TrainResult r = train_to_directory(cfg, out_dir);
    for (const auto& m : r.members) {
      double last = 0.0;
      for (const auto& e : r.epochs)
        if (e.network == m.name) last = e.test_accuracy;
      out << m.name << " (" << to_string(m.role) << ") test accuracy " << format_number(last) << '\n';
    }
    for (const auto& t : r.timelines)
      out << t.name << ": " << t.switch_count() << " switches, expert fraction "
          << format_number(t.fraction(Mode::expert)) << '\n';
    out << "artifacts written to " << out_dir.string() << '\n';
    return static_cast<int>(kExitOk);
  });
}

// --- compare -----------------------------------------------------------------

inline constexpr const char* kCompareHeader =
    "run,strategy,network,role,final_accuracy,best_accuracy,switch_count,expert_fraction";

struct CompareRow {
  std::string run;
  std::string strategy;
  std::string network;
  Role role = Role::student;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::size_t switch_count = 0;
  double expert_fraction = 0.0;
};

/// Rows of one finished run directory. Switch count and expert fraction of a
/// network aggregate the pairs it belongs to (sum and mean respectively).
inline std::vector<CompareRow> compare_rows(const fs::path& run_dir, const std::string& run_name) {
  const RunManifest manifest = read_manifest(run_dir);
  const auto strategy = manifest.config.count("strategy") ? manifest.config.at("strategy") : "";
  const auto epochs = read_epoch_csv(run_dir / kEpochsFile);
  const auto iterations = run_dir / kIterationsFile;
  const auto names = read_pair_names(iterations);
  std::vector<TimelineSummary> sums;
  for (std::size_t p = 0; p < names.size(); ++p) sums.push_back(summarize(read_timeline(iterations, p)));

  std::vector<CompareRow> rows;
  for (const auto& e : epochs) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const CompareRow& r) { return r.network == e.network; });
    if (it == rows.end()) {
      rows.push_back({run_name, strategy, e.network, e.role, 0.0, 0.0, 0, 0.0});
      it = rows.end() - 1;
    }
    it->final_accuracy = e.test_accuracy;
    it->best_accuracy = std::max(it->best_accuracy, e.test_accuracy);
  }
  for (auto& r : rows) {
    std::size_t member_of = 0;
    double expert = 0.0;
    for (std::size_t p = 0; p < names.size(); ++p) {
      const auto slash = names[p].find('/');
      if (names[p].substr(0, slash) != r.network && names[p].substr(slash + 1) != r.network) continue;
      ++member_of;
      r.switch_count += sums[p].switch_count;
      expert += sums[p].expert_fraction();
    }
    r.expert_fraction = member_of ? expert / static_cast<double>(member_of) : 0.0;
  }
  return rows;
}

inline void write_compare_csv(std::ostream& out, const std::vector<CompareRow>& rows) {
  out << kCompareHeader << '\n';
  for (const auto& r : rows)
    out << r.run << ',' << r.strategy << ',' << r.network << ',' << to_string(r.role) << ','
        << format_number(r.final_accuracy) << ',' << format_number(r.best_accuracy) << ','
        << r.switch_count << ',' << format_number(r.expert_fraction) << '\n';
}

struct CompareOptions {
  std::vector<fs::path> inputs;       // config files or finished run directories
  fs::path runs_dir = "runs";         // where configs are trained
  std::vector<std::string> overrides; // applied to every config input
  bool allow_mismatch = false;
};

inline int cmd_compare(const CompareOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.inputs.empty()) throw ConfigError("inputs", "nothing to compare");
    struct Input {
      std::string name;
      fs::path run_dir;
      std::optional<TrainConfig> config;  // set when the run still has to be trained
      KeyValues dataset;
      std::string seed;
    };
    std::vector<Input> inputs;
    std::set<std::string> taken;
    for (const auto& path : opts.inputs) {
      Input in;
      in.name = path.filename().empty() ? path.parent_path().filename().string() : path.stem().string();
      for (std::size_t k = 2; taken.count(in.name); ++k) in.name = path.stem().string() + "-" + std::to_string(k);
      taken.insert(in.name);
      if (fs::is_directory(path)) {
        const auto m = read_manifest(path);
        in.run_dir = path;
        in.dataset = m.dataset;
        in.seed = m.config.count("seed") ? m.config.at("seed") : "";
      } else {
        in.config = load_config(path, opts.overrides);
        in.config->validate();
        in.run_dir = opts.runs_dir / in.name;
        in.dataset = data_key_values(*in.config);
        in.seed = std::to_string(in.config->seed);
      }
      inputs.push_back(std::move(in));
    }
    if (!opts.allow_mismatch) {
      for (const auto& in : inputs) {
        if (in.dataset != inputs.front().dataset)
          throw ConfigError("data", in.name + " uses a different dataset than " + inputs.front().name +
                                        " (pass --allow-mismatch to compare anyway)");
        if (in.seed != inputs.front().seed)
          throw ConfigError("seed", in.name + " uses a different seed than " + inputs.front().name +
                                        " (pass --allow-mismatch to compare anyway)");
      }
    }
    std::vector<CompareRow> rows;
    for (const auto& in : inputs) {
      if (in.config) {
        err << "training " << in.name << " into " << in.run_dir.string() << '\n';
        train_to_directory(*in.config, in.run_dir);
      }
      for (auto& r : compare_rows(in.run_dir, in.name)) rows.push_back(std::move(r));
    }
    write_compare_csv(out, rows);
    return static_cast<int>(kExitOk);
  });
}

// --- grad-check --------------------------------------------------------------

struct GradCheckOptions {
  Strategy strategy = Strategy::switokd;
  Topology topology = Topology::pair;
  double tau = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  std::uint64_t seed = 0;
  std::size_t instances = 100;
  double tolerance = 1e-4;
  bool inject_fault = false;  // doubles the analytic KL gradient
};

struct GradCheckSummary {
  std::size_t checked = 0;        // logit-level gradients compared
  double worst_logit = 0.0;       // max relative error over logit gradients
  double worst_parameter = 0.0;   // max relative error through a small network
  bool passed = true;
};

namespace detail {

/// Analytic logit gradient of one planned loss, optionally with the KL part doubled.
inline Vector planned_grad(const Vector& z, const ProbDist& y, double ce_weight,
                           std::span<const KlTerm> terms, double tau, bool fault) {
  Vector g = distill_loss(z, y, ce_weight, terms, tau).logit_grad;
  if (fault && !terms.empty()) g += distill_loss(z, y, 0.0, terms, tau).logit_grad;
  return g;
}

} // namespace detail

/// Compares analytic composite-loss gradients with central differences on
/// random instances of the strategy's loss forms. Peer targets are held fixed,
/// as they are during training.
inline GradCheckSummary run_grad_check(const GradCheckOptions& o) {
  if (!(o.tau > 0.0)) throw ConfigError("tau", "must be positive");
  if (o.alpha < 0.0 || o.beta < 0.0) throw ConfigError("alpha", "weights must be non-negative");
  if (o.strategy == Strategy::kd_offline && o.alpha > 1.0) throw ConfigError("alpha", "kd-offline needs alpha <= 1");
  if (o.strategy != Strategy::switokd && o.topology != Topology::pair)
    throw ConfigError("topology", "only switokd supports three-network topologies");

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> classes_dist(2, 6);
  std::bernoulli_distribution coin(0.5);
  const auto pairs = topology_pairs(o.topology);
  const std::size_t members = o.topology == Topology::pair ? 2 : 3;

  GradCheckSummary sum;
  for (std::size_t inst = 0; inst < o.instances; ++inst) {
    const std::size_t k = classes_dist(rng);
    const std::size_t label = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
    const ProbDist y = one_hot(label, k);
    std::vector<Vector> logits(members, Vector(static_cast<Eigen::Index>(k)));
    for (auto& z : logits)
      for (Eigen::Index c = 0; c < z.size(); ++c) z(c) = 2.0 * normal(rng);
    std::vector<Mode> modes(pairs.size());
    for (auto& m : modes) m = coin(rng) ? Mode::learning : Mode::expert;
    const auto plans = update_plans(o.strategy, o.topology, o.alpha, o.beta, modes);

    std::vector<ProbDist> soft;
    for (const auto& z : logits) soft.push_back(soften(z, o.tau));
    const ProbDist ensemble = ensemble_target(soft[0], soft[1]);

    for (std::size_t m = 0; m < members; ++m) {
      if (!plans[m].update) continue;
      std::vector<KlTerm> terms;
      for (const auto& src : plans[m].kl)
        terms.push_back({std::cref(src.peer == kEnsembleTarget ? ensemble : soft[src.peer]), src.weight});
      const double cw = plans[m].ce_weight;
      const Vector analytic = detail::planned_grad(logits[m], y, cw, terms, o.tau, o.inject_fault);
      // Fourth-order central stencil: truncation and roundoff both stay far
      // below the tolerance for tau down to 0.5.
      constexpr double h = 1e-3;
      const auto at = [&](Eigen::Index c, double shift) {
        Vector z = logits[m];
        z(c) += shift;
        return distill_loss(z, y, cw, terms, o.tau).total;
      };
      for (Eigen::Index c = 0; c < analytic.size(); ++c) {
        const double numeric =
            (-at(c, 2 * h) + 8 * at(c, h) - 8 * at(c, -h) + at(c, -2 * h)) / (12.0 * h);
        sum.worst_logit = std::max(sum.worst_logit, relative_error(analytic(c), numeric));
      }
      ++sum.checked;
    }

    // Every tenth instance also pushes the planned loss through a small
    // network to check the parameter gradients that training actually uses.
    if (inst % 10 != 0) continue;
    const std::size_t m = plans[0].update ? 0 : members - 1;
    std::vector<KlTerm> terms;
    for (const auto& src : plans[m].kl)
      terms.push_back({std::cref(src.peer == kEnsembleTarget ? ensemble : soft[src.peer]), src.weight});
    const std::size_t in_dim = 3;
    const std::size_t hidden[] = {5};
    Network net = Network::mlp(in_dim, hidden, k);
    net.init_uniform(rng());
    Matrix x(1, static_cast<Eigen::Index>(in_dim));
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(0, c) = normal(rng);
    const double cw = plans[m].ce_weight;
    const auto loss = [&](const Network& n) {
      return distill_loss(forward(n, x).row(0).transpose(), y, cw, terms, o.tau).total;
    };
    const Vector z = forward(net, x).row(0).transpose();
    const Matrix g = detail::planned_grad(z, y, cw, terms, o.tau, o.inject_fault).transpose();
    const auto report = grad_check(net, loss, backward(net, x, g), o.tolerance);
    sum.worst_parameter = std::max(sum.worst_parameter, report.worst());
  }
  sum.passed = sum.worst_logit <= o.tolerance && sum.worst_parameter <= o.tolerance;
  return sum;
}

inline int cmd_grad_check(const GradCheckOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto s = run_grad_check(o);
    out << "strategy " << to_string(o.strategy) << ", topology " << to_string(o.topology) << ", tau "
        << format_number(o.tau) << ", alpha " << format_number(o.alpha) << ", beta "
        << format_number(o.beta) << (o.inject_fault ? ", fault injected" : "") << '\n'
        << "logit gradients checked: " << s.checked << ", max relative error "
        << format_number(s.worst_logit) << '\n'
        << "parameter gradients max relative error " << format_number(s.worst_parameter) << '\n'
        << (s.passed ? "PASS" : "FAIL") << " (tolerance " << format_number(o.tolerance) << ")\n";
    return static_cast<int>(s.passed ? kExitOk : kExitValidation);
  });
}

// --- timeline ----------------------------------------------------------------

/// `source` is a run directory or an iteration JSONL file.
inline int cmd_timeline(const fs::path& source, std::size_t pair, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const fs::path log = fs::is_directory(source) ? source / kIterationsFile : source;
    if (!fs::exists(log)) throw FormatError(log.string() + ": no iteration log", 0);
    write_timeline_csv(out, read_timeline(log, pair));
    return static_cast<int>(kExitOk);
  });
}

} // namespace switokd
