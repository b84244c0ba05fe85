#pragma once

// Training loops. Every strategy and topology runs through one engine: each
// iteration forwards all networks on a shared batch, measures the gap state
// of every teacher-student pair, turns the modes into a per-network update
// plan (CE weight, KL sources, update or freeze), and steps the networks whose
// plan says so.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "switokd/checkpoint.hpp"
#include "switokd/config.hpp"
#include "switokd/data.hpp"
#include "switokd/distill.hpp"
#include "switokd/error.hpp"
#include "switokd/gap.hpp"
#include "switokd/nn.hpp"
#include "switokd/optimizer.hpp"

namespace switokd {

struct Member {
  std::string name;
  Role role = Role::student;
  Network net;
  OptimizerState opt;
  bool frozen = false;  // pre-trained kd-offline teacher
};

/// KL source index meaning "the ensemble of members 0 and 1".
inline constexpr std::size_t kEnsembleTarget = static_cast<std::size_t>(-1);

struct KlSource {
  std::size_t peer = 0;
  double weight = 0.0;
  friend bool operator==(const KlSource&, const KlSource&) = default;
};

/// What one network does this iteration:
///   loss = ce_weight * CE(y, p^1) + tau^2 * sum weight * KL(p_peer^tau || p^tau)
struct UpdatePlan {
  bool update = true;
  double ce_weight = 1.0;
  std::vector<KlSource> kl;
  friend bool operator==(const UpdatePlan&, const UpdatePlan&) = default;
};

struct PairLink {
  std::size_t teacher = 0;
  std::size_t student = 0;
};

/// Batch means of one network's loss components.
struct LossSummary {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  bool updated = false;
  friend bool operator==(const LossSummary&, const LossSummary&) = default;
};

struct StepRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::vector<GapState> pairs;     // one per teacher-student link
  std::vector<UpdatePlan> plans;   // one per member
  std::vector<LossSummary> losses; // one per member
  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string network;
  Role role = Role::student;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Read-only view of an iteration handed to instrumentation hooks.
struct StepView {
  const StepRecord& record;
  const std::vector<Member>& members;
  const std::vector<Matrix>& logit_grads;  // per member; empty when the member is not updated
  const std::vector<Matrix>& soft;         // p^tau per member, samples x classes
  const std::vector<std::size_t>& labels;  // batch labels
};

struct TrainHooks {
  /// Replaces the mode decision of switokd runs (pair index, measured state).
  std::function<Mode(std::size_t, const GapState&)> mode_override;
  std::function<void(const StepView&)> before_update;
  std::function<void(const StepView&)> after_update;
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct ModeTimeline {
  std::string name;  // "teacher/student"
  std::vector<GapState> states;

  std::size_t count(Mode m) const {
    std::size_t n = 0;
    for (const auto& s : states) n += s.mode == m;
    return n;
  }
  double fraction(Mode m) const {
    return states.empty() ? 0.0 : static_cast<double>(count(m)) / static_cast<double>(states.size());
  }
  std::size_t switch_count() const {
    std::size_t n = 0;
    for (std::size_t i = 1; i < states.size(); ++i) n += states[i].mode != states[i - 1].mode;
    return n;
  }
};

struct TrainResult {
  TrainConfig config;
  std::vector<Member> members;
  std::vector<PairLink> pairs;
  std::vector<ModeTimeline> timelines;  // one per pair
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  const Member& member(const std::string& name) const {
    for (const auto& m : members)
      if (m.name == name) return m;
    throw DomainError("no network named " + name);
  }
};

/// Top-1 accuracy under argmax of the temperature-1 softmax.
inline double evaluate(const Network& net, const Dataset& ds) {
  if (ds.empty()) throw DomainError("evaluate: empty dataset");
  constexpr Eigen::Index chunk = 512;
  std::size_t correct = 0;
  for (Eigen::Index start = 0; start < ds.features.rows(); start += chunk) {
    const Eigen::Index rows = std::min(chunk, ds.features.rows() - start);
    const Matrix logits = forward(net, ds.features.middleRows(start, rows));
    for (Eigen::Index i = 0; i < rows; ++i) {
      Eigen::Index best = 0;
      soften(logits.row(i).transpose(), 1.0).probs.maxCoeff(&best);
      correct += static_cast<std::size_t>(best) == ds.labels[static_cast<std::size_t>(start + i)];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline DataSplit load_dataset(const TrainConfig& cfg) {
  const auto& d = cfg.data;
  DataSplit out;
  if (d.source == "blobs") {
    out = generate_blobs(d.classes, d.per_class, d.dims, d.spread, d.seed.value_or(cfg.seed),
                         d.test_per_class);
  } else if (d.source == "idx") {
    out.train = load_idx(d.train_images, d.train_labels, 10, Split::train);
    out.test = load_idx(d.test_images, d.test_labels, 10, Split::test);
  } else {
    const std::size_t k = d.source == "cifar10" ? 10 : 100;
    std::vector<Dataset> parts;
    for (const auto& f : d.train_files) parts.push_back(load_cifar_binary(f, k, Split::train));
    out.train = concatenate(parts);
    out.test = load_cifar_binary(d.test_file, k, Split::test);
  }
  const auto shrink = [&](Dataset& ds) {
    if (d.limit == 0 || ds.size() <= d.limit) return;
    ds.features.conservativeResize(static_cast<Eigen::Index>(d.limit), Eigen::NoChange);
    ds.labels.resize(d.limit);
  };
  shrink(out.train);
  shrink(out.test);
  out.train.split = Split::train;
  out.test.split = Split::test;
  return out;
}

/// Teacher-student links of a topology, as member indices.
inline std::vector<PairLink> topology_pairs(Topology t) {
  switch (t) {
    case Topology::pair: return {{0, 1}};
    case Topology::one_teacher_two_students: return {{0, 1}, {0, 2}};
    case Topology::two_teachers_one_student: return {{0, 2}, {1, 2}};
  }
  return {};
}

/// The update plan every strategy/topology derives from the pair modes.
inline std::vector<UpdatePlan> update_plans(Strategy strategy, Topology topology, double a, double b,
                                            std::span<const Mode> modes) {
  const UpdatePlan frozen{false, 1.0, {}};
  switch (strategy) {
    case Strategy::vanilla: return {UpdatePlan{}, UpdatePlan{}};
    case Strategy::dml: return {{true, 1.0, {{1, b}}}, {true, 1.0, {{0, a}}}};
    case Strategy::kdcl:
      return {{true, 1.0, {{kEnsembleTarget, 1.0}}}, {true, 1.0, {{kEnsembleTarget, 1.0}}}};
    case Strategy::kd_offline: return {frozen, {true, a, {{0, 1.0 - a}}}};
    case Strategy::switokd: break;
  }
  switch (topology) {
    case Topology::pair:
      return {modes[0] == Mode::learning ? UpdatePlan{true, 1.0, {{1, b}}} : frozen,
              {true, 1.0, {{0, a}}}};
    case Topology::one_teacher_two_students: {
      // The teacher pauses only when both of its pairs are in expert mode,
      // and learns only from students whose pair is in learning mode.
      UpdatePlan teacher{false, 1.0, {}};
      for (std::size_t p = 0; p < 2; ++p)
        if (modes[p] == Mode::learning) teacher.kl.push_back({p + 1, b});
      teacher.update = !teacher.kl.empty();
      return {teacher, {true, 1.0, {{0, a}, {2, 1.0}}}, {true, 1.0, {{0, a}, {1, 1.0}}}};
    }
    case Topology::two_teachers_one_student: {
      const auto teacher = [&](std::size_t self, std::size_t other) {
        return modes[self] == Mode::learning ? UpdatePlan{true, 1.0, {{2, b}, {other, 1.0}}}
                                             : frozen;
      };
      return {teacher(0, 1), teacher(1, 0), {true, 1.0, {{0, a}, {1, a}}}};
    }
  }
  return {};
}

class Trainer {
public:
  /// `data` must outlive the trainer.
  Trainer(TrainConfig cfg, const DataSplit& data, TrainHooks hooks = {})
      : cfg_(std::move(cfg)), data_(data), hooks_(std::move(hooks)) {
    cfg_.validate();
    data_.train.validate();
    data_.test.validate();
    if (data_.train.empty()) throw DomainError("training set is empty");
    if (data_.train.dims() != data_.test.dims() ||
        data_.train.num_classes != data_.test.num_classes)
      throw ShapeError("train and test splits differ in dimensions or class count");
    classes_ = data_.train.num_classes;

    const auto configs = cfg_.networks();
    for (std::size_t i = 0; i < configs.size(); ++i) {
      const auto& nc = configs[i];
      Member m;
      m.name = nc.name;
      m.role = nc.role;
      if (cfg_.strategy == Strategy::kd_offline && nc.role == Role::teacher) {
        m.net = load_checkpoint(nc.checkpoint);
        if (m.net.input_dim() != data_.train.dims() || m.net.output_dim() != classes_)
          throw ConfigError(nc.name + ".checkpoint", "architecture does not match the dataset");
        m.frozen = true;
      } else {
        m.net = Network::build(data_.train.image, data_.train.dims(), nc.conv, nc.hidden, classes_);
        m.net.init_uniform(nc.init_seed.value_or(derive_seed(cfg_.seed, i)));
      }
      m.opt = make_optimizer(m.net, nc.optimizer);
      members_.push_back(std::move(m));
    }

    pairs_ = topology_pairs(cfg_.topology);
    for (const auto& p : pairs_)
      timelines_.push_back({members_[p.teacher].name + "/" + members_[p.student].name, {}});
  }

  const TrainConfig& config() const { return cfg_; }
  const std::vector<Member>& members() const { return members_; }
  std::vector<Member>& members() { return members_; }
  const std::vector<PairLink>& pairs() const { return pairs_; }
  const std::vector<ModeTimeline>& timelines() const { return timelines_; }
  std::size_t iteration() const { return iteration_; }

  std::vector<UpdatePlan> plan(std::span<const Mode> modes) const {
    return update_plans(cfg_.strategy, cfg_.topology, cfg_.alpha, cfg_.beta, modes);
  }

  /// One training iteration on `batch`.
  StepRecord step(const Batch& batch, std::size_t epoch) {
    const std::size_t count = members_.size();
    const auto n = static_cast<std::size_t>(batch.features.rows());
    if (n == 0) throw DomainError("step: empty batch");

    std::vector<ForwardCache> caches(count);
    std::vector<Matrix> logits(count);
    for (std::size_t m = 0; m < count; ++m) {
      logits[m] = forward(members_[m].net, batch.features, &caches[m]);
      if (!logits[m].allFinite())
        throw TrainingAborted(iteration_, "non-finite logits from " + members_[m].name);
    }

    std::vector<ProbDist> labels;
    labels.reserve(n);
    for (std::size_t label : batch.labels) labels.push_back(one_hot(label, classes_));

    std::vector<std::vector<ProbDist>> soft(count);
    std::vector<Matrix> soft_matrix(count);
    for (std::size_t m = 0; m < count; ++m) {
      soft_matrix[m].resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes_));
      for (std::size_t i = 0; i < n; ++i) {
        soft[m].push_back(soften(logits[m].row(static_cast<Eigen::Index>(i)).transpose(), cfg_.tau));
        soft_matrix[m].row(static_cast<Eigen::Index>(i)) = soft[m].back().probs.transpose();
      }
    }

    StepRecord record;
    record.iteration = iteration_;
    record.epoch = epoch;
    std::vector<Mode> modes;
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      std::vector<GapSample> samples;
      samples.reserve(n);
      for (std::size_t i = 0; i < n; ++i)
        samples.push_back({soft[pairs_[p].student][i], soft[pairs_[p].teacher][i], labels[i]});
      GapState state = batch_gap_state(samples, iteration_);
      state.mode = applied_mode(p, state);
      modes.push_back(state.mode);
      record.pairs.push_back(state);
    }
    record.plans = plan(modes);

    std::vector<Matrix> grads(count);
    for (std::size_t m = 0; m < count; ++m) {
      const UpdatePlan& p = record.plans[m];
      LossSummary sum;
      sum.updated = p.update;
      if (p.update) grads[m].resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes_));
      for (std::size_t i = 0; i < n; ++i) {
        ProbDist ensemble;
        std::vector<KlTerm> terms;
        if (p.update) {
          for (const auto& src : p.kl) {
            if (src.peer == kEnsembleTarget) {
              ensemble = ensemble_target(soft[0][i], soft[1][i]);
              terms.push_back({std::cref(ensemble), src.weight});
            } else {
              terms.push_back({std::cref(soft[src.peer][i]), src.weight});
            }
          }
        }
        const LossBreakdown lb =
            distill_loss(logits[m].row(static_cast<Eigen::Index>(i)).transpose(), labels[i],
                         p.update ? p.ce_weight : 1.0, terms, cfg_.tau);
        if (!std::isfinite(lb.total))
          throw TrainingAborted(iteration_, "non-finite loss for " + members_[m].name);
        sum.ce += lb.ce;
        sum.kl += lb.kl;
        sum.total += lb.total;
        if (p.update) grads[m].row(static_cast<Eigen::Index>(i)) = lb.logit_grad.transpose();
      }
      sum.ce /= static_cast<double>(n);
      sum.kl /= static_cast<double>(n);
      sum.total /= static_cast<double>(n);
      record.losses.push_back(sum);
    }

    const StepView view{record, members_, grads, soft_matrix, batch.labels};
    if (hooks_.before_update) hooks_.before_update(view);
    for (std::size_t m = 0; m < count; ++m) {
      if (!record.plans[m].update || members_[m].frozen) continue;
      try {
        const Gradients g = backward(members_[m].net, caches[m], grads[m]);
        switokd::step(members_[m].net, g, members_[m].opt);
      } catch (const NumericError& e) {
        throw TrainingAborted(iteration_, members_[m].name + ": " + e.what());
      }
    }
    if (hooks_.after_update) hooks_.after_update(view);

    for (std::size_t p = 0; p < pairs_.size(); ++p) timelines_[p].states.push_back(record.pairs[p]);
    ++iteration_;
    if (hooks_.on_step) hooks_.on_step(record);
    return record;
  }

  /// One pass over the training set followed by evaluation of every network.
  std::vector<EpochRecord> run_epoch(std::size_t epoch) {
    std::size_t decays = 0;
    for (std::size_t m : cfg_.milestones) decays += m <= epoch;
    for (auto& m : members_)
      m.opt.learning_rate = m.opt.settings.learning_rate * std::pow(cfg_.lr_gamma, static_cast<double>(decays));

    const auto plan_batches = batches(data_.train, cfg_.batch_size, cfg_.seed, epoch);
    for (std::size_t bi = 0; bi < plan_batches.size(); ++bi) {
      Batch b = gather(data_.train, plan_batches[bi]);
      if (cfg_.data.augment && !data_.train.image.empty()) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(epoch),
                          static_cast<std::uint32_t>(bi), 0xA06u};
        std::mt19937_64 rng(seq);
        augment_flip_crop(b, data_.train.image, 2, rng);
      }
      steps_.push_back(step(b, epoch));
    }

    std::vector<EpochRecord> out;
    for (const auto& m : members_) {
      EpochRecord r{epoch, m.name, m.role, evaluate(m.net, data_.train),
                    data_.test.empty() ? 0.0 : evaluate(m.net, data_.test)};
      if (hooks_.on_epoch) hooks_.on_epoch(r);
      out.push_back(std::move(r));
    }
    epochs_.insert(epochs_.end(), out.begin(), out.end());
    return out;
  }

  TrainResult run() {
    for (std::size_t e = 0; e < cfg_.epochs; ++e) run_epoch(e);
    return result();
  }

  TrainResult result() const {
    return {cfg_, members_, pairs_, timelines_, steps_, epochs_};
  }

private:
  Mode applied_mode(std::size_t pair, const GapState& state) const {
    if (cfg_.strategy != Strategy::switokd) return Mode::learning;
    if (hooks_.mode_override) return hooks_.mode_override(pair, state);
    switch (cfg_.mode_override) {
      case ModeOverride::automatic: return state.mode;
      case ModeOverride::learning: return Mode::learning;
      case ModeOverride::expert: return Mode::expert;
      case ModeOverride::alternate: return state.iteration % 2 == 0 ? Mode::learning : Mode::expert;
    }
    return state.mode;
  }

  TrainConfig cfg_;
  const DataSplit& data_;
  TrainHooks hooks_;
  std::size_t classes_ = 0;
  std::vector<Member> members_;
  std::vector<PairLink> pairs_;
  std::vector<ModeTimeline> timelines_;
  std::vector<StepRecord> steps_;
  std::vector<EpochRecord> epochs_;
  std::size_t iteration_ = 0;
};

/// Adaptive switching between a teacher and a student.
inline TrainResult train_switokd_pair(const TrainConfig& cfg, const DataSplit& data,
                                      TrainHooks hooks = {}) {
  if (cfg.strategy != Strategy::switokd || cfg.topology != Topology::pair)
    throw ConfigError("strategy", "train_switokd_pair needs strategy = switokd, topology = pair");
  return Trainer(cfg, data, std::move(hooks)).run();
}

/// vanilla, kd-offline, dml or kdcl on a teacher/student pair.
inline TrainResult train_baseline(const TrainConfig& cfg, const DataSplit& data,
                                  TrainHooks hooks = {}) {
  if (cfg.strategy == Strategy::switokd)
    throw ConfigError("strategy", "train_baseline does not run switokd");
  return Trainer(cfg, data, std::move(hooks)).run();
}

/// 1t2s or 2t1s switokd.
inline TrainResult train_multi(const TrainConfig& cfg, const DataSplit& data, TrainHooks hooks = {}) {
  if (cfg.topology == Topology::pair)
    throw ConfigError("topology", "train_multi needs topology 1t2s or 2t1s");
  if (cfg.networks().size() != 3) throw ConfigError("topology", "three networks required");
  return Trainer(cfg, data, std::move(hooks)).run();
}

inline TrainResult train(const TrainConfig& cfg, const DataSplit& data, TrainHooks hooks = {}) {
  if (cfg.topology != Topology::pair) return train_multi(cfg, data, std::move(hooks));
  if (cfg.strategy == Strategy::switokd) return train_switokd_pair(cfg, data, std::move(hooks));
  return train_baseline(cfg, data, std::move(hooks));
}

} // namespace switokd
