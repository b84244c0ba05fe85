#pragma once

// Distillation gap G = ||p_s - p_t||_1, the adaptive switching threshold
//   delta = ||p_s - y||_1 - exp(-r) ||p_t - y||_1,  r = d_t / (d_s + d_t),
// and the learning/expert mode decision. All l1 norms are plain sums, so
// G lies in [0, 2].

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "switokd/distill.hpp"
#include "switokd/error.hpp"

namespace switokd {

enum class Mode { learning, expert };

inline std::string to_string(Mode m) { return m == Mode::learning ? "learning" : "expert"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "learning") return Mode::learning;
  if (s == "expert") return Mode::expert;
  throw DomainError("unknown mode '" + std::string(s) + "'");
}

inline double l1_distance(const ProbDist& a, const ProbDist& b) {
  detail::require_same_size(a, b, "l1_distance");
  return (a.probs - b.probs).lpNorm<1>();
}

/// G = sum_k |p_s(k) - p_t(k)|.
inline double gap(const ProbDist& p_s_tau, const ProbDist& p_t_tau) {
  return l1_distance(p_s_tau, p_t_tau);
}

/// exp(-d_t / (d_s + d_t)); lies in [exp(-1), 1].
inline double epsilon_factor(double dist_t, double dist_s) {
  if (!(dist_t >= 0.0) || !(dist_s >= 0.0))
    throw DomainError("epsilon_factor: distances must be non-negative");
  if (dist_t == 0.0 && dist_s == 0.0)
    throw DegenerateInputError("epsilon_factor: teacher and student both match the label");
  return std::exp(-dist_t / (dist_s + dist_t));
}

struct Threshold {
  double delta = 0.0;
  double epsilon = 1.0;
  double r = 0.0;
  double dist_s = 0.0;  // ||p_s - y||_1
  double dist_t = 0.0;  // ||p_t - y||_1
};

/// Threshold from the two label distances. Scale-free in the sense that
/// multiplying both distances by c > 0 multiplies delta by c.
inline Threshold threshold_from_distances(double dist_s, double dist_t) {
  Threshold t;
  t.dist_s = dist_s;
  t.dist_t = dist_t;
  t.epsilon = epsilon_factor(dist_t, dist_s);
  t.r = dist_t / (dist_s + dist_t);
  t.delta = dist_s - t.epsilon * dist_t;
  return t;
}

inline Threshold threshold(const ProbDist& p_s_tau, const ProbDist& p_t_tau, const ProbDist& y) {
  return threshold_from_distances(l1_distance(p_s_tau, y), l1_distance(p_t_tau, y));
}

/// Learning iff G <= delta.
inline Mode decide_mode(double gap_value, double delta) {
  return gap_value <= delta ? Mode::learning : Mode::expert;
}

/// One teacher-student pair's switching record for one iteration.
struct GapState {
  std::size_t iteration = 0;
  double gap = 0.0;
  double r = 0.0;
  double epsilon = 1.0;
  double delta = 0.0;
  Mode mode = Mode::learning;

  friend bool operator==(const GapState&, const GapState&) = default;
};

inline void to_json(nlohmann::json& j, const GapState& s) {
  j = nlohmann::json{{"iteration", s.iteration}, {"G", s.gap},         {"r", s.r},
                     {"epsilon", s.epsilon},     {"delta", s.delta},   {"mode", to_string(s.mode)}};
}

inline void from_json(const nlohmann::json& j, GapState& s) {
  s.iteration = j.at("iteration").get<std::size_t>();
  s.gap = j.at("G").get<double>();
  s.r = j.at("r").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.delta = j.at("delta").get<double>();
  s.mode = parse_mode(j.at("mode").get<std::string>());
}

struct GapSample {
  ProbDist student;  // p_s^tau
  ProbDist teacher;  // p_t^tau
  ProbDist label;    // one-hot y
};

/// Per-sample G and delta averaged over the batch, then one decision.
/// A sample where both networks sit exactly on the label contributes
/// G = delta = 0 with r = 0, epsilon = 1 (nothing to distill either way).
inline GapState batch_gap_state(std::span<const GapSample> batch, std::size_t iteration) {
  if (batch.empty()) throw DomainError("batch_gap_state: empty batch");
  double g_sum = 0.0, delta_sum = 0.0, r_sum = 0.0, eps_sum = 0.0;
  for (const auto& s : batch) {
    g_sum += gap(s.student, s.teacher);
    const double ds = l1_distance(s.student, s.label);
    const double dt = l1_distance(s.teacher, s.label);
    if (ds == 0.0 && dt == 0.0) {
      eps_sum += 1.0;
      continue;
    }
    const Threshold t = threshold_from_distances(ds, dt);
    delta_sum += t.delta;
    r_sum += t.r;
    eps_sum += t.epsilon;
  }
  const auto n = static_cast<double>(batch.size());
  GapState state;
  state.iteration = iteration;
  state.gap = g_sum / n;
  state.delta = delta_sum / n;
  state.r = r_sum / n;
  state.epsilon = eps_sum / n;
  state.mode = decide_mode(state.gap, state.delta);
  return state;
}

} // namespace switokd
