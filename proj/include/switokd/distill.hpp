#pragma once

// Probability-space math for logit-level distillation: temperature softmax,
// cross-entropy, KL divergence, and the closed-form logit gradients of the
// composite CE + tau^2 * KL losses used by every training strategy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "switokd/error.hpp"
#include "switokd/nn.hpp"

namespace switokd {

/// Lower clamp applied to predicted probabilities before taking a log.
inline constexpr double kLogClamp = 1e-12;

/// A point on the K-simplex, tagged with the temperature that produced it.
struct ProbDist {
  Vector probs;
  double temperature = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(probs.size()); }
  double operator[](std::size_t k) const { return probs(static_cast<Eigen::Index>(k)); }
};

namespace detail {
inline void require_same_size(const ProbDist& a, const ProbDist& b, const char* op) {
  if (a.size() != b.size())
    throw ShapeError(std::string(op) + ": distributions have " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()) + " classes");
}
} // namespace detail

/// softmax(z / tau), computed with the row maximum subtracted.
inline ProbDist soften(const Vector& logits, double tau) {
  if (!(tau > 0.0)) throw DomainError("soften: temperature must be positive");
  if (logits.size() < 2) throw ShapeError("soften: need at least two classes");
  Vector scaled = logits / tau;
  scaled.array() -= scaled.maxCoeff();
  Vector e = scaled.array().exp();
  return {e / e.sum(), tau};
}

inline ProbDist one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw DomainError("one_hot: label " + std::to_string(label) +
                                          " out of range for " + std::to_string(classes) +
                                          " classes");
  ProbDist d{Vector::Zero(static_cast<Eigen::Index>(classes)), 1.0};
  d.probs(static_cast<Eigen::Index>(label)) = 1.0;
  return d;
}

inline ProbDist uniform(std::size_t classes) {
  return {Vector::Constant(static_cast<Eigen::Index>(classes), 1.0 / static_cast<double>(classes)),
          1.0};
}

/// -sum p log p, with 0 log 0 = 0.
inline double entropy(const ProbDist& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.probs.size(); ++k)
    if (p.probs(k) > 0.0) h -= p.probs(k) * std::log(p.probs(k));
  return h;
}

inline double ce_loss(const ProbDist& target, const ProbDist& pred) {
  detail::require_same_size(target, pred, "ce_loss");
  double ce = 0.0;
  for (Eigen::Index k = 0; k < pred.probs.size(); ++k)
    if (target.probs(k) != 0.0) ce -= target.probs(k) * std::log(std::max(pred.probs(k), kLogClamp));
  return ce;
}

/// KL(reference || pred). Plain sum over classes, no 1/K prefactor.
inline double kl_loss(const ProbDist& reference, const ProbDist& pred) {
  detail::require_same_size(reference, pred, "kl_loss");
  double kl = 0.0;
  for (Eigen::Index k = 0; k < pred.probs.size(); ++k) {
    const double r = reference.probs(k);
    if (r > 0.0) kl += r * (std::log(r) - std::log(std::max(pred.probs(k), kLogClamp)));
  }
  return kl;
}

/// One weighted KL(target || softened prediction) term of a composite loss.
struct KlTerm {
  std::reference_wrapper<const ProbDist> target;
  double weight;
};

/// Loss value and its exact gradient w.r.t. the logits.
///   total = ce_weight * ce + tau^2 * kl,  kl = sum_j weight_j * KL(target_j || p^tau)
struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  Vector logit_grad;
};

/// Composite distillation loss on one sample's logits.
///   d total / dz = ce_weight * (p^1 - y) + sum_j weight_j * tau * (p^tau - target_j)
inline LossBreakdown distill_loss(const Vector& logits, const ProbDist& label, double ce_weight,
                                  std::span<const KlTerm> terms, double tau) {
  const ProbDist hard = soften(logits, 1.0);
  detail::require_same_size(label, hard, "distill_loss");
  LossBreakdown out;
  out.ce = ce_loss(label, hard);
  out.logit_grad = ce_weight * (hard.probs - label.probs);
  if (!terms.empty()) {
    const ProbDist soft = soften(logits, tau);
    for (const auto& term : terms) {
      const ProbDist& target = term.target.get();
      detail::require_same_size(target, soft, "distill_loss");
      out.kl += term.weight * kl_loss(target, soft);
      out.logit_grad += term.weight * tau * (soft.probs - target.probs);
    }
  }
  out.total = ce_weight * out.ce + tau * tau * out.kl;
  return out;
}

inline Vector distill_logit_grad(const ProbDist& p_1, const ProbDist& p_tau, const ProbDist& label,
                                 const ProbDist& target, double weight, double tau) {
  detail::require_same_size(p_1, label, "logit_grad");
  detail::require_same_size(p_tau, target, "logit_grad");
  detail::require_same_size(p_1, p_tau, "logit_grad");
  Vector g = p_1.probs - label.probs;
  g += weight * tau * (p_tau.probs - target.probs);
  return g;
}

/// Student gradient for CE(y, p_s^1) + alpha tau^2 KL(p_t^tau || p_s^tau).
/// `teacher` is the learning-mode or the frozen expert-mode teacher output.
inline Vector student_logit_grad(const ProbDist& teacher, const ProbDist& p_s_1,
                                 const ProbDist& p_s_tau, const ProbDist& y, double alpha,
                                 double tau) {
  return distill_logit_grad(p_s_1, p_s_tau, y, teacher, alpha, tau);
}

/// Teacher gradient for CE(y, p_t^1) + beta tau^2 KL(p_s^tau || p_t^tau).
inline Vector teacher_logit_grad(const ProbDist& p_t_1, const ProbDist& p_t_tau,
                                 const ProbDist& p_s_tau, const ProbDist& y, double beta,
                                 double tau) {
  return distill_logit_grad(p_t_1, p_t_tau, y, p_s_tau, beta, tau);
}

/// Arithmetic mean of two softened predictions.
inline ProbDist ensemble_target(const ProbDist& a, const ProbDist& b) {
  detail::require_same_size(a, b, "ensemble_target");
  Vector m = 0.5 * (a.probs + b.probs);
  if (!(m.minCoeff() >= 0.0) || std::abs(m.sum() - 1.0) > 1e-9)
    throw DomainError("ensemble_target: inputs are not on the probability simplex");
  return {std::move(m), a.temperature};
}

struct DegenerationPoint {
  double lambda;
  double kl;  // KL(p_t || p_s) with p_t = (1 - lambda) y + lambda * uniform
  double ce;  // CE(y, p_s)
};

/// KL-vs-CE pairs as the teacher collapses onto the one-hot label.
inline std::vector<DegenerationPoint> degeneration_curve(const ProbDist& p_s_tau,
                                                         const ProbDist& y,
                                                         std::span<const double> lambdas) {
  detail::require_same_size(p_s_tau, y, "degeneration_curve");
  const ProbDist u = uniform(y.size());
  const double ce = ce_loss(y, p_s_tau);
  std::vector<DegenerationPoint> out;
  out.reserve(lambdas.size());
  for (double lambda : lambdas) {
    if (!(lambda > 0.0 && lambda <= 1.0))
      throw DomainError("degeneration_curve: lambda must lie in (0, 1]");
    const ProbDist teacher{(1.0 - lambda) * y.probs + lambda * u.probs, p_s_tau.temperature};
    out.push_back({lambda, kl_loss(teacher, p_s_tau), ce});
  }
  return out;
}

} // namespace switokd
