#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "switokd/error.hpp"
#include "switokd/nn.hpp"

namespace switokd {

enum class OptimizerKind { sgd, adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.01;
  double momentum = 0.9;  // SGD momentum, or Adam's first-moment decay
  double weight_decay = 0.0;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Settings plus the per-parameter accumulators, shaped like the network.
struct OptimizerState {
  OptimizerSettings settings;
  double learning_rate = 0.0;  // current rate, after any schedule
  std::uint64_t steps = 0;
  Gradients first;   // SGD velocity / Adam m
  Gradients second;  // Adam v (unused by SGD)

  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    if (a.learning_rate != b.learning_rate || a.steps != b.steps ||
        a.first.size() != b.first.size() || a.second.size() != b.second.size())
      return false;
    for (std::size_t l = 0; l < a.first.size(); ++l)
      if (a.first[l].weight != b.first[l].weight || a.first[l].bias != b.first[l].bias)
        return false;
    for (std::size_t l = 0; l < a.second.size(); ++l)
      if (a.second[l].weight != b.second[l].weight || a.second[l].bias != b.second[l].bias)
        return false;
    return true;
  }
};

inline OptimizerState make_optimizer(const Network& net, const OptimizerSettings& settings) {
  if (!(settings.learning_rate >= 0.0)) throw DomainError("learning rate must be non-negative");
  if (!(settings.momentum >= 0.0 && settings.momentum < 1.0))
    throw DomainError("momentum must lie in [0, 1)");
  if (!(settings.weight_decay >= 0.0)) throw DomainError("weight decay must be non-negative");
  OptimizerState s;
  s.settings = settings;
  s.learning_rate = settings.learning_rate;
  s.first = net.zeros_like();
  if (settings.kind == OptimizerKind::adam) s.second = net.zeros_like();
  return s;
}

namespace detail {

template <class T>
void sgd_update(T& theta, const T& g, T& velocity, const OptimizerState& opt) {
  const auto& cfg = opt.settings;
  if (cfg.weight_decay != 0.0) {
    velocity = cfg.momentum * velocity + (g + cfg.weight_decay * theta);
  } else {
    velocity = cfg.momentum * velocity + g;
  }
  theta -= opt.learning_rate * velocity;
}

template <class T>
void adam_update(T& theta, const T& g, T& m, T& v, const OptimizerState& opt) {
  const auto& cfg = opt.settings;
  const auto t = static_cast<double>(opt.steps);
  const double c1 = 1.0 - std::pow(cfg.momentum, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const auto gd = (g + cfg.weight_decay * theta).eval();
  m = cfg.momentum * m + (1.0 - cfg.momentum) * gd;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * gd.cwiseAbs2();
  theta.array() -= opt.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
}

} // namespace detail

/// One optimizer step in place. Validates every gradient before touching anything,
/// so a NumericError leaves both network and state unchanged.
inline void step(Network& net, const Gradients& grads, OptimizerState& opt) {
  if (grads.size() != net.layer_count() || opt.first.size() != net.layer_count())
    throw ShapeError("step: gradient/accumulator layer count does not match network");
  for (std::size_t l = 0; l < grads.size(); ++l) {
    const auto& p = net.params()[l];
    if (grads[l].weight.rows() != p.weight.rows() || grads[l].weight.cols() != p.weight.cols() ||
        grads[l].bias.size() != p.bias.size())
      throw ShapeError("step: gradient shape mismatch at layer " + std::to_string(l));
    if (!grads[l].weight.allFinite() || !grads[l].bias.allFinite())
      throw NumericError("step: non-finite gradient at layer " + std::to_string(l) + " (" +
                         describe(net.specs()[l]) + ")");
  }
  ++opt.steps;
  for (std::size_t l = 0; l < grads.size(); ++l) {
    auto& p = net.params()[l];
    if (opt.settings.kind == OptimizerKind::sgd) {
      detail::sgd_update(p.weight, grads[l].weight, opt.first[l].weight, opt);
      detail::sgd_update(p.bias, grads[l].bias, opt.first[l].bias, opt);
    } else {
      detail::adam_update(p.weight, grads[l].weight, opt.first[l].weight, opt.second[l].weight,
                          opt);
      detail::adam_update(p.bias, grads[l].bias, opt.first[l].bias, opt.second[l].bias, opt);
    }
  }
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

} // namespace switokd
