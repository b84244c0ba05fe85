#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "switokd/error.hpp"
#include "switokd/nn.hpp"

namespace switokd {

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<double> max_relative_error;  // one per layer
  std::vector<std::size_t> flagged_layers;

  bool passed() const { return flagged_layers.empty(); }
  double worst() const {
    return max_relative_error.empty()
               ? 0.0
               : *std::max_element(max_relative_error.begin(), max_relative_error.end());
  }
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero entries from
/// reporting truncation noise as relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

/// Central differences on every weight and bias, step h * max(1, |theta|).
inline GradCheckReport grad_check(const Network& net,
                                  const std::function<double(const Network&)>& loss,
                                  const Gradients& analytic, double tolerance,
                                  double h = 1e-4) {
  if (analytic.size() != net.layer_count())
    throw ShapeError("grad_check: analytic gradient layer count mismatch");

  Network probe = net;
  const auto evaluate = [&](const Network& n) {
    const double v = loss(n);
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    return v;
  };
  evaluate(probe);

  const auto numeric = [&](double& theta) {
    const double saved = theta;
    const double step = h * std::max(1.0, std::abs(saved));
    theta = saved + step;
    const double up = evaluate(probe);
    theta = saved - step;
    const double down = evaluate(probe);
    theta = saved;
    return (up - down) / (2.0 * step);
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& p = probe.params()[l];
    const auto& a = analytic[l];
    if (a.weight.rows() != p.weight.rows() || a.weight.cols() != p.weight.cols() ||
        a.bias.size() != p.bias.size())
      throw ShapeError("grad_check: analytic gradient shape mismatch at layer " +
                       std::to_string(l));
    double worst = 0.0;
    for (Eigen::Index j = 0; j < p.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < p.weight.rows(); ++i)
        worst = std::max(worst, relative_error(a.weight(i, j), numeric(p.weight(i, j))));
    for (Eigen::Index i = 0; i < p.bias.size(); ++i)
      worst = std::max(worst, relative_error(a.bias(i), numeric(p.bias(i))));
    report.max_relative_error.push_back(worst);
    if (!(worst <= tolerance)) report.flagged_layers.push_back(l);
  }
  return report;
}

} // namespace switokd
