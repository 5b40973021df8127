#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mimic/tensor.hpp"

namespace mimic {

// Result of comparing reverse-mode gradients against central finite
// differences. One entry per input; inputs that do not require gradients get
// no entry.
struct GradCheckReport {
  std::vector<std::optional<double>> max_rel_error;

  double worst() const {
    double w = 0.0;
    for (const auto& e : max_rel_error)
      if (e) w = std::max(w, *e);
    return w;
  }

  bool passed(double tol) const { return worst() < tol; }
};

// Checks an operation (any callable mapping the input list to a scalar
// tensor) in 64-bit mode. Central differences with the given step; relative
// error uses a small floor so near-zero gradients stay comparable.
inline GradCheckReport check_gradients(
    const std::function<TensorT<double>(std::vector<TensorT<double>>&)>& op,
    std::vector<TensorT<double>> inputs, double step = 1e-5) {
  TensorT<double> out = op(inputs);
  if (out.size() != 1) {
    throw Error(ErrorKind::dimension, "check_gradients: operation must produce a scalar");
  }
  if (!out.requires_grad) {
    throw Error(ErrorKind::internal, "check_gradients: no input requires gradients");
  }
  GraphT<double> graph;
  graph.backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) analytic.push_back(in.grad ? *in.grad : std::vector<double>{});

  GradCheckReport report;
  report.max_rel_error.resize(inputs.size());
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (!inputs[t].requires_grad) continue;
    double worst = 0.0;
    auto& values = *inputs[t].data;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = op(inputs).at(std::size_t{0});
      values[i] = saved - step;
      const double down = op(inputs).at(std::size_t{0});
      values[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double ad = analytic[t][i];
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-4});
      worst = std::max(worst, std::abs(fd - ad) / denom);
    }
    report.max_rel_error[t] = worst;
  }
  return report;
}

}  // namespace mimic
