#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trackteller/param_store.hpp"
#include "trackteller/tensor.hpp"

namespace trackteller::numcore {

// Central finite-difference gradient checker. The loss function must
// rebuild its graph from the store's current values on every call.
struct GradCheckFailure {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::vector<GradCheckFailure> failures;
  bool ok() const { return failures.empty(); }
};

inline double rel_error(double a, double b) {
  double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

inline double central_diff(const std::function<double()>& f, double& slot,
                           double eps) {
  double saved = slot;
  slot = saved + eps;
  double up = f();
  slot = saved - eps;
  double down = f();
  slot = saved;
  return (up - down) / (2.0 * eps);
}

// Checks every entry of every registered parameter against central
// differences. Entries that trip a kink at the primary step size are
// retried with a smaller one before being reported. abs_floor treats
// near-zero analytic/numeric pairs as matching.
inline GradCheckReport check_gradients(
    ParamStore& ps, const std::function<Tensor()>& loss_fn, double eps = 1e-4,
    double tol = 1e-3, double abs_floor = 1e-8) {
  GradCheckReport report;
  GradMap analytic = backward(loss_fn(), ps);
  auto value_fn = [&]() { return loss_fn().item(); };
  for (auto& [name, t] : ps) {
    const auto& g = analytic.at(name);
    auto& w = t.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      ++report.checked;
      double num = central_diff(value_fn, w[i], eps);
      if (std::fabs(num - g[i]) <= abs_floor) continue;
      if (rel_error(num, g[i]) < tol) continue;
      double num2 = central_diff(value_fn, w[i], eps * 0.1);
      if (std::fabs(num2 - g[i]) <= abs_floor) continue;
      if (rel_error(num2, g[i]) < tol) continue;
      report.failures.push_back({name, i, g[i], num2, rel_error(num2, g[i])});
    }
  }
  return report;
}

// Same check for a single standalone tensor (unit-test helper).
inline GradCheckReport check_tensor_gradient(
    Tensor& param, const std::function<Tensor()>& loss_fn, double eps = 1e-5,
    double tol = 1e-4, double abs_floor = 1e-9) {
  GradCheckReport report;
  param.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<double> analytic =
      param.grad().empty() ? std::vector<double>(param.size(), 0.0) : param.grad();
  auto value_fn = [&]() { return loss_fn().item(); };
  auto& w = param.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    ++report.checked;
    double num = central_diff(value_fn, w[i], eps);
    if (std::fabs(num - analytic[i]) <= abs_floor) continue;
    if (rel_error(num, analytic[i]) < tol) continue;
    report.failures.push_back(
        {"tensor", i, analytic[i], num, rel_error(num, analytic[i])});
  }
  return report;
}

}  // namespace trackteller::numcore
