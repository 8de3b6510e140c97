// Central finite-difference verification of reverse-mode gradients.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "aggcn/tensor.hpp"

namespace aggcn {

struct GradCheckEntry {
  std::string name;
  double max_error = 0.0;   // relative, or absolute for tiny entries
  std::size_t worst_index = 0;
  double analytic = 0.0;    // at the worst entry
  double numeric = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_error = 0.0;
  bool all_ok = true;
};

// Compares the analytic gradient of f against (f(x+eps) - f(x-eps)) / (2 eps)
// entry by entry. Entries where both gradients are below 1e-8 in magnitude are
// compared absolutely; everything else relatively, with the denominator
// floored at 1e-6 (central-difference cancellation noise, about 1e-11 here,
// exceeds 1e-4 of such magnitudes). Report-only: never throws on a
// mismatch.
//
// f must rebuild the loss from the current parameter values on every call and
// must be deterministic.
inline GradCheckReport finite_diff_check(
    const std::function<Tensor()>& f,
    const std::vector<std::pair<std::string, Tensor>>& params,
    double eps = 1e-5, double tol = 1e-4) {
  if (eps <= 0.0) {
    throw contract_error("finite_diff_check: eps must be positive");
  }

  std::vector<Tensor> tensors;
  tensors.reserve(params.size());
  for (const auto& [name, t] : params) tensors.push_back(t);
  zero_grads(tensors);

  Tensor loss = f();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, t] : params) analytic.push_back(t.grad());

  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    GradCheckEntry entry;
    entry.name = params[p].first;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + eps;
      const double up = f().value();
      t.data()[i] = saved - eps;
      const double down = f().value();
      t.data()[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      const double mag = std::max(std::abs(a), std::abs(numeric));
      const double err = mag < 1e-8
                             ? std::abs(a - numeric)
                             : std::abs(a - numeric) / std::max(mag, 1e-6);
      if (err > entry.max_error) {
        entry.max_error = err;
        entry.worst_index = i;
        entry.analytic = a;
        entry.numeric = numeric;
      }
    }
    entry.ok = entry.max_error <= tol;
    report.max_error = std::max(report.max_error, entry.max_error);
    report.all_ok = report.all_ok && entry.ok;
    report.params.push_back(std::move(entry));
  }
  zero_grads(tensors);
  return report;
}

}  // namespace aggcn
