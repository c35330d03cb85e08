#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/tensor.hpp"

namespace cgmm {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  std::size_t probed = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = false;
  std::string failure;  // set when a non-finite value was hit

  std::string summary() const {
    std::string s;
    for (const auto& e : entries) {
      s += "  " + e.param + ": max_rel_err=" + std::to_string(e.max_rel_err) +
           " (probed " + std::to_string(e.probed) + ")\n";
    }
    s += pass ? "PASS" : "FAIL";
    if (!failure.empty()) s += " (" + failure + ")";
    return s;
  }
};

/// Compares autodiff gradients against central finite differences.
///
/// `forward` must rebuild the graph from the current parameter values and
/// return a scalar. Each listed parameter is probed element by element (or a
/// strided subset when max_probes_per_param > 0 caps it); the discrepancy is
/// measured as |ad - fd| / max(1, |ad|, |fd|). Non-finite values anywhere
/// fail the report with the offending location.
inline GradCheckReport grad_check(const std::function<Tensor()>& forward,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double h = 1e-5, double tol = 1e-4,
                                  int max_probes_per_param = 0) {
  GradCheckReport report;

  for (auto& [name, p] : params) p.node->requires_grad = true;

  Tensor out = forward();
  if (!std::isfinite(out.item())) {
    report.failure = "non-finite forward value";
    return report;
  }
  for (auto& [name, p] : params) p.node->grad.assign(p.numel(), 0.0);
  out.backward();

  std::vector<std::vector<double>> ad_grads;
  ad_grads.reserve(params.size());
  for (auto& [name, p] : params) {
    p.node->ensure_grad();
    if (!all_finite(p.node->grad)) {
      report.failure = "non-finite autodiff gradient in " + name;
      return report;
    }
    ad_grads.push_back(p.node->grad);
  }

  double global_max = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::string& name = params[pi].first;
    Tensor p = params[pi].second;
    const std::size_t n = p.numel();
    std::size_t stride = 1;
    if (max_probes_per_param > 0 && n > static_cast<std::size_t>(max_probes_per_param)) {
      stride = n / static_cast<std::size_t>(max_probes_per_param);
    }
    GradCheckEntry entry{name, 0.0, 0};
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.data()[i];
      p.data()[i] = orig + h;
      const double fp = forward().item();
      p.data()[i] = orig - h;
      const double fm = forward().item();
      p.data()[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.failure = "non-finite perturbed forward at " + name + "[" + std::to_string(i) + "]";
        report.entries.push_back(entry);
        return report;
      }
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = ad_grads[pi][i];
      const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      entry.probed += 1;
    }
    global_max = std::max(global_max, entry.max_rel_err);
    report.entries.push_back(entry);
  }
  report.max_rel_err = global_max;
  report.pass = global_max < tol;
  return report;
}

}  // namespace cgmm
