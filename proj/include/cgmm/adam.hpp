#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/tensor.hpp"

namespace cgmm {

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// the state survives checkpointing independent of construction order.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step_count = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// One Adam update for a single parameter array, in place.
inline void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                        std::vector<double>& m, std::vector<double>& v,
                        long long step, const AdamState& hp) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
    throw validation_error("adam_update: array size mismatch");
  }
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
    v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
  }
}

/// Applies one optimizer step over every parameter in the store, reading the
/// accumulated gradients. Parameters are visited in name order.
inline void adam_step(ParamStore& params, AdamState& state) {
  state.step_count += 1;
  for (auto& [name, t] : params.map()) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != t.numel()) m.assign(t.numel(), 0.0);
    if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
    if (t.node->grad.size() != t.numel()) t.node->grad.assign(t.numel(), 0.0);
    adam_update(t.data(), t.node->grad, m, v, state.step_count, state);
  }
}

}  // namespace cgmm
