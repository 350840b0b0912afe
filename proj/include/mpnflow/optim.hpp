#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mpnflow/layers.hpp"

namespace mpnflow::tk {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit AdamState(AdamOptions o = {}) : options(o) {}
};

/// One bias-corrected Adam update of every parameter in `params` using the
/// gradients accumulated on them. Parameters without a gradient are treated
/// as having a zero gradient. Throws NumericError naming the first
/// parameter group with a non-finite gradient; nothing is updated then.
void adam_step(ParamList& params, AdamState& state);

void zero_grad(ParamList& params);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares the recorded gradients of `loss_fn` against central differences.
/// `loss_fn` must rebuild the computation from the current parameter values
/// each call. Relative error per entry: |ga - gn| / max(1e-8, |ga| + |gn|).
/// `corrupt` (test hook) perturbs the analytic gradient before comparison.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParamList& params,
                           double fd_step = 1e-6, double corrupt = 0.0);

}  // namespace mpnflow::tk
