#include "mpnflow/optim.hpp"

#include <cmath>

#include "mpnflow/error.hpp"

namespace mpnflow::tk {

void zero_grad(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void adam_step(ParamList& params, AdamState& state) {
  const AdamOptions& o = state.options;
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.size(), 0.0);
      state.v[i].assign(params[i].tensor.size(), 0.0);
    }
  }
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter group " + p.name);
    }
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    auto theta = t.mutable_values();
    auto grad = t.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size()) {
      throw ShapeError("adam_step: optimizer state does not match parameter " + params[i].name);
    }
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = (grad.empty() ? 0.0 : grad[k]) + o.weight_decay * theta[k];
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g;
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      theta[k] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, ParamList& params,
                           double fd_step, double corrupt) {
  zero_grad(params);
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  GradCheckResult result;
  for (auto& p : params) {
    std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    analytic.resize(p.tensor.size(), 0.0);
    auto theta = p.tensor.mutable_values();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double saved = theta[k];
      theta[k] = saved + fd_step;
      const double up = loss_fn().item();
      theta[k] = saved - fd_step;
      const double down = loss_fn().item();
      theta[k] = saved;
      const double numeric = (up - down) / (2.0 * fd_step);
      const double ga = analytic[k] + corrupt;
      const double err = std::abs(ga - numeric) / std::max(1e-8, std::abs(ga) + std::abs(numeric));
      ++result.checked;
      if (err > result.max_relative_error || !std::isfinite(err)) {
        result.max_relative_error = std::isfinite(err) ? err : INFINITY;
        result.worst_param = p.name;
        result.worst_index = k;
      }
    }
  }
  zero_grad(params);
  return result;
}

}  // namespace mpnflow::tk
