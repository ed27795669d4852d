#include "lpgnet/optim.hpp"

#include <cmath>
#include <string>

#include "lpgnet/errors.hpp"

namespace lpgnet {

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::size_t step,
                 const AdamOptions& o) {
  if (grad.size() != param.size()) {
    throw ContractError("adam: gradient has " + std::to_string(grad.size()) + " entries for " +
                        std::to_string(param.size()) + " parameters");
  }
  if (step == 0) throw ContractError("adam: step counts from 1");
  if (state.m.empty()) state.m.assign(param.size(), 0.0);
  if (state.v.empty()) state.v.assign(param.size(), 0.0);
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw ContractError("adam: moment buffers do not match parameter size");
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + o.weight_decay * param[i];
    state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * g;
    state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
  }
}

Adam::Adam(ParamStore& params, AdamOptions options)
    : params_(params), options_(options), moments_(params.size()) {}

void Adam::step() {
  ++step_;
  const auto& names = params_.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    Tensor& p = params_.get(names[i]);
    if (!p.has_grad()) continue;
    adam_update(p.mutable_data(), p.grad(), moments_[i], step_, options_);
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& n : params.names()) {
    const Tensor& p = params.get(n);
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& n : params.names()) {
      Tensor& p = params.get(n);
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace lpgnet
