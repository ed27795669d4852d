#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lpgnet/params.hpp"

namespace lpgnet {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2: weight_decay * param is added to the gradient.
  double weight_decay = 0.0;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update of param in place. step counts from 1.
/// Zero-initialises empty moments; ContractError on any length mismatch.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& state, std::size_t step,
                 const AdamOptions& options);

/// Adam over every parameter of a store. Parameters that received no gradient
/// in the last backward pass are left untouched, as are their moments.
class Adam {
 public:
  Adam(ParamStore& params, AdamOptions options);

  void step();
  std::size_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  ParamStore& params_;
  AdamOptions options_;
  std::vector<AdamMoments> moments_;
  std::size_t step_ = 0;
};

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

}  // namespace lpgnet
