#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lpgnet/params.hpp"

namespace lpgnet {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t sample_seed = 0;
  /// Parameters for which this returns false are skipped. Empty = check all.
  std::function<bool(const std::string&)> include;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coords_checked = 0;
  std::vector<ParamGradError> per_param;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares the reverse-mode gradient of loss_fn against central differences
/// for the parameters in params. loss_fn must rebuild the loss from the
/// current parameter values on every call and be deterministic; two differing
/// baseline evaluations raise ContractError, as does eps outside [1e-7, 1e-3].
GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                        const GradCheckOptions& options = {});

}  // namespace lpgnet
