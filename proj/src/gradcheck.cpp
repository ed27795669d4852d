#include "lpgnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lpgnet/errors.hpp"
#include "lpgnet/rng.hpp"

namespace lpgnet {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                        const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-3)) {
    throw ContractError("finite-difference eps must lie in [1e-7, 1e-3]");
  }

  params.zero_grad();
  const Tensor loss = loss_fn();
  const double base = loss.item();
  const double again = loss_fn().item();
  if (base != again && !(std::isnan(base) && std::isnan(again))) {
    throw ContractError("loss function is not deterministic: two baseline evaluations differ");
  }
  backward(loss);

  GradCheckReport report;
  Rng sampler(options.sample_seed, "gradcheck.sample");
  for (const auto& name : params.names()) {
    if (options.include && !options.include(name)) continue;
    Tensor& p = params.get(name);
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.numel(), 0.0);

    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      // Partial Fisher-Yates: first k entries become a uniform sample.
      for (std::size_t i = 0; i < options.max_coords_per_param; ++i) {
        std::swap(coords[i], coords[i + sampler.below(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    ParamGradError entry{name, 0.0, coords.size()};
    auto values = p.mutable_data();
    for (std::size_t i : coords) {
      const double original = values[i];
      values[i] = original + options.eps;
      const double plus = loss_fn().item();
      values[i] = original - options.eps;
      const double minus = loss_fn().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
    }
    report.coords_checked += coords.size();
    if (report.worst_param.empty() || entry.max_rel_error > report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst_param = name;
    }
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace lpgnet
