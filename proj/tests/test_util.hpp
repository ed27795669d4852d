#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lpgnet/gradcheck.hpp"
#include "lpgnet/params.hpp"
#include "lpgnet/rng.hpp"
#include "lpgnet/tensor.hpp"

namespace lpgnet::testing {

inline std::vector<double> randn(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline Tensor rand_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), randn(n, rng, scale), requires_grad);
}

inline std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

/// Reduces a tensor to a scalar with fixed random weights so that every
/// output coordinate receives a distinct upstream gradient.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed, "weighted_sum");
  return sum(mul(y, Tensor(y.shape(), randn(y.numel(), rng))));
}

/// Central-difference check of f over the given leaves; returns the worst relative error.
inline double grad_error(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> leaves,
                         double eps = 1e-6) {
  ParamStore store;
  std::vector<Tensor> handles;
  for (std::size_t i = 0; i < leaves.size(); ++i) handles.push_back(store.add("x" + std::to_string(i), leaves[i]));
  GradCheckOptions o;
  o.eps = eps;
  return finite_difference_check([&] { return f(handles); }, store, o).max_rel_error;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

// ---- naive oracles over flat row-major arrays ------------------------------------

inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                                        std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0.0L;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<long double>(a[i * k + t]) * b[t * m + j];
      c[i * m + j] = static_cast<double>(s);
    }
  return c;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
  long double mx = -INFINITY;
  for (double v : x) mx = std::max<long double>(mx, v);
  long double z = 0.0L;
  std::vector<long double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(static_cast<long double>(x[i]) - mx);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / z);
  return out;
}

inline double naive_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double naive_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> naive_layer_norm(const std::vector<double>& x, const std::vector<double>& g,
                                            const std::vector<double>& b, double eps = 1e-5) {
  const std::size_t d = g.size();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    long double mu = 0.0L, var = 0.0L;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= d;
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= d;
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = static_cast<double>((x[r * d + j] - mu) / std::sqrt(var + eps) * g[j] + b[j]);
  }
  return out;
}

}  // namespace lpgnet::testing
