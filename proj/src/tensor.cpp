#include "lpgnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "lpgnet/errors.hpp"
#include "lpgnet/rng.hpp"

namespace lpgnet {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor --------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf) throw ContractError("mutable_data() is only available on leaf tensors");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->is_leaf; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }
const char* Tensor::op_name() const { return node_->op; }

std::span<double> OpContext::input_grad(std::size_t i) {
  auto& in = *node_.inputs[i];
  if (!in.requires_grad) return {};
  return in.grad_buffer();
}

Tensor make_op(const char* name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
               BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->is_leaf = false;
  node->op = name;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) {
      node->inputs.push_back(t.defined() ? t.node() : std::make_shared<detail::Node>());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---- tape --------------------------------------------------------------------

ComputationTape ComputationTape::record(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  ComputationTape tape;
  tape.root_ = loss.node();
  if (!loss.requires_grad()) return tape;

  // Iterative post-order DFS: every node appears after all of its inputs.
  std::unordered_set<const detail::Node*> seen{tape.root_.get()};
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(tape.root_, 0);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->inputs.size()) {
      std::shared_ptr<detail::Node> child = top.first->inputs[top.second++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    tape.order_.push_back(std::move(top.first));
    stack.pop_back();
  }
  return tape;
}

void ComputationTape::replay() {
  if (order_.empty()) return;
  for (auto& n : order_) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), 0.0);
  }
  root_->grad_buffer()[0] += 1.0;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node& n = **it;
    if (n.is_leaf || !n.backward) continue;
    OpContext ctx(n);
    n.backward(ctx);
  }
}

void backward(const Tensor& loss) { ComputationTape::record(loss).replay(); }

// ---- helpers -------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(x.shape()));
  }
}

std::size_t last_dim(const Tensor& x, const char* op) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": scalar has no last axis");
  return x.shape().back();
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op(name, x.shape(), std::move(out), {x}, [df](OpContext& c) {
    auto g = c.input_grad(0);
    const auto x = c.input(0);
    const auto y = c.out();
    const auto gy = c.out_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * df(x[i], y[i]);
  });
}

}  // namespace

// ---- elementwise -----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](OpContext& c) {
    const auto gy = c.out_grad();
    for (std::size_t k = 0; k < 2; ++k) {
      auto g = c.input_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](OpContext& c) {
    const auto gy = c.out_grad();
    auto ga = c.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i];
    auto gb = c.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gy[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](OpContext& c) {
    const auto gy = c.out_grad();
    const auto av = c.input(0);
    const auto bv = c.input(1);
    auto ga = c.input_grad(0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    auto gb = c.input_grad(1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  return unary(x, "leaky_relu", [negative_slope](double v) { return v > 0 ? v : negative_slope * v; },
               [negative_slope](double v, double) { return v > 0 ? 1.0 : negative_slope; });
}

Tensor log(const Tensor& x) {
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.numel());
  for (auto& f : factor) f = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor[i];
  return make_op("dropout", x.shape(), std::move(out), {x}, [factor = std::move(factor)](OpContext& c) {
    auto g = c.input_grad(0);
    const auto gy = c.out_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * factor[i];
  });
}

// ---- linear algebra ------------------------------------------------------------

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear");
  const std::size_t m = last_dim(x, "linear");
  const std::size_t n = weight.dim(1);
  if (weight.dim(0) != m) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{n}) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / m;
  Shape out_shape = x.shape();
  out_shape.back() = n;
  std::vector<double> out(rows * n, 0.0);
  const auto xv = x.data();
  const auto wv = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* y = &out[r * n];
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), y);
    for (std::size_t k = 0; k < m; ++k) {
      const double a = xv[r * m + k];
      if (a == 0.0) continue;
      const double* w = &wv[k * n];
      for (std::size_t j = 0; j < n; ++j) y[j] += a * w[j];
    }
  }
  return make_op("linear", std::move(out_shape), std::move(out), {x, weight, bias},
                 [rows, m, n](OpContext& c) {
                   const auto gy = c.out_grad();
                   const auto xv = c.input(0);
                   const auto wv = c.input(1);
                   if (auto gx = c.input_grad(0); !gx.empty()) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t k = 0; k < m; ++k) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < n; ++j) acc += gy[r * n + j] * wv[k * n + j];
                         gx[r * m + k] += acc;
                       }
                     }
                   }
                   if (auto gw = c.input_grad(1); !gw.empty()) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t k = 0; k < m; ++k) {
                         const double a = xv[r * m + k];
                         if (a == 0.0) continue;
                         for (std::size_t j = 0; j < n; ++j) gw[k * n + j] += a * gy[r * n + j];
                       }
                     }
                   }
                   if (auto gb = c.input_grad(2); !gb.empty()) {
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
                   }
                 });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const std::size_t batch = a.dim(0), n = a.dim(1), k = a.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t m = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || bk != k) {
    throw DimensionError("batched_matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + (transpose_b ? " (transposed)" : ""));
  }
  // b element (p, j) of the k x m right operand for batch s.
  auto b_at = [=](std::span<const double> bv, std::size_t s, std::size_t p, std::size_t j) {
    return transpose_b ? bv[(s * m + j) * k + p] : bv[(s * k + p) * m + j];
  };
  std::vector<double> out(batch * n * m, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += av[(s * n + i) * k + p] * b_at(bv, s, p, j);
        out[(s * n + i) * m + j] = acc;
      }
  return make_op("batched_matmul", {batch, n, m}, std::move(out), {a, b},
                 [=](OpContext& c) {
                   const auto gy = c.out_grad();
                   const auto av = c.input(0);
                   const auto bv = c.input(1);
                   auto ga = c.input_grad(0);
                   auto gb = c.input_grad(1);
                   for (std::size_t s = 0; s < batch; ++s)
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < m; ++j) {
                         const double g = gy[(s * n + i) * m + j];
                         if (g == 0.0) continue;
                         for (std::size_t p = 0; p < k; ++p) {
                           if (!ga.empty()) ga[(s * n + i) * k + p] += g * b_at(bv, s, p, j);
                           if (!gb.empty()) {
                             const std::size_t idx =
                                 transpose_b ? (s * m + j) * k + p : (s * k + p) * m + j;
                             gb[idx] += g * av[(s * n + i) * k + p];
                           }
                         }
                       }
                 });
}

// ---- normalisation --------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = last_dim(x, "softmax_lastdim");
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * n];
    double* y = &out[r * n];
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  return make_op("softmax", x.shape(), std::move(out), {x}, [rows, n](OpContext& c) {
    auto g = c.input_grad(0);
    const auto y = c.out();
    const auto gy = c.out_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[r * n + j] * (gy[r * n + j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = last_dim(x, "layer_norm");
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: scale/shift must have shape [" + std::to_string(n) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &xv[r * n];
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  return make_op("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                 [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](OpContext& c) {
                   const auto gy = c.out_grad();
                   const auto gv = c.input(1);
                   auto gx = c.input_grad(0);
                   auto ggamma = c.input_grad(1);
                   auto gbeta = c.input_grad(2);
                   std::vector<double> dxhat(n);
                   for (std::size_t r = 0; r < rows; ++r) {
                     double mean_d = 0.0, mean_dx = 0.0;
                     for (std::size_t j = 0; j < n; ++j) {
                       const double g = gy[r * n + j];
                       if (!ggamma.empty()) ggamma[j] += g * xhat[r * n + j];
                       if (!gbeta.empty()) gbeta[j] += g;
                       dxhat[j] = g * gv[j];
                       mean_d += dxhat[j];
                       mean_dx += dxhat[j] * xhat[r * n + j];
                     }
                     if (gx.empty()) continue;
                     mean_d /= static_cast<double>(n);
                     mean_dx /= static_cast<double>(n);
                     for (std::size_t j = 0; j < n; ++j) {
                       gx[r * n + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * n + j] * mean_dx);
                     }
                   }
                 });
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchStats* stats) {
  require_rank(x, 2, "batch_norm_train");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (rows < 2) throw ContractError("batch_norm_train: batch statistics need at least 2 rows");
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("batch_norm_train: scale/shift must have shape [" + std::to_string(d) + "]");
  }
  const auto xv = x.data();
  std::vector<double> mu(d, 0.0), var(d, 0.0), inv_std(d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) mu[j] += xv[r * d + j];
  for (auto& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) var[j] += (xv[r * d + j] - mu[j]) * (xv[r * d + j] - mu[j]);
  std::vector<double> var_unbiased(d);
  for (std::size_t j = 0; j < d; ++j) {
    var_unbiased[j] = var[j] / static_cast<double>(rows - 1);
    var[j] /= static_cast<double>(rows);
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xv[r * d + j] - mu[j]) * inv_std[j];
      out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
    }
  if (stats) *stats = BatchStats{mu, var, var_unbiased};
  return make_op("batch_norm_train", x.shape(), std::move(out), {x, gamma, beta},
                 [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](OpContext& c) {
                   const auto gy = c.out_grad();
                   const auto gv = c.input(1);
                   auto gx = c.input_grad(0);
                   auto ggamma = c.input_grad(1);
                   auto gbeta = c.input_grad(2);
                   for (std::size_t j = 0; j < d; ++j) {
                     double mean_d = 0.0, mean_dx = 0.0;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double g = gy[r * d + j];
                       if (!ggamma.empty()) ggamma[j] += g * xhat[r * d + j];
                       if (!gbeta.empty()) gbeta[j] += g;
                       mean_d += g * gv[j];
                       mean_dx += g * gv[j] * xhat[r * d + j];
                     }
                     if (gx.empty()) continue;
                     mean_d /= static_cast<double>(rows);
                     mean_dx /= static_cast<double>(rows);
                     for (std::size_t r = 0; r < rows; ++r) {
                       gx[r * d + j] +=
                           inv_std[j] * (gy[r * d + j] * gv[j] - mean_d - xhat[r * d + j] * mean_dx);
                     }
                   }
                 });
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::span<const double> mean, std::span<const double> var, double eps) {
  require_rank(x, 2, "batch_norm_eval");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d} || mean.size() != d || var.size() != d) {
    throw DimensionError("batch_norm_eval: parameters must have " + std::to_string(d) + " entries");
  }
  std::vector<double> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  std::vector<double> xhat(x.numel()), out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xv[r * d + j] - mean[j]) * inv_std[j];
      out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
    }
  return make_op("batch_norm_eval", x.shape(), std::move(out), {x, gamma, beta},
                 [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](OpContext& c) {
                   const auto gy = c.out_grad();
                   const auto gv = c.input(1);
                   auto gx = c.input_grad(0);
                   auto ggamma = c.input_grad(1);
                   auto gbeta = c.input_grad(2);
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t j = 0; j < d; ++j) {
                       const double g = gy[r * d + j];
                       if (!gx.empty()) gx[r * d + j] += g * gv[j] * inv_std[j];
                       if (!ggamma.empty()) ggamma[j] += g * xhat[r * d + j];
                       if (!gbeta.empty()) gbeta[j] += g;
                     }
                 });
}

// ---- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op("sum", {}, {total}, {x}, [](OpContext& c) {
    auto g = c.input_grad(0);
    const double gy = c.out_grad()[0];
    for (auto& v : g) v += gy;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(x.shape()));
  }
  const auto& s = x.shape();
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t len = s[axis];
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  const double inv = 1.0 / static_cast<double>(len);
  for (auto& v : out) v *= inv;
  return make_op("mean_axis", std::move(out_shape), std::move(out), {x}, [=](OpContext& c) {
    auto g = c.input_grad(0);
    const auto gy = c.out_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + l) * inner + i] += gy[o * inner + i] * inv;
  });
}

Tensor sum_lastdim(const Tensor& x) {
  const std::size_t n = last_dim(x, "sum_lastdim");
  const std::size_t rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> out(rows, 0.0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r] += xv[r * n + j];
  return make_op("sum_lastdim", std::move(out_shape), std::move(out), {x}, [rows, n](OpContext& c) {
    auto g = c.input_grad(0);
    const auto gy = c.out_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += gy[r];
  });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_lastdim: no inputs");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t w = last_dim(p, "concat_lastdim");
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
      throw DimensionError("concat_lastdim: leading shapes differ: " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&pv[r * widths[k]], widths[k], &out[r * total + offset]);
    offset += widths[k];
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  return make_op("concat_lastdim", std::move(out_shape), std::move(out), parts,
                 [rows, total, widths](OpContext& c) {
                   const auto gy = c.out_grad();
                   std::size_t offset = 0;
                   for (std::size_t k = 0; k < widths.size(); ++k) {
                     auto g = c.input_grad(k);
                     if (!g.empty()) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < widths[k]; ++j)
                           g[r * widths[k] + j] += gy[r * total + offset + j];
                     }
                     offset += widths[k];
                   }
                 });
}

Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t length) {
  const std::size_t n = last_dim(x, "slice_lastdim");
  if (length == 0 || start + length > n) {
    throw DimensionError("slice_lastdim: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of bounds for shape " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  Shape out_shape = x.shape();
  out_shape.back() = length;
  std::vector<double> out(rows * length);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(&xv[r * n + start], length, &out[r * length]);
  return make_op("slice_lastdim", std::move(out_shape), std::move(out), {x}, [=](OpContext& c) {
    auto g = c.input_grad(0);
    const auto gy = c.out_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < length; ++j) g[r * n + start + j] += gy[r * length + j];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {x}, [](OpContext& c) {
    auto g = c.input_grad(0);
    const auto gy = c.out_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
  });
}

// ---- masking and broadcasting ---------------------------------------------------

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> keep, double value) {
  if (keep.size() != x.numel()) {
    throw DimensionError("masked_fill: mask has " + std::to_string(keep.size()) + " entries for shape " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? x[i] : value;
  std::vector<std::uint8_t> k(keep.begin(), keep.end());
  return make_op("masked_fill", x.shape(), std::move(out), {x}, [k = std::move(k)](OpContext& c) {
    auto g = c.input_grad(0);
    const auto gy = c.out_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (k[i]) g[i] += gy[i];
  });
}

Tensor masked_mean_axis1(const Tensor& x, const Tensor& mask) {
  require_rank(x, 3, "masked_mean_axis1");
  const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
  if (mask.shape() != Shape{batch, len}) {
    throw DimensionError("masked_mean_axis1: mask " + shape_str(mask.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  std::vector<double> inv_count(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double count = 0.0;
    for (std::size_t u = 0; u < len; ++u) count += mask[b * len + u] != 0.0 ? 1.0 : 0.0;
    if (count == 0.0) throw ContractError("masked_mean_axis1: batch row " + std::to_string(b) + " has no valid position");
    inv_count[b] = 1.0 / count;
  }
  std::vector<std::uint8_t> valid(batch * len);
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = mask[i] != 0.0;
  std::vector<double> out(batch * d, 0.0);
  const auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t u = 0; u < len; ++u) {
      if (!valid[b * len + u]) continue;
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += xv[(b * len + u) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv_count[b];
  }
  return make_op("masked_mean_axis1", {batch, d}, std::move(out), {x},
                 [=, valid = std::move(valid), inv_count = std::move(inv_count)](OpContext& c) {
                   auto g = c.input_grad(0);
                   const auto gy = c.out_grad();
                   for (std::size_t b = 0; b < batch; ++b)
                     for (std::size_t u = 0; u < len; ++u) {
                       if (!valid[b * len + u]) continue;
                       for (std::size_t j = 0; j < d; ++j)
                         g[(b * len + u) * d + j] += gy[b * d + j] * inv_count[b];
                     }
                 });
}

Tensor broadcast_axis1(const Tensor& x, std::size_t length) {
  require_rank(x, 2, "broadcast_axis1");
  if (length == 0) throw DimensionError("broadcast_axis1: length must be positive");
  const std::size_t batch = x.dim(0), d = x.dim(1);
  std::vector<double> out(batch * length * d);
  const auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t u = 0; u < length; ++u) std::copy_n(&xv[b * d], d, &out[(b * length + u) * d]);
  return make_op("broadcast_axis1", {batch, length, d}, std::move(out), {x}, [=](OpContext& c) {
    auto g = c.input_grad(0);
    const auto gy = c.out_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t u = 0; u < length; ++u)
        for (std::size_t j = 0; j < d; ++j) g[b * d + j] += gy[(b * length + u) * d + j];
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const std::size_t d = last_dim(x, "scale_rows");
  if (Shape(x.shape().begin(), x.shape().end() - 1) != s.shape()) {
    throw DimensionError("scale_rows: scale " + shape_str(s.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = s.numel();
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] * s[r];
  return make_op("scale_rows", x.shape(), std::move(out), {x, s}, [rows, d](OpContext& c) {
    const auto gy = c.out_grad();
    const auto xv = c.input(0);
    const auto sv = c.input(1);
    auto gx = c.input_grad(0);
    auto gs = c.input_grad(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) {
        if (!gx.empty()) gx[r * d + j] += gy[r * d + j] * sv[r];
        if (!gs.empty()) gs[r] += gy[r * d + j] * xv[r * d + j];
      }
  });
}

Tensor select_lastdim(const Tensor& x, std::span<const int> index) {
  const std::size_t n = last_dim(x, "select_lastdim");
  const std::size_t rows = x.numel() / n;
  if (index.size() != rows) {
    throw DimensionError("select_lastdim: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(rows) + " rows");
  }
  std::vector<int> idx(index.begin(), index.end());
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] < 0) continue;
    if (static_cast<std::size_t>(idx[r]) >= n) {
      throw DimensionError("select_lastdim: index " + std::to_string(idx[r]) + " out of range " + std::to_string(n));
    }
    out[r] = x[r * n + static_cast<std::size_t>(idx[r])];
  }
  return make_op("select_lastdim", Shape(x.shape().begin(), x.shape().end() - 1), std::move(out), {x},
                 [n, idx = std::move(idx)](OpContext& c) {
                   auto g = c.input_grad(0);
                   const auto gy = c.out_grad();
                   for (std::size_t r = 0; r < idx.size(); ++r)
                     if (idx[r] >= 0) g[r * n + static_cast<std::size_t>(idx[r])] += gy[r];
                 });
}

Tensor masked_mean_all(const Tensor& x, std::span<const std::uint8_t> valid) {
  if (valid.size() != x.numel()) {
    throw DimensionError("masked_mean_all: mask has " + std::to_string(valid.size()) + " entries for shape " +
                         shape_str(x.shape()));
  }
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (!valid[i]) continue;
    ++count;
    total += x[i];
  }
  if (count == 0) throw ContractError("masked mean over zero valid entries");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::uint8_t> v(valid.begin(), valid.end());
  return make_op("masked_mean_all", {}, {total * inv}, {x}, [inv, v = std::move(v)](OpContext& c) {
    auto g = c.input_grad(0);
    const double gy = c.out_grad()[0];
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i]) g[i] += gy * inv;
  });
}

}  // namespace lpgnet
