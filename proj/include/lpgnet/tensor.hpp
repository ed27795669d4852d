#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lpgnet {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
class OpContext;
using BackwardFn = std::function<void(OpContext&)>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional gradient.
///
/// A Tensor is a handle: copies share the same storage and autodiff node.
/// Values produced by ops are never modified after creation; only leaves
/// (parameters) may be mutated in place, and only between forward passes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable storage; only valid on leaves.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient buffer; empty span if no backward pass has reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;
  const char* op_name() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op(const char*, Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);

  std::shared_ptr<detail::Node> node_;
};

/// View handed to a backward function: output values/gradient and writable
/// gradient buffers of the inputs that require one.
class OpContext {
 public:
  explicit OpContext(detail::Node& node) : node_(node) {}

  std::span<const double> out() const { return node_.data; }
  std::span<const double> out_grad() const { return node_.grad; }
  std::span<const double> input(std::size_t i) const { return node_.inputs[i]->data; }
  const Shape& input_shape(std::size_t i) const { return node_.inputs[i]->shape; }
  bool needs_grad(std::size_t i) const { return node_.inputs[i]->requires_grad; }
  /// Gradient accumulator of input i; empty span when that input needs none.
  std::span<double> input_grad(std::size_t i);

 private:
  detail::Node& node_;
};

/// Builds an op result. The backward closure is retained only if at least one
/// input requires a gradient.
Tensor make_op(const char* name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
               BackwardFn backward);

/// Ordered record of the ops that lead to a scalar loss. Replaying it in
/// reverse accumulates the gradient of every requires_grad leaf reachable
/// from the loss.
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& loss);

  /// Seeds d(loss)/d(loss) = 1 and runs every adjoint in reverse order.
  /// Intermediate gradients are reset; leaf gradients accumulate.
  void replay();
  std::size_t size() const { return order_.size(); }

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<std::shared_ptr<detail::Node>> order_;  // topological, inputs first
};

/// Reverse-mode pass from a scalar. Throws ContractError for non-scalars.
void backward(const Tensor& loss);

// ---- elementwise arithmetic (identical shapes) --------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// ---- activations ----------------------------------------------------------------

Tensor sigmoid(const Tensor& x);
/// Exact Gaussian-CDF form, 0.5 x (1 + erf(x / sqrt 2)).
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.01);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

/// Inverted dropout. In eval mode (training == false) returns x unchanged.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

// ---- linear algebra -------------------------------------------------------------

/// y = x W + b over the last axis. x: [..., m], W: [m, n], b: [n] or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor{});
/// a: [B, n, k]; b: [B, k, m], or [B, m, k] when transpose_b.
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// ---- normalisation ---------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x);
/// Normalises each last-axis slice; variance floored by eps.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;           // biased, used for normalisation
  std::vector<double> var_unbiased;  // used for running-stat updates
};

/// Batch normalisation of x: [N, d] over axis 0 using the batch's own statistics.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        BatchStats* stats = nullptr);
/// Batch normalisation of x: [N, d] with fixed statistics.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::span<const double> mean, std::span<const double> var, double eps);

// ---- reductions and reshaping ------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis; the axis is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor sum_lastdim(const Tensor& x);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor slice_lastdim(const Tensor& x, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);

// ---- masking and broadcasting ------------------------------------------------------

/// Entries with keep[i] == 0 are replaced by value (and receive no gradient).
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> keep, double value);
/// x: [B, U, d], mask: [B, U] of 0/1 -> [B, d]; mean over valid positions only.
Tensor masked_mean_axis1(const Tensor& x, const Tensor& mask);
/// x: [B, d] -> [B, U, d] by repetition along a new axis 1.
Tensor broadcast_axis1(const Tensor& x, std::size_t length);
/// x: [..., d], s: [...] -> x scaled row-wise by s.
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// x: [..., C], index: one entry per row, negative entries yield 0 -> [...].
Tensor select_lastdim(const Tensor& x, std::span<const int> index);
/// Mean of the entries of x with valid[i] != 0; ContractError if none are valid.
Tensor masked_mean_all(const Tensor& x, std::span<const std::uint8_t> valid);

}  // namespace lpgnet
