#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lpgnet/tensor.hpp"

namespace lpgnet {

class Rng;

/// Learnable tensors keyed by canonical dotted names, kept in registration order.
class ParamStore {
 public:
  /// Registers a leaf; throws ContractError on a duplicate name.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  /// Total number of learnable scalars.
  std::size_t scalar_count() const;
  /// Scalars held by parameters whose name starts with prefix.
  std::size_t scalar_count(std::string_view prefix) const;

  void zero_grad();

  /// Deep copy of every parameter's values, in registration order.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor, std::less<>> tensors_;
};

/// Non-learnable state such as batch-norm running statistics.
using BufferStore = std::map<std::string, std::vector<double>, std::less<>>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace lpgnet
