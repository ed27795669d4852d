#include "lpgnet/params.hpp"

#include <cmath>

#include "lpgnet/errors.hpp"
#include "lpgnet/rng.hpp"

namespace lpgnet {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (tensors_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  if (!value.is_leaf() || !value.requires_grad()) {
    throw ContractError("parameter '" + name + "' must be a leaf that requires grad");
  }
  names_.push_back(name);
  return tensors_.emplace(name, std::move(value)).first->second;
}

Tensor& ParamStore::get(std::string_view name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParamStore::get(std::string_view name) const {
  return const_cast<ParamStore*>(this)->get(name);
}

bool ParamStore::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

std::size_t ParamStore::scalar_count() const { return scalar_count(""); }

std::size_t ParamStore::scalar_count(std::string_view prefix) const {
  std::size_t total = 0;
  for (const auto& [name, t] : tensors_) {
    if (std::string_view(name).starts_with(prefix)) total += t.numel();
  }
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(names_.size());
  for (const auto& n : names_) {
    const auto d = get(n).data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

void ParamStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != names_.size()) throw ContractError("snapshot does not match parameter count");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    auto dst = get(names_[i]).mutable_data();
    if (dst.size() != values[i].size()) throw DimensionError("snapshot size mismatch for '" + names_[i] + "'");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace lpgnet
