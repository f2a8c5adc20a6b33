#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "pnnunet/rng.hpp"
#include "pnnunet/tensor.hpp"

namespace pnn {

/// Named weights in deterministic (lexicographic) order.
template <typename Scalar>
class ParameterStore {
 public:
  using Map = std::map<std::string, Parameter<Scalar>>;

  Parameter<Scalar>& add(const std::string& name, Shape shape, Index fan_in) {
    auto [it, inserted] = params_.try_emplace(name, std::move(shape), fan_in);
    if (!inserted) throw ConfigError("duplicate parameter name " + name);
    return it->second;
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::int64_t element_count() const {
    std::int64_t total = 0;
    for (const auto& [name, p] : params_) total += p.value.size();
    return total;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.set_zero();
  }

  /// Weights uniform in +-sqrt(1/fan_in), biases zero. Values are drawn in
  /// name order from a single stream.
  void initialize(Rng& rng) {
    for (auto& [name, p] : params_) {
      if (is_bias(name)) {
        p.value.set_zero();
        continue;
      }
      const double bound = std::sqrt(1.0 / static_cast<double>(p.fan_in));
      for (Index i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
  }

  static bool is_bias(const std::string& name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
  }

 private:
  Map params_;
};

}  // namespace pnn
