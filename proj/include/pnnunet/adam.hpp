#pragma once

#include <map>
#include <string>

#include "pnnunet/parameters.hpp"

namespace pnn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are keyed by parameter name and created on
/// the first step.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  /// Applies one update to every parameter in the store from its grad.
  /// A non-finite gradient aborts the step before any weight changes.
  void step(ParameterStore<Scalar>& params);

  long steps() const { return step_count_; }
  const AdamOptions& options() const { return options_; }
  const Tensor<Scalar>& first_moment(const std::string& name) const { return moments_.at(name).m; }
  const Tensor<Scalar>& second_moment(const std::string& name) const { return moments_.at(name).v; }

 private:
  struct Moments {
    Tensor<Scalar> m, v;
  };
  AdamOptions options_;
  long step_count_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace pnn
