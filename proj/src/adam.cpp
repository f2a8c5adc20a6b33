#include "pnnunet/adam.hpp"

#include <cmath>

namespace pnn {

template <typename Scalar>
Adam<Scalar>::Adam(AdamOptions options) : options_(options) {
  if (!(options_.lr > 0)) throw ConfigError("Adam learning rate must be positive");
}

template <typename Scalar>
void Adam<Scalar>::step(ParameterStore<Scalar>& params) {
  for (const auto& [name, p] : params)
    if (!p.grad.all_finite()) throw NumericError("non-finite gradient for parameter " + name);

  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  const Scalar b1 = static_cast<Scalar>(options_.beta1), b2 = static_cast<Scalar>(options_.beta2);
  const Scalar step_size = static_cast<Scalar>(options_.lr / c1);
  const Scalar root_c2 = static_cast<Scalar>(std::sqrt(c2));
  const Scalar eps = static_cast<Scalar>(options_.epsilon);

  for (auto& [name, p] : params) {
    auto [it, fresh] = moments_.try_emplace(name);
    Moments& mo = it->second;
    if (fresh) {
      mo.m = Tensor<Scalar>(p.value.shape());
      mo.v = Tensor<Scalar>(p.value.shape());
    }
    const auto& g = p.grad.array();
    mo.m.array() = b1 * mo.m.array() + (Scalar(1) - b1) * g;
    mo.v.array() = b2 * mo.v.array() + (Scalar(1) - b2) * g.square();
    p.value.array() -= step_size * mo.m.array() / (mo.v.array().sqrt() / root_c2 + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace pnn
