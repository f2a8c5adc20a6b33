#include "pnnunet/selftest/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pnn::selftest {

double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

double evaluate_loss(ParameterStore<double>& params, const LossBuilder& loss) {
  Tape<double> tape;
  return tape.value(loss(tape, params))[0];
}

namespace {

std::map<std::string, Tensor<double>> analytic_gradients(ParameterStore<double>& params, const LossBuilder& loss) {
  params.zero_grad();
  Tape<double> tape;
  tape.backward(loss(tape, params));
  std::map<std::string, Tensor<double>> grads;
  for (auto& [name, p] : params) grads.emplace(name, p.grad);
  return grads;
}

}  // namespace

GradCheckResult directional_check(ParameterStore<double>& params, const LossBuilder& loss, Rng& rng, double step) {
  const auto grads = analytic_gradients(params, loss);
  std::map<std::string, Tensor<double>> direction;
  double analytic = 0;
  for (auto& [name, p] : params) {
    Tensor<double> u(p.value.shape());
    for (Index i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1.0, 1.0);
    analytic += (grads.at(name).array() * u.array()).sum();
    direction.emplace(name, std::move(u));
  }
  auto shift = [&](double amount) {
    for (auto& [name, p] : params) p.value.array() += amount * direction.at(name).array();
  };
  shift(step);
  const double plus = evaluate_loss(params, loss);
  shift(-2 * step);
  const double minus = evaluate_loss(params, loss);
  shift(step);
  const double numeric = (plus - minus) / (2 * step);
  return {analytic, numeric, relative_error(analytic, numeric)};
}

SmoothCheckResult smooth_directional_check(ParameterStore<double>& params, const LossBuilder& loss, Rng& rng,
                                           double step, double consistency, int max_redraws) {
  const auto grads = analytic_gradients(params, loss);
  SmoothCheckResult out;
  for (;; ++out.redraws) {
    std::map<std::string, Tensor<double>> direction;
    double analytic = 0;
    for (auto& [name, p] : params) {
      Tensor<double> u(p.value.shape());
      for (Index i = 0; i < u.size(); ++i) u[i] = rng.uniform(-1.0, 1.0);
      analytic += (grads.at(name).array() * u.array()).sum();
      direction.emplace(name, std::move(u));
    }
    const auto central = [&](double h) {
      const auto at = [&](double amount) {
        for (auto& [name, p] : params) p.value.array() += amount * direction.at(name).array();
        const double v = evaluate_loss(params, loss);
        for (auto& [name, p] : params) p.value.array() -= amount * direction.at(name).array();
        return v;
      };
      return (at(h) - at(-h)) / (2 * h);
    };
    const double wide = central(step), narrow = central(step / 2);
    out.result = {analytic, narrow, relative_error(analytic, narrow)};
    if (relative_error(wide, narrow) <= consistency || out.redraws >= max_redraws) return out;
  }
}

GradCheckResult elementwise_check(ParameterStore<double>& params, const LossBuilder& loss, double step) {
  const auto grads = analytic_gradients(params, loss);
  GradCheckResult worst;
  for (auto& [name, p] : params) {
    for (Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double plus = evaluate_loss(params, loss);
      p.value[i] = saved - step;
      const double minus = evaluate_loss(params, loss);
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      const double analytic = grads.at(name)[i];
      const double err = relative_error(analytic, numeric);
      if (err >= worst.rel_error) worst = {analytic, numeric, err};
    }
  }
  return worst;
}

void randomize(ParameterStore<double>& params, Rng& rng, double lo, double hi) {
  for (auto& [name, p] : params)
    for (Index i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(lo, hi);
}

void randomize_variance_preserving(ParameterStore<double>& params, Rng& rng) {
  for (auto& [name, p] : params) {
    const double bound = ParameterStore<double>::is_bias(name) ? 0.1 : std::sqrt(6.0 / static_cast<double>(p.fan_in));
    for (Index i = 0; i < p.value.size(); ++i) p.value[i] = rng.uniform(-bound, bound);
  }
}

}  // namespace pnn::selftest
