#pragma once

#include <functional>

#include "pnnunet/parameters.hpp"
#include "pnnunet/tape.hpp"

namespace pnn::selftest {

/// Builds a scalar loss on a fresh tape from the parameters in the store.
using LossBuilder = std::function<Var(Tape<double>&, ParameterStore<double>&)>;

struct GradCheckResult {
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

double relative_error(double a, double b);

/// Step used for whole-network directional checks.
inline constexpr double kNetworkStep = 1e-7;

/// Evaluates the loss without differentiating.
double evaluate_loss(ParameterStore<double>& params, const LossBuilder& loss);

/// Compares <grad, u> from one backward pass against the central difference
/// (L(p + h u) - L(p - h u)) / 2h for a random unit-scale direction u over
/// every parameter in the store.
GradCheckResult directional_check(ParameterStore<double>& params, const LossBuilder& loss, Rng& rng,
                                  double step = 1e-5);

struct SmoothCheckResult {
  GradCheckResult result;
  /// Directions discarded because a kink lay within one step.
  int redraws = 0;
};

/// directional_check restricted to directions along which the loss is smooth
/// on [-step, step]: the central differences at step and step / 2 must agree
/// to `consistency`, otherwise a leaky-ReLU or max-pool switch lies inside
/// the stencil and a new direction is drawn (at most max_redraws times).
SmoothCheckResult smooth_directional_check(ParameterStore<double>& params, const LossBuilder& loss, Rng& rng,
                                           double step = kNetworkStep, double consistency = 1e-6, int max_redraws = 10);

/// Perturbs every element of every parameter in turn; returns the worst
/// element. Only for small stores.
GradCheckResult elementwise_check(ParameterStore<double>& params, const LossBuilder& loss, double step = 1e-5);

/// Network checks run at a variance-preserving random point: weights uniform
/// in +-sqrt(6 / fan_in), biases in +-0.1. Under the training init the
/// activations of deep stacks shrink towards the leaky-ReLU kink and a
/// central difference straddles it.
void randomize_variance_preserving(ParameterStore<double>& params, Rng& rng);


/// Fills every parameter with uniform values in [lo, hi).
void randomize(ParameterStore<double>& params, Rng& rng, double lo = -1.0, double hi = 1.0);

}  // namespace pnn::selftest
