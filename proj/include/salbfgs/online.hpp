#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "salbfgs/cost.hpp"
#include "salbfgs/types.hpp"

namespace salbfgs {

enum class StepSchedule { constant, inv_sqrt };

enum class OnlineLearner { ogd, adagrad };

struct OnlineConfig {
  OnlineLearner learner = OnlineLearner::ogd;
  double eta0 = 0.1;
  StepSchedule schedule = StepSchedule::inv_sqrt;  // OGD only
  double epsilon = 1e-8;                           // ADAGRAD only

  void validate() const {
    if (!(eta0 >= 0.0) || !std::isfinite(eta0))
      throw config_error("eta0 must be finite and >= 0");
    if (!(epsilon > 0.0)) throw config_error("epsilon must be > 0");
  }
};

namespace detail {

// Dense per-example gradient at theta: weighted loss term scattered from the
// sparse features, plus the full l2 term lambda * theta.
inline void example_gradient(const ParameterVector& theta, const Example& ex,
                             const CostConfig& cost, ParameterVector& grad) {
  const std::size_t dim = theta.size();
  grad.assign(dim, 0.0);
  const double lambda = cost.lambda();
  if (lambda > 0.0)
    for (std::size_t d = 0; d < dim; ++d) grad[d] = lambda * theta[d];
  const double z = predict(theta, ex.features);
  const double dz = ex.weight * loss_dz(cost.loss, z, ex.label);
  for (const auto& [index, value] : ex.features.entries)
    grad[index] += dz * value;
}

}  // namespace detail

struct OgdState {
  ParameterVector theta;
  std::uint64_t t = 0;  // examples processed

  double step_size(const OnlineConfig& cfg) const {
    switch (cfg.schedule) {
      case StepSchedule::constant:
        return cfg.eta0;
      case StepSchedule::inv_sqrt:
        return cfg.eta0 / std::sqrt(static_cast<double>(t) + 1.0);
    }
    throw config_error("unknown step schedule");
  }
};

inline void ogd_step(OgdState& state, const Example& ex,
                     const CostConfig& cost, const OnlineConfig& cfg) {
  const double eta = state.step_size(cfg);
  ParameterVector grad;
  detail::example_gradient(state.theta, ex, cost, grad);
  for (std::size_t d = 0; d < state.theta.size(); ++d)
    state.theta[d] -= eta * grad[d];
  ++state.t;
}

struct AdagradState {
  ParameterVector theta;
  ParameterVector accum;  // per-coordinate sum of squared gradients
  std::uint64_t t = 0;
};

// Coordinates with zero gradient are untouched: neither theta nor the
// accumulator moves, so an example carrying no signal is a true no-op.
inline void adagrad_step(AdagradState& state, const Example& ex,
                         const CostConfig& cost, const OnlineConfig& cfg) {
  ParameterVector grad;
  detail::example_gradient(state.theta, ex, cost, grad);
  for (std::size_t d = 0; d < state.theta.size(); ++d) {
    const double g = grad[d];
    if (g == 0.0) continue;
    state.accum[d] += g * g;
    state.theta[d] -= cfg.eta0 * g / std::sqrt(state.accum[d] + cfg.epsilon);
  }
  ++state.t;
}

struct OnlineTrace {
  ParameterVector theta;
  std::vector<double> losses;  // pre-update weighted loss per example
};

// Single pass over the stream in example order. The recorded loss for each
// example is evaluated before the update that consumes it.
inline OnlineTrace run_online(const Stream& stream, std::size_t dim,
                              const CostConfig& cost,
                              const OnlineConfig& cfg) {
  cfg.validate();
  cost.validate();
  OnlineTrace trace;
  trace.theta.assign(dim, 0.0);

  OgdState ogd{trace.theta, 0};
  AdagradState ada{trace.theta, ParameterVector(dim, 0.0), 0};

  for (const Batch& batch : stream.batches) {
    for (const Example& ex : batch.examples) {
      const ParameterVector& theta =
          cfg.learner == OnlineLearner::ogd ? ogd.theta : ada.theta;
      const double z = predict(theta, ex.features);
      trace.losses.push_back(ex.weight * loss_value(cost.loss, z, ex.label));
      if (cfg.learner == OnlineLearner::ogd)
        ogd_step(ogd, ex, cost, cfg);
      else
        adagrad_step(ada, ex, cost, cfg);
    }
  }
  trace.theta =
      cfg.learner == OnlineLearner::ogd ? std::move(ogd.theta)
                                        : std::move(ada.theta);
  return trace;
}

}  // namespace salbfgs
