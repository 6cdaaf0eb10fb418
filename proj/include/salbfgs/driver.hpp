#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "salbfgs/cost.hpp"
#include "salbfgs/lbfgs.hpp"
#include "salbfgs/reservoir.hpp"
#include "salbfgs/rng.hpp"
#include "salbfgs/types.hpp"
#include "salbfgs/vec.hpp"

namespace salbfgs {

enum class MismatchMode { absolute, thresholded };

// Pointwise prediction mismatch. In absolute mode this is |theta'x - y| with
// the raw linear score; in thresholded mode it is the 0/1 error of the rule
// "predict 1 iff theta'x > 0.5".
inline double example_mismatch(const ParameterVector& theta, const Example& ex,
                               MismatchMode mode) {
  const double z = predict(theta, ex.features);
  switch (mode) {
    case MismatchMode::absolute:
      return std::fabs(z - static_cast<double>(ex.label));
    case MismatchMode::thresholded:
      return (z > 0.5) != (ex.label > 0) ? 1.0 : 0.0;
  }
  throw config_error("unknown mismatch mode");
}

// Exact mismatch statistic: mean pointwise mismatch over all examples in the
// given batches.
inline double mismatch(std::span<const Batch> batches,
                       const ParameterVector& theta,
                       MismatchMode mode = MismatchMode::absolute) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const Batch& batch : batches) {
    for (const Example& ex : batch.examples)
      sum += example_mismatch(theta, ex, mode);
    count += batch.examples.size();
  }
  if (count == 0)
    throw undefined_metric_error("mismatch over an empty example set");
  return sum / static_cast<double>(count);
}

// History of per-batch mismatch values with running (Welford) moments. sigma
// is the population standard deviation of everything pushed so far.
class MismatchHistory {
 public:
  void push(double value) {
    if (!std::isfinite(value))
      throw numeric_error("mismatch value is not finite");
    values_.push_back(value);
    const double delta = value - mean_;
    mean_ += delta / static_cast<double>(values_.size());
    m2_ += delta * (value - mean_);
  }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  const std::vector<double>& values() const { return values_; }
  double back() const {
    if (values_.empty()) throw undefined_metric_error("empty history");
    return values_.back();
  }

  double sigma() const {
    if (values_.empty()) throw undefined_metric_error("empty history");
    const double var = m2_ / static_cast<double>(values_.size());
    return var > 0.0 ? std::sqrt(var) : 0.0;
  }

 private:
  std::vector<double> values_;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Drift trigger: retrain when the new mismatch exceeds the previous one by
// strictly more than sigma.
inline bool should_retrain(double i_new, double i_old, double sigma) {
  return i_new - i_old > sigma;
}

struct SampleSizes {
  std::size_t m_old = 0;
  std::size_t m_new = 0;
};

struct SamplerConfig {
  std::size_t m_max = 100000;
  std::size_t m_old_min = 100;
  std::size_t reservoir_capacity = 200000;

  void validate() const {
    if (m_max < 1) throw config_error("m_max must be >= 1");
    if (m_old_min < 1) throw config_error("m_old_min must be >= 1");
    if (reservoir_capacity < 1)
      throw config_error("reservoir capacity must be >= 1");
  }
};

// M_new = min(batch size, m_max); M_old = ceil(M_new * sigma / delta),
// clamped from below by m_old_min and from above by what the reservoir
// holds. Requires a genuine trigger (delta > 0); a larger drift therefore
// pulls fewer old examples into the retraining set.
inline SampleSizes choose_sample_sizes(double delta, double sigma,
                                       std::size_t m_new_batch,
                                       std::size_t reservoir_occupancy,
                                       const SamplerConfig& cfg) {
  cfg.validate();
  if (!(delta > 0.0)) throw config_error("delta must be > 0");
  if (!(sigma >= 0.0)) throw config_error("sigma must be >= 0");
  SampleSizes sizes;
  sizes.m_new = std::min(m_new_batch, cfg.m_max);
  const double raw =
      std::ceil(static_cast<double>(sizes.m_new) * sigma / delta);
  std::size_t m_old = raw >= static_cast<double>(reservoir_occupancy)
                          ? reservoir_occupancy
                          : static_cast<std::size_t>(raw);
  m_old = std::max(m_old, cfg.m_old_min);
  m_old = std::min(m_old, reservoir_occupancy);
  sizes.m_old = m_old;
  return sizes;
}

// Uniform subsample of m_old items from the pool of past examples followed
// by m_new items from the new batch, both without replacement.
inline std::vector<Example> subsample(std::span<const Example> old_pool,
                                      const Batch& new_batch,
                                      const SampleSizes& sizes,
                                      std::uint64_t seed) {
  if (sizes.m_old > old_pool.size())
    throw config_error("m_old exceeds the old-example pool");
  if (sizes.m_new > new_batch.examples.size())
    throw config_error("m_new exceeds the new batch");
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(sizes.m_old + sizes.m_new);
  for (std::size_t i :
       sample_without_replacement(old_pool.size(), sizes.m_old, rng))
    out.push_back(old_pool[i]);
  for (std::size_t i : sample_without_replacement(new_batch.examples.size(),
                                                  sizes.m_new, rng))
    out.push_back(new_batch.examples[i]);
  return out;
}

struct DriverConfig {
  CostConfig cost;
  LbfgsConfig lbfgs;
  SamplerConfig sampler;
  std::size_t memory_capacity = 10;
  MismatchMode mode = MismatchMode::absolute;
  std::uint64_t seed = 42;
  bool reset_memory = false;  // drop curvature memory at each retrain
  EvalPlan plan;

  void validate() const {
    cost.validate();
    lbfgs.validate();
    sampler.validate();
  }
};

struct DriverState {
  ParameterVector theta;
  CurvatureMemory memory{10};
  MismatchHistory history;
  ReservoirSampler<Example> reservoir{1, 0};
  std::int64_t t = -1;  // newest processed batch index
  std::uint64_t past_examples = 0;
  std::uint64_t retrains = 0;
  std::uint64_t grad_evals = 0;
  // grad_evals weighted by training-set size: total per-example gradient work.
  std::uint64_t example_grad_evals = 0;
  bool last_converged = true;
};

inline DriverState make_driver_state(std::size_t dim,
                                     const DriverConfig& cfg) {
  cfg.validate();
  DriverState state;
  state.theta.assign(dim, 0.0);
  state.memory = CurvatureMemory(cfg.memory_capacity);
  state.reservoir = ReservoirSampler<Example>(
      cfg.sampler.reservoir_capacity, derive_seed(cfg.seed, 0x7265737672ull));
  return state;
}

namespace detail {

// Mismatch over all past examples plus the incoming batch, with the past
// contribution estimated from the reservoir: the reservoir mean stands in
// for the mean over all N past examples, so the estimate is
// (N * reservoir_mean + new_sum) / (N + m_new). While the reservoir has not
// yet evicted anything this is exact.
inline double mismatch_estimate(const DriverState& state,
                                const ParameterVector& theta,
                                const Batch& new_batch,
                                const DriverConfig& cfg) {
  if (new_batch.examples.empty())
    throw undefined_metric_error("mismatch over an empty batch");
  double new_sum = 0.0;
  for (const Example& ex : new_batch.examples)
    new_sum += example_mismatch(theta, ex, cfg.mode);
  const double n_past = static_cast<double>(state.past_examples);
  double past_sum = 0.0;
  if (state.past_examples > 0) {
    double reservoir_sum = 0.0;
    for (const Example& ex : state.reservoir.items())
      reservoir_sum += example_mismatch(theta, ex, cfg.mode);
    past_sum =
        n_past * (reservoir_sum / static_cast<double>(state.reservoir.size()));
  }
  return (past_sum + new_sum) /
         (n_past + static_cast<double>(new_batch.examples.size()));
}

}  // namespace detail

struct RetrainPlan {
  double i_before = 0.0;
  double delta = 0.0;
  double sigma = 0.0;
  bool forced = false;     // cold start: fewer than two history entries
  bool triggered = false;  // delta > sigma
  bool retrain = false;
  SampleSizes sizes;
};

namespace detail {

inline RetrainPlan plan_retrain(const DriverState& state, const Batch& batch,
                                const DriverConfig& cfg) {
  RetrainPlan plan;
  plan.i_before = mismatch_estimate(state, state.theta, batch, cfg);
  plan.forced = state.history.size() < 2;
  if (!state.history.empty()) {
    plan.delta = plan.i_before - state.history.back();
    plan.sigma = state.history.sigma();
    plan.triggered = should_retrain(plan.i_before, state.history.back(),
                                    plan.sigma);
  }
  plan.retrain = plan.forced || plan.triggered;

  if (state.t < 0) {
    // First batch: train on everything, there is no past to sample.
    plan.sizes = {0, batch.examples.size()};
    return plan;
  }
  const std::size_t occupancy = state.reservoir.size();
  if (plan.triggered) {
    plan.sizes = choose_sample_sizes(plan.delta, plan.sigma,
                                     batch.examples.size(), occupancy,
                                     cfg.sampler);
  } else {
    // No genuine trigger (cold-start retrain, or sizing a hypothetical
    // retrain for the dispersion check): treat the ratio as 1.
    SampleSizes sizes;
    sizes.m_new = std::min(batch.examples.size(), cfg.sampler.m_max);
    sizes.m_old = std::min(std::max(sizes.m_new, cfg.sampler.m_old_min),
                           occupancy);
    plan.sizes = sizes;
  }
  return plan;
}

}  // namespace detail

// Read-only preview of the decision process_batch would make for this batch.
inline RetrainPlan peek_retrain(const DriverState& state, const Batch& batch,
                                const DriverConfig& cfg) {
  return detail::plan_retrain(state, batch, cfg);
}

struct BatchRecord {
  std::size_t t = 0;
  double i_before = 0.0;
  double i_after = 0.0;
  bool retrained = false;
  std::size_t m_old = 0;
  std::size_t m_new = 0;
  std::size_t grad_evals = 0;
  double seconds = 0.0;
};

// Processes one batch: estimate the mismatch, decide whether to retrain,
// optionally subsample and run warm-started L-BFGS, then fold the batch into
// the history and the reservoir. Batches must arrive with contiguous time
// indices.
inline BatchRecord process_batch(DriverState& state, const Batch& batch,
                                 const DriverConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  const std::int64_t expected = state.t + 1;
  if (static_cast<std::int64_t>(batch.time_index) != expected)
    throw sequencing_error("expected batch " + std::to_string(expected) +
                           ", got " + std::to_string(batch.time_index));
  if (batch.examples.empty())
    throw config_error("batch " + std::to_string(batch.time_index) +
                       " is empty");

  const RetrainPlan plan = detail::plan_retrain(state, batch, cfg);

  BatchRecord record;
  record.t = batch.time_index;
  record.i_before = plan.i_before;

  if (plan.retrain) {
    std::vector<Example> training_set;
    if (state.t < 0) {
      training_set = batch.examples;
    } else {
      training_set =
          subsample(std::span<const Example>(state.reservoir.items()), batch,
                    plan.sizes, derive_seed(cfg.seed, batch.time_index + 1));
    }
    const std::size_t training_size = training_set.size();
    CostOracle oracle =
        make_examples_oracle(std::move(training_set), cfg.cost, cfg.plan);
    CurvatureMemory memory =
        cfg.reset_memory ? CurvatureMemory(cfg.memory_capacity)
                         : state.memory;
    OptimizeResult result =
        minimize(oracle, state.theta, std::move(memory), cfg.lbfgs);
    state.theta = std::move(result.theta);
    state.memory = std::move(result.memory);
    state.last_converged = result.converged;
    state.grad_evals += result.grad_evals;
    state.example_grad_evals += result.grad_evals * training_size;
    ++state.retrains;
    record.retrained = true;
    record.m_old = plan.sizes.m_old;
    record.m_new = plan.sizes.m_new;
    record.grad_evals = result.grad_evals;
    record.i_after = detail::mismatch_estimate(state, state.theta, batch, cfg);
  } else {
    record.i_after = plan.i_before;
  }

  state.history.push(record.i_after);
  for (const Example& ex : batch.examples) state.reservoir.observe(ex);
  state.past_examples += batch.examples.size();
  state.t = batch.time_index;

  record.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return record;
}

struct StreamResult {
  DriverState state;
  std::vector<BatchRecord> records;
};

inline StreamResult run_stream(const Stream& stream, std::size_t dim,
                               const DriverConfig& cfg) {
  validate_stream(stream);
  StreamResult result;
  result.state = make_driver_state(dim, cfg);
  result.records.reserve(stream.batches.size());
  for (const Batch& batch : stream.batches)
    result.records.push_back(process_batch(result.state, batch, cfg));
  return result;
}

struct SamplingInstance {
  std::uint64_t seed = 0;
  ParameterVector theta;
  double heldout_mismatch = 0.0;
  bool converged = false;
};

struct DispersionReport {
  std::vector<SamplingInstance> instances;
  double dispersion = 0.0;  // max pairwise distance over mean solution norm
};

// Observational check of subsampling stability: repeat the retrain the
// driver would perform on this batch under several subsample seeds and
// compare the solutions. The driver state is not modified. Held-out
// mismatch is measured on the new-batch examples left out of each training
// subsample (the whole batch when nothing is left out).
inline DispersionReport parallel_samplings(const DriverState& state,
                                           const Batch& batch,
                                           std::span<const std::uint64_t> seeds,
                                           const DriverConfig& cfg) {
  cfg.validate();
  const RetrainPlan plan = detail::plan_retrain(state, batch, cfg);

  DispersionReport report;
  for (const std::uint64_t seed : seeds) {
    std::vector<Example> training_set;
    std::vector<bool> picked(batch.examples.size(), false);
    if (state.t < 0) {
      training_set = batch.examples;
      picked.assign(batch.examples.size(), true);
    } else {
      Rng rng(seed);
      const auto& pool = state.reservoir.items();
      for (std::size_t i :
           sample_without_replacement(pool.size(), plan.sizes.m_old, rng))
        training_set.push_back(pool[i]);
      for (std::size_t i : sample_without_replacement(
               batch.examples.size(), plan.sizes.m_new, rng)) {
        training_set.push_back(batch.examples[i]);
        picked[i] = true;
      }
    }
    CostOracle oracle =
        make_examples_oracle(std::move(training_set), cfg.cost, cfg.plan);
    CurvatureMemory memory =
        cfg.reset_memory ? CurvatureMemory(cfg.memory_capacity)
                         : state.memory;
    OptimizeResult result =
        minimize(oracle, state.theta, std::move(memory), cfg.lbfgs);

    double heldout_sum = 0.0;
    std::size_t heldout_count = 0;
    for (std::size_t i = 0; i < batch.examples.size(); ++i) {
      if (picked[i]) continue;
      heldout_sum +=
          example_mismatch(result.theta, batch.examples[i], cfg.mode);
      ++heldout_count;
    }
    if (heldout_count == 0) {
      for (const Example& ex : batch.examples)
        heldout_sum += example_mismatch(result.theta, ex, cfg.mode);
      heldout_count = batch.examples.size();
    }
    report.instances.push_back({seed, std::move(result.theta),
                                heldout_sum / static_cast<double>(heldout_count),
                                result.converged});
  }

  const std::size_t k = report.instances.size();
  if (k >= 2) {
    ParameterVector mean(state.theta.size(), 0.0);
    for (const SamplingInstance& inst : report.instances)
      axpy(mean, 1.0 / static_cast<double>(k), inst.theta);
    double max_dist = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        ParameterVector diff = report.instances[i].theta;
        axpy(diff, -1.0, report.instances[j].theta);
        max_dist = std::max(max_dist, norm2(diff));
      }
    }
    const double denom = norm2(mean);
    report.dispersion =
        max_dist == 0.0 ? 0.0
                        : max_dist / std::max(denom, 1e-300);
  }
  return report;
}

}  // namespace salbfgs
