#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "salbfgs/cost.hpp"
#include "salbfgs/driver.hpp"
#include "salbfgs/lbfgs.hpp"
#include "salbfgs/types.hpp"

namespace salbfgs {

// AUC by average ranks: equivalent to counting correctly ordered
// positive/negative pairs with ties worth one half. Requires both classes to
// be present.
inline double auc(std::span<const std::pair<double, int>> scored) {
  std::size_t positives = 0;
  for (const auto& [score, label] : scored) {
    if (!std::isfinite(score)) throw numeric_error("score is not finite");
    if (label > 0) ++positives;
  }
  const std::size_t negatives = scored.size() - positives;
  if (positives == 0 || negatives == 0)
    throw undefined_metric_error(
        "AUC undefined: needs both positive and negative examples");

  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scored[a].first != scored[b].first)
      return scored[a].first < scored[b].first;
    return a < b;
  });

  // Sum of average ranks (1-based) of the positive examples, with tied
  // scores sharing the mean rank of their group.
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() &&
           scored[order[j]].first == scored[order[i]].first)
      ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (scored[order[k]].second > 0) positive_rank_sum += mean_rank;
    i = j;
  }

  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

inline double auc(std::span<const Batch> batches,
                  const ParameterVector& theta) {
  std::vector<std::pair<double, int>> scored;
  for (const Batch& batch : batches)
    for (const Example& ex : batch.examples)
      scored.emplace_back(predict(theta, ex.features), ex.label);
  return auc(std::span<const std::pair<double, int>>(scored));
}

// Mean pointwise mismatch over batches (absolute or thresholded), the
// whole-dataset counterpart of the driver's per-batch statistic.
inline double error_rate(const ParameterVector& theta,
                         std::span<const Batch> batches, MismatchMode mode) {
  return mismatch(batches, theta, mode);
}

struct RegretReport {
  std::vector<double> per_step;
  std::vector<double> cumulative;
};

// Per-batch regret of a parameter sequence against a fixed comparator:
// per_step[s] = phi_s(theta_s) - phi_s(theta_star), where phi_s is the
// regularized cost on batch s. theta_seq[s] must be the parameters used for
// batch s (one entry per batch).
inline RegretReport regret(std::span<const ParameterVector> theta_seq,
                           const Stream& stream, const CostConfig& cfg,
                           const ParameterVector& theta_star,
                           const EvalPlan& plan = {}) {
  if (theta_seq.size() != stream.batches.size())
    throw dimension_error("need one parameter vector per batch");
  RegretReport report;
  report.per_step.reserve(stream.batches.size());
  report.cumulative.reserve(stream.batches.size());
  double running = 0.0;
  for (std::size_t s = 0; s < stream.batches.size(); ++s) {
    std::span<const Batch> one(&stream.batches[s], 1);
    const double cost_seq = batch_cost(theta_seq[s], one, cfg, plan);
    const double cost_star = batch_cost(theta_star, one, cfg, plan);
    const double step = cost_seq - cost_star;
    report.per_step.push_back(step);
    running += step;
    report.cumulative.push_back(running);
  }
  return report;
}

// Fixed comparator for regret: the minimizer of the summed per-batch costs.
// Each phi_s carries its own l2 term, so the pooled objective is the pooled
// data loss plus (number of batches) * lambda times the regularizer.
inline ParameterVector oracle_theta_star(const Stream& stream,
                                         const CostConfig& cfg,
                                         std::size_t dim = 0,
                                         const EvalPlan& plan = {}) {
  validate_stream(stream);
  if (stream.empty()) throw undefined_metric_error("empty stream");
  if (dim == 0) {
    const std::int64_t max_index = max_feature_index(stream);
    dim = static_cast<std::size_t>(max_index + 1);
  }
  CostConfig pooled = cfg;
  pooled.reg_strength =
      cfg.reg_strength * static_cast<double>(stream.batches.size());
  CostOracle oracle =
      make_batches_oracle(std::span<const Batch>(stream.batches), pooled, plan);
  LbfgsConfig opt;
  opt.max_iterations = 2000;
  opt.grad_tolerance = 1e-9;
  OptimizeResult result =
      minimize(oracle, ParameterVector(dim, 0.0), opt, 20);
  if (!result.converged)
    throw numeric_error("comparator optimization did not converge (grad norm " +
                        std::to_string(result.final_grad_norm) + ")");
  return result.theta;
}

}  // namespace salbfgs
