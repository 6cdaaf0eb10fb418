#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <span>
#include <thread>
#include <vector>

#include "salbfgs/types.hpp"

namespace salbfgs {

enum class LossKind { logistic, squared };
enum class RegKind { none, l2 };

struct CostConfig {
  LossKind loss = LossKind::logistic;
  RegKind reg = RegKind::l2;
  double reg_strength = 0.0;

  void validate() const {
    if (!(reg_strength >= 0.0) || !std::isfinite(reg_strength))
      throw config_error("regularization strength must be finite and >= 0");
  }

  double lambda() const {
    return reg == RegKind::l2 ? reg_strength : 0.0;
  }
};

// Loss of a raw linear score z against a 0/1 label.
//
// The logistic loss is evaluated through the signed margin m = (2y-1) z as
// log(1 + exp(-|m|)) + max(0, -m), which never overflows and keeps full
// precision for large |z|.
inline double loss_value(LossKind kind, double z, int label) {
  switch (kind) {
    case LossKind::logistic: {
      const double m = (label > 0 ? 1.0 : -1.0) * z;
      return std::log1p(std::exp(-std::fabs(m))) + std::max(0.0, -m);
    }
    case LossKind::squared: {
      const double r = z - static_cast<double>(label);
      return r * r;
    }
  }
  throw config_error("unknown loss kind");
}

// Derivative of the loss with respect to the score z.
inline double loss_dz(LossKind kind, double z, int label) {
  switch (kind) {
    case LossKind::logistic: {
      const double s = label > 0 ? 1.0 : -1.0;
      const double m = s * z;
      // -s * sigma(-m), evaluated stably on both tails.
      if (m >= 0.0) {
        const double e = std::exp(-m);
        return -s * e / (1.0 + e);
      }
      return -s / (1.0 + std::exp(m));
    }
    case LossKind::squared:
      return 2.0 * (z - static_cast<double>(label));
  }
  throw config_error("unknown loss kind");
}

// Shard layout for batch evaluation. The shard boundaries depend only on the
// example count, never on the thread count, so partial results can be
// combined in a fixed order and the total is bit-identical no matter how many
// threads execute the shards.
struct EvalPlan {
  unsigned threads = 1;

  static std::size_t shard_size_for(std::size_t n) {
    return std::max<std::size_t>(8192, (n + 31) / 32);
  }
};

namespace detail {

struct ShardPartial {
  double cost = 0.0;
  ParameterVector grad;
};

// Evaluates cost (and optionally gradient) over examples addressed by
// get(0..n-1), sharded by the fixed layout and tree-combined in shard order.
template <typename GetExample>
double eval_sharded(const ParameterVector& theta, std::size_t n,
                    GetExample&& get, const CostConfig& cfg,
                    ParameterVector* grad_out, const EvalPlan& plan) {
  cfg.validate();
  const std::size_t dim = theta.size();
  if (grad_out) grad_out->assign(dim, 0.0);

  double data_cost = 0.0;
  if (n > 0) {
    const std::size_t shard = EvalPlan::shard_size_for(n);
    const std::size_t nshards = (n + shard - 1) / shard;
    std::vector<ShardPartial> partials(nshards);

    auto eval_shard = [&](std::size_t s) {
      ShardPartial out;
      if (grad_out) out.grad.assign(dim, 0.0);
      const std::size_t lo = s * shard;
      const std::size_t hi = std::min(n, lo + shard);
      for (std::size_t i = lo; i < hi; ++i) {
        const Example& ex = get(i);
        const double z = predict(theta, ex.features);
        out.cost += ex.weight * loss_value(cfg.loss, z, ex.label);
        if (grad_out) {
          const double dz = ex.weight * loss_dz(cfg.loss, z, ex.label);
          for (const auto& [index, value] : ex.features.entries)
            out.grad[index] += dz * value;
        }
      }
      return out;
    };

    const unsigned workers = static_cast<unsigned>(
        std::min<std::size_t>(std::max(1u, plan.threads), nshards));
    if (workers <= 1) {
      for (std::size_t s = 0; s < nshards; ++s) partials[s] = eval_shard(s);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::exception_ptr> errors(workers);
      auto run = [&](unsigned w) {
        try {
          std::size_t s;
          while ((s = next.fetch_add(1)) < nshards) partials[s] = eval_shard(s);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      };
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
      for (std::thread& t : pool) t.join();
      for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
    }

    // Pairwise tree combine in fixed shard order.
    for (std::size_t step = 1; step < nshards; step *= 2) {
      for (std::size_t i = 0; i + step < nshards; i += 2 * step) {
        partials[i].cost += partials[i + step].cost;
        if (grad_out) {
          ParameterVector& a = partials[i].grad;
          ParameterVector& b = partials[i + step].grad;
          for (std::size_t d = 0; d < dim; ++d) a[d] += b[d];
          b.clear();
          b.shrink_to_fit();
        }
      }
    }
    data_cost = partials[0].cost;
    if (grad_out) *grad_out = std::move(partials[0].grad);
  }

  const double lambda = cfg.lambda();
  if (lambda > 0.0) {
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) sq += theta[d] * theta[d];
    data_cost += 0.5 * lambda * sq;
    if (grad_out)
      for (std::size_t d = 0; d < dim; ++d) (*grad_out)[d] += lambda * theta[d];
  }
  return data_cost;
}

}  // namespace detail

// Cost over a flat span of examples: sum of weighted losses plus the
// regularizer (applied once).
inline double examples_cost_grad(const ParameterVector& theta,
                                 std::span<const Example> examples,
                                 const CostConfig& cfg,
                                 ParameterVector* grad_out,
                                 const EvalPlan& plan = {}) {
  return detail::eval_sharded(
      theta, examples.size(),
      [examples](std::size_t i) -> const Example& { return examples[i]; }, cfg,
      grad_out, plan);
}

// Cost over a span of batches, treated as the concatenation of their
// examples in batch order.
inline double batch_cost_grad(const ParameterVector& theta,
                              std::span<const Batch> batches,
                              const CostConfig& cfg, ParameterVector* grad_out,
                              const EvalPlan& plan = {}) {
  std::vector<const Example*> flat;
  std::size_t n = 0;
  for (const Batch& b : batches) n += b.examples.size();
  flat.reserve(n);
  for (const Batch& b : batches)
    for (const Example& ex : b.examples) flat.push_back(&ex);
  return detail::eval_sharded(
      theta, flat.size(),
      [&flat](std::size_t i) -> const Example& { return *flat[i]; }, cfg,
      grad_out, plan);
}

inline double batch_cost(const ParameterVector& theta,
                         std::span<const Batch> batches, const CostConfig& cfg,
                         const EvalPlan& plan = {}) {
  return batch_cost_grad(theta, batches, cfg, nullptr, plan);
}

inline ParameterVector batch_gradient(const ParameterVector& theta,
                                      std::span<const Batch> batches,
                                      const CostConfig& cfg,
                                      const EvalPlan& plan = {}) {
  ParameterVector grad;
  batch_cost_grad(theta, batches, cfg, &grad, plan);
  return grad;
}

// Cost oracle interface used by the optimizer: fills grad, returns cost.
using CostOracle =
    std::function<double(const ParameterVector& theta, ParameterVector& grad)>;

// Oracle over a materialized example set (the retraining path).
inline CostOracle make_examples_oracle(std::vector<Example> examples,
                                       CostConfig cfg, EvalPlan plan = {}) {
  auto shared = std::make_shared<std::vector<Example>>(std::move(examples));
  return [shared, cfg, plan](const ParameterVector& theta,
                             ParameterVector& grad) {
    return examples_cost_grad(theta, std::span<const Example>(*shared), cfg,
                              &grad, plan);
  };
}

// Oracle over externally owned batches (the pooled-training path). The
// flattened view is built once and reused on every evaluation.
inline CostOracle make_batches_oracle(std::span<const Batch> batches,
                                      CostConfig cfg, EvalPlan plan = {}) {
  auto flat = std::make_shared<std::vector<const Example*>>();
  for (const Batch& b : batches)
    for (const Example& ex : b.examples) flat->push_back(&ex);
  return [flat, cfg, plan](const ParameterVector& theta,
                           ParameterVector& grad) {
    return detail::eval_sharded(
        theta, flat->size(),
        [&flat](std::size_t i) -> const Example& { return *(*flat)[i]; }, cfg,
        &grad, plan);
  };
}

}  // namespace salbfgs
