#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <utility>
#include <vector>

#include "salbfgs/cost.hpp"
#include "salbfgs/types.hpp"
#include "salbfgs/vec.hpp"

namespace salbfgs {

struct CurvaturePair {
  ParameterVector s;  // parameter displacement
  ParameterVector y;  // gradient displacement
  double rho = 0.0;   // 1 / (y's)
};

// Bounded FIFO of curvature pairs plus the initial Hessian scaling
// gamma = s'y / y'y from the most recent accepted pair. Pairs that do not
// carry positive curvature are rejected at the door, so everything stored
// here keeps the implicit inverse Hessian positive definite.
class CurvatureMemory {
 public:
  explicit CurvatureMemory(std::size_t capacity = 10) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  double gamma() const { return gamma_; }
  const std::deque<CurvaturePair>& pairs() const { return pairs_; }

  void clear() {
    pairs_.clear();
    gamma_ = 1.0;
  }

  // Returns false (and stores nothing) when y's fails the relative
  // positive-curvature threshold.
  bool push(ParameterVector s, ParameterVector y) {
    if (s.size() != y.size())
      throw dimension_error("curvature pair: size mismatch");
    const double ys = dot(y, s);
    if (!std::isfinite(ys)) return false;
    if (ys <= 1e-12 * norm2(s) * norm2(y)) return false;
    const double yy = dot(y, y);
    gamma_ = ys / yy;
    pairs_.push_back({std::move(s), std::move(y), 1.0 / ys});
    while (pairs_.size() > capacity_) pairs_.pop_front();
    return true;
  }

 private:
  std::deque<CurvaturePair> pairs_;
  std::size_t capacity_;
  double gamma_ = 1.0;
};

struct LbfgsConfig {
  std::size_t max_iterations = 200;
  double grad_tolerance = 1e-6;  // infinity norm
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  std::size_t max_line_search_steps = 30;

  void validate() const {
    if (max_iterations < 1) throw config_error("max_iterations must be >= 1");
    if (!(grad_tolerance >= 0.0) || !std::isfinite(grad_tolerance))
      throw config_error("grad_tolerance must be finite and >= 0");
    if (!(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0))
      throw config_error("need 0 < c1 < c2 < 1");
    if (max_line_search_steps < 1)
      throw config_error("max_line_search_steps must be >= 1");
  }
};

// Two-loop recursion: applies the implicit inverse Hessian to grad and
// negates, yielding the search direction.
inline ParameterVector two_loop_direction(const ParameterVector& grad,
                                          const CurvatureMemory& memory) {
  if (!all_finite(grad)) throw numeric_error("gradient is not finite");
  ParameterVector q = grad;
  const auto& pairs = memory.pairs();
  std::vector<double> alpha(pairs.size());
  for (std::size_t k = pairs.size(); k-- > 0;) {
    const CurvaturePair& p = pairs[k];
    alpha[k] = p.rho * dot(p.s, q);
    axpy(q, -alpha[k], p.y);
  }
  for (double& v : q) v *= memory.gamma();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const CurvaturePair& p = pairs[k];
    const double beta = p.rho * dot(p.y, q);
    axpy(q, alpha[k] - beta, p.s);
  }
  for (double& v : q) v = -v;
  return q;
}

struct LineSearchResult {
  double alpha = 0.0;
  double cost = 0.0;
  ParameterVector theta;
  ParameterVector grad;
  bool strong_wolfe = false;  // false when only sufficient decrease was met
  std::size_t evals = 0;
};

namespace detail {

struct LsPoint {
  double a;
  double phi;
  double dphi;
};

// Minimizer of the quadratic through (0, phi_lo) with slope dphi_lo and
// (w, phi_hi), as a signed offset from lo. Returns NaN when the quadratic
// has no interior minimizer.
inline double quad_min_offset(double phi_lo, double dphi_lo, double w,
                              double phi_hi) {
  const double c = (phi_hi - phi_lo - dphi_lo * w) / (w * w);
  if (!(c > 0.0) || !std::isfinite(c))
    return std::numeric_limits<double>::quiet_NaN();
  return -dphi_lo / (2.0 * c);
}

}  // namespace detail

// Strong Wolfe line search (bracketing phase plus zoom). If the full Wolfe
// conditions cannot be met within the evaluation budget, the best point
// satisfying sufficient decrease is returned with strong_wolfe = false;
// if not even sufficient decrease was found, throws line_search_error.
inline LineSearchResult wolfe_line_search(const CostOracle& oracle,
                                          const ParameterVector& theta0,
                                          double f0, const ParameterVector& g0,
                                          const ParameterVector& direction,
                                          const LbfgsConfig& cfg,
                                          std::size_t* evals_consumed = nullptr) {
  if (evals_consumed) *evals_consumed = 0;
  const double dphi0 = dot(g0, direction);
  if (!(dphi0 < 0.0))
    throw line_search_error("search direction is not a descent direction");

  LineSearchResult best;
  bool have_best = false;
  std::size_t evals = 0;

  ParameterVector theta_a(theta0.size());
  ParameterVector grad_a;

  auto eval_at = [&](double a) -> detail::LsPoint {
    for (std::size_t i = 0; i < theta0.size(); ++i)
      theta_a[i] = theta0[i] + a * direction[i];
    double f = oracle(theta_a, grad_a);
    ++evals;
    if (evals_consumed) *evals_consumed = evals;
    if (!std::isfinite(f)) f = std::numeric_limits<double>::infinity();
    const double dphi = std::isfinite(f) ? dot(grad_a, direction)
                                         : std::numeric_limits<double>::infinity();
    return {a, f, dphi};
  };

  // Sufficient decrease with a tiny slack relative to |f0|: near the
  // floating-point floor of f the exact Armijo test becomes unsatisfiable
  // even though the curvature condition still identifies good steps.
  const double armijo_slack = 1e-14 * std::fabs(f0);
  auto armijo_ok = [&](const detail::LsPoint& p) {
    return p.phi <= f0 + cfg.wolfe_c1 * p.a * dphi0 + armijo_slack;
  };
  auto curvature_ok = [&](const detail::LsPoint& p) {
    return std::fabs(p.dphi) <= -cfg.wolfe_c2 * dphi0;
  };
  // Fallback candidates must strictly improve on the starting cost.
  auto remember = [&](const detail::LsPoint& p, bool wolfe) {
    if (p.phi >= f0) return;
    if (!have_best || p.phi < best.cost) {
      best = {p.a, p.phi, theta_a, grad_a, wolfe, 0};
      have_best = true;
    }
  };

  auto finish = [&](LineSearchResult r) {
    r.evals = evals;
    return r;
  };

  // Zoom phase: lo satisfies sufficient decrease, the minimizer is bracketed
  // between lo and hi (hi need not be larger than lo).
  auto zoom = [&](detail::LsPoint lo, detail::LsPoint hi)
      -> LineSearchResult {
    while (evals < cfg.max_line_search_steps) {
      const double w = hi.a - lo.a;
      if (std::fabs(w) < 1e-14 * std::max(1.0, std::fabs(lo.a))) break;
      const double off = detail::quad_min_offset(lo.phi, lo.dphi, w, hi.phi);
      // Safeguard: keep the trial strictly inside the bracket, bisect when
      // the interpolant is useless or too close to an endpoint.
      double frac = off / w;
      if (!std::isfinite(frac) || frac < 0.1 || frac > 0.9) frac = 0.5;
      const detail::LsPoint p = eval_at(lo.a + frac * w);
      if (armijo_ok(p)) {
        remember(p, curvature_ok(p));
        if (curvature_ok(p))
          return finish({p.a, p.phi, theta_a, grad_a, true, 0});
      }
      if (!armijo_ok(p) || p.phi >= lo.phi + armijo_slack) {
        hi = p;
        continue;
      }
      if (p.dphi * (hi.a - lo.a) >= 0.0) hi = lo;
      lo = p;
    }
    if (have_best) return finish(best);
    throw line_search_error("zoom exhausted without sufficient decrease");
  };

  detail::LsPoint prev{0.0, f0, dphi0};
  double alpha = 1.0;
  while (evals < cfg.max_line_search_steps) {
    const detail::LsPoint p = eval_at(alpha);
    if (armijo_ok(p)) {
      remember(p, curvature_ok(p));
      if (curvature_ok(p))
        return finish({p.a, p.phi, theta_a, grad_a, true, 0});
    }
    if (!armijo_ok(p) || (prev.a > 0.0 && p.phi >= prev.phi + armijo_slack))
      return zoom(prev, p);
    if (p.dphi >= 0.0) return zoom(p, prev);
    prev = p;
    alpha = std::min(2.0 * alpha, 1e20);
  }
  if (have_best) return finish(best);
  throw line_search_error("no step with sufficient decrease found");
}

struct OptimizeResult {
  ParameterVector theta;
  CurvatureMemory memory{10};
  std::size_t iterations = 0;
  double final_grad_norm = 0.0;  // infinity norm
  bool converged = false;
  std::size_t cost_evals = 0;
  std::size_t grad_evals = 0;
};

// L-BFGS minimization warm-started from an existing curvature memory. On a
// line-search failure the memory is cleared and one backtracking
// steepest-descent step is attempted; if that also fails, the best iterate
// seen so far is returned with converged = false.
inline OptimizeResult minimize(const CostOracle& oracle,
                               ParameterVector theta0,
                               CurvatureMemory memory,
                               const LbfgsConfig& cfg = {}) {
  cfg.validate();

  OptimizeResult out;
  out.theta = std::move(theta0);
  ParameterVector grad;
  double f = oracle(out.theta, grad);
  std::size_t evals = 1;
  if (!std::isfinite(f)) throw numeric_error("cost is not finite at start");
  if (!all_finite(grad)) throw numeric_error("gradient is not finite at start");

  ParameterVector best_theta = out.theta;
  double best_f = f;

  auto wrap_up = [&](bool converged, double gnorm) {
    out.memory = std::move(memory);
    out.final_grad_norm = gnorm;
    out.converged = converged;
    out.cost_evals = evals;
    out.grad_evals = evals;
    return std::move(out);
  };

  double gnorm = norm_inf(grad);
  if (gnorm <= cfg.grad_tolerance) return wrap_up(true, gnorm);

  for (std::size_t iter = 1; iter <= cfg.max_iterations; ++iter) {
    ParameterVector direction = two_loop_direction(grad, memory);
    if (!(dot(grad, direction) < 0.0)) {
      memory.clear();
      direction = grad;
      for (double& v : direction) v = -v;
    }

    LineSearchResult step;
    bool stepped = false;
    std::size_t consumed = 0;
    try {
      step = wolfe_line_search(oracle, out.theta, f, grad, direction, cfg,
                               &consumed);
      evals += consumed;
      stepped = true;
    } catch (const line_search_error&) {
      evals += consumed;
      // Recovery: drop the memory and try plain backtracking along -grad.
      memory.clear();
      const double gg = dot(grad, grad);
      double a = 1.0;
      for (std::size_t k = 0; k < cfg.max_line_search_steps; ++k) {
        ParameterVector trial = out.theta;
        axpy(trial, -a, grad);
        ParameterVector trial_grad;
        const double ft = oracle(trial, trial_grad);
        ++evals;
        if (std::isfinite(ft) && ft <= f - cfg.wolfe_c1 * a * gg) {
          step = {a, ft, std::move(trial), std::move(trial_grad), false, 0};
          stepped = true;
          break;
        }
        a *= 0.5;
      }
      if (!stepped) {
        out.theta = std::move(best_theta);
        return wrap_up(false, norm_inf(grad));
      }
    }

    ParameterVector s = step.theta;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] -= out.theta[i];
    // Steps at the representation floor of theta carry no curvature
    // information (the gradient difference is rounding noise), so keep
    // them out of the memory.
    const double floor_step =
        4.0 * std::numeric_limits<double>::epsilon() *
        (1.0 + norm_inf(out.theta));
    if (norm_inf(s) > floor_step) {
      ParameterVector y = step.grad;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] -= grad[i];
      memory.push(std::move(s), std::move(y));
    }

    out.theta = std::move(step.theta);
    f = step.cost;
    grad = std::move(step.grad);
    out.iterations = iter;
    if (f < best_f) {
      best_f = f;
      best_theta = out.theta;
    }

    gnorm = norm_inf(grad);
    if (gnorm <= cfg.grad_tolerance) return wrap_up(true, gnorm);
  }
  return wrap_up(false, gnorm);
}

inline OptimizeResult minimize(const CostOracle& oracle,
                               ParameterVector theta0,
                               const LbfgsConfig& cfg = {},
                               std::size_t memory_capacity = 10) {
  return minimize(oracle, std::move(theta0), CurvatureMemory(memory_capacity),
                  cfg);
}

}  // namespace salbfgs
