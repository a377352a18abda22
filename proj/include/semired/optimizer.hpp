// Damped projected Newton-type method with block trial-point adjustment.
//
// One iteration: build the active set, solve the damped model on the
// inactive variables, take a projected-gradient step on the active ones,
// backtrack along the projected path with the z-block of every trial point
// adjusted before it is evaluated, then update the damping from the step
// quality. With infinite bounds and adjustment off this is a plain damped
// Gauss-Newton line-search method.
#pragma once

#include "semired/problem.hpp"
#include "semired/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace semired {

struct BoundBox {
  Vector lo;
  Vector up;

  static BoundBox unbounded(Index n) {
    const double inf = std::numeric_limits<double>::infinity();
    return {Vector::Constant(n, -inf), Vector::Constant(n, inf)};
  }

  Index size() const { return lo.size(); }

  void validate() const {
    if (lo.size() != up.size()) throw ConfigError("BoundBox: lo/up size mismatch");
    for (Index i = 0; i < lo.size(); ++i) {
      if (!(lo[i] <= up[i])) throw ConfigError("BoundBox: lo > up at " + std::to_string(i));
    }
  }
};

struct OptimizerConfig {
  double delta = 1e-4;
  double alpha = 0.2;
  double lambda0 = 1e-3;
  double lambda_min = 1e-20;
  double lambda_max = 1e20;
  double rho_good = 0.7;
  double rho_bad = 0.01;
  double epsilon0 = 2.2e-14;
  /// Stopping tolerance on ||P(x - g) - x||; <= 0 selects
  /// max(2.2e-15, ||P(x0 - g0) - x0|| / 1e8).
  double tau = 0.0;
  int k_max_outer = 200;
  int max_backtracks = 60;

  /// Inner iterations of the z-only subproblem run on every trial point;
  /// 0 disables adjustment.
  int adjust_k_max = 0;
  /// Inner tolerance; <= 0 uses the same relative rule as tau.
  double adjust_tau = 0.0;
  /// Initial damping of the inner z-solves.
  double adjust_lambda0 = 1e-3;

  LinearSolverOptions linear;

  void validate() const {
    if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("delta must lie in (0, 1/2)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    if (!(lambda_min >= 0.0 && lambda_min <= lambda_max)) throw ConfigError("bad lambda bounds");
    if (!(0.0 <= rho_bad && rho_bad < rho_good && rho_good <= 1.0)) {
      throw ConfigError("need 0 <= rho_bad < rho_good <= 1");
    }
    if (!(epsilon0 > 0.0)) throw ConfigError("epsilon0 must be positive");
    if (k_max_outer < 0 || adjust_k_max < 0 || max_backtracks < 0) {
      throw ConfigError("iteration caps must be nonnegative");
    }
  }
};

enum class RunStatus { Converged, IterationCap, LineSearchFailure };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Converged: return "converged";
    case RunStatus::IterationCap: return "iteration-cap";
    case RunStatus::LineSearchFailure: return "line-search-failure";
  }
  return "unknown";
}

/// State at iterate k and the step taken from it. The terminal record has
/// step_exponent = -1.
struct IterationRecord {
  int k = 0;
  double f = 0.0;
  double proj_grad_norm = 0.0;
  double lambda = 0.0;
  int step_exponent = -1;
  int backtracks = 0;
  int inner_iters = 0;
  double cpu_ms = 0.0;
  Index active_count = 0;
  int cg_iterations = 0;
  // Accepted-step diagnostics.
  double armijo_lhs = 0.0;   // f(x_{k+1}) - f(x_k)
  double armijo_rhs = 0.0;   // delta * {g_I^T s dx_I + g_A^T (x_p - x)_A}
  double f_trial_unadjusted = std::numeric_limits<double>::quiet_NaN();
};

struct RunTrace {
  std::vector<IterationRecord> records;
  RunStatus status = RunStatus::IterationCap;
  double tau = 0.0;
  int total_inner_iters = 0;
  int total_function_evals = 0;
  std::string message;
};

struct RunResult {
  Vector x;
  RunTrace trace;
};

/// Componentwise median(lo_i, x_i, up_i).
inline Vector project(const Vector& x, const BoundBox& box) {
  return x.cwiseMax(box.lo).cwiseMin(box.up);
}

/// i is active iff (g_i > 0 and x_i <= lo_i + eps) or (g_i < 0 and
/// x_i >= up_i - eps). Variables with lo_i == up_i are fixed and always
/// active. Returns a mask (1 = active).
inline std::vector<char> active_mask(const Vector& x, const Vector& g, const BoundBox& box,
                                     double eps) {
  std::vector<char> active(static_cast<std::size_t>(x.size()), 0);
  for (Index i = 0; i < x.size(); ++i) {
    const bool fixed = box.lo[i] == box.up[i];
    const bool at_lo = g[i] > 0.0 && x[i] <= box.lo[i] + eps;
    const bool at_up = g[i] < 0.0 && x[i] >= box.up[i] - eps;
    active[static_cast<std::size_t>(i)] = (fixed || at_lo || at_up) ? 1 : 0;
  }
  return active;
}

/// Sorted indices of the active set.
inline std::vector<Index> active_set(const Vector& x, const Vector& g, const BoundBox& box,
                                     double eps) {
  const auto mask = active_mask(x, g, box, eps);
  std::vector<Index> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.push_back(static_cast<Index>(i));
  }
  return out;
}

/// ||P(x - g) - x|| evaluated as clamp(-g, lo - x, up - x) per component, so
/// gradients far below ulp(x) still register.
inline double projected_gradient_norm(const Vector& x, const Vector& g, const BoundBox& box) {
  double sum = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double d = std::clamp(-g[i], box.lo[i] - x[i], box.up[i] - x[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

/// dx_I from the damped model on the inactive set, dx_A = -g_A.
inline Vector search_direction(const Problem& problem, const Vector& x, const Vector& g,
                               const std::vector<char>& active, double lambda,
                               const LinearSolverOptions& opts, SolveInfo* info = nullptr) {
  std::vector<char> inactive(active.size());
  bool any_inactive = false;
  for (std::size_t i = 0; i < active.size(); ++i) {
    inactive[i] = active[i] ? 0 : 1;
    any_inactive = any_inactive || inactive[i];
  }
  Vector dx = any_inactive ? problem.solve_inactive(x, g, inactive, lambda, opts, info)
                           : Vector(Vector::Zero(x.size()));
  for (std::size_t i = 0; i < active.size(); ++i) {
    if (active[i]) dx[static_cast<Index>(i)] = -g[static_cast<Index>(i)];
  }
  return dx;
}

/// Right-hand side of the adjusted sufficient-decrease test:
/// delta * { g_I^T (step dx_I) + g_A^T (x_trial - x)_A }.
inline double armijo_bound(const Vector& g, const Vector& x, const Vector& x_trial,
                           const Vector& dx, const std::vector<char>& active, double delta,
                           double step) {
  double inactive_term = 0.0;
  double active_term = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    if (active[static_cast<std::size_t>(i)]) {
      active_term += g[i] * (x_trial[i] - x[i]);
    } else {
      inactive_term += g[i] * (step * dx[i]);
    }
  }
  return delta * (inactive_term + active_term);
}

/// f(x_d(x_p(step))) - f(x) <= armijo_bound(...). `x_trial` is the projected
/// trial point before adjustment; `f_adj_trial` is the objective after it.
inline bool armijo_accept(double f_old, double f_adj_trial, const Vector& g, const Vector& x,
                          const Vector& x_trial, const Vector& dx, const std::vector<char>& active,
                          double delta, double step) {
  if (!std::isfinite(f_adj_trial) && f_adj_trial > 0.0) return false;
  if (std::isnan(f_adj_trial)) return false;
  return f_adj_trial - f_old <= armijo_bound(g, x, x_trial, dx, active, delta, step);
}

struct AdjustResult {
  Vector x;
  double f = 0.0;
  double f_before = 0.0;
  int inner_iters = 0;
};

inline RunResult run(const Problem& problem, const BoundBox& box, const Vector& x0,
              const OptimizerConfig& cfg);

/// Improves the z-block of `x_bar` by at most cfg.adjust_k_max iterations of
/// this method on min_z F(y_bar, z). Never returns a worse point.
inline AdjustResult adjust_trial(const Problem& problem, const BoundBox& box, const Vector& x_bar,
                                 const OptimizerConfig& cfg) {
  AdjustResult out;
  out.x = x_bar;
  try {
    out.f_before = problem.value(x_bar);
  } catch (const DomainError&) {
    out.f_before = std::numeric_limits<double>::infinity();
  }
  out.f = out.f_before;
  if (cfg.adjust_k_max == 0 || !std::isfinite(out.f_before)) return out;

  BoundBox inner_box = box;
  const Index ny = problem.n_y();
  inner_box.lo.head(ny) = x_bar.head(ny);
  inner_box.up.head(ny) = x_bar.head(ny);

  OptimizerConfig inner = cfg;
  inner.adjust_k_max = 0;
  inner.k_max_outer = cfg.adjust_k_max;
  inner.tau = cfg.adjust_tau;
  inner.lambda0 = cfg.adjust_lambda0;

  const RunResult res = run(problem, inner_box, x_bar, inner);
  out.inner_iters = static_cast<int>(res.trace.records.size()) - 1;
  const double f_new = res.trace.records.back().f;
  if (f_new <= out.f_before) {
    out.x = res.x;
    out.x.head(ny) = x_bar.head(ny);
    out.f = f_new;
  }
  return out;
}

namespace detail {

inline double safe_value(const Problem& problem, const Vector& x) {
  try {
    return problem.value(x);
  } catch (const DomainError&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

inline RunResult run(const Problem& problem, const BoundBox& box, const Vector& x0,
                     const OptimizerConfig& cfg) {
  cfg.validate();
  box.validate();
  if (box.size() != problem.size() || x0.size() != problem.size()) {
    throw ConfigError("run: dimension mismatch between problem, box and x0");
  }
  using Clock = std::chrono::steady_clock;
  const auto t_start = Clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(Clock::now() - t_start).count();
  };

  RunResult out;
  RunTrace& trace = out.trace;
  Vector x = project(x0, box);
  Evaluation ev = problem.evaluate(x);
  ++trace.total_function_evals;

  const double pgn0 = projected_gradient_norm(x, ev.g, box);
  trace.tau = cfg.tau > 0.0 ? cfg.tau : std::max(2.2e-15, pgn0 / 1e8);
  double lambda = std::clamp(cfg.lambda0, cfg.lambda_min, cfg.lambda_max);
  double eps = cfg.epsilon0;

  for (int k = 0;; ++k) {
    IterationRecord rec;
    rec.k = k;
    rec.f = ev.f;
    rec.proj_grad_norm = projected_gradient_norm(x, ev.g, box);
    rec.lambda = lambda;

    const std::vector<char> active = active_mask(x, ev.g, box, eps);
    rec.active_count = std::count(active.begin(), active.end(), char{1});

    if (rec.proj_grad_norm <= trace.tau) {
      trace.status = RunStatus::Converged;
      rec.cpu_ms = elapsed_ms();
      trace.records.push_back(rec);
      break;
    }
    if (k >= cfg.k_max_outer) {
      trace.status = RunStatus::IterationCap;
      rec.cpu_ms = elapsed_ms();
      trace.records.push_back(rec);
      break;
    }

    // Direction; singular or indefinite models raise the damping.
    Vector dx;
    SolveInfo info;
    for (;;) {
      try {
        dx = search_direction(problem, x, ev.g, active, lambda, cfg.linear, &info);
        break;
      } catch (const SingularSystemError&) {
      } catch (const IndefiniteError&) {
      }
      if (lambda >= cfg.lambda_max) break;
      lambda = std::min(std::max(10.0 * lambda, cfg.lambda_min > 0.0 ? cfg.lambda_min : 1e-20),
                        cfg.lambda_max);
    }
    rec.lambda = lambda;
    rec.cg_iterations = info.cg_iterations;
    if (dx.size() == 0) {
      trace.status = RunStatus::LineSearchFailure;
      trace.message = "linear solve failed at maximum damping";
      rec.cpu_ms = elapsed_ms();
      trace.records.push_back(rec);
      break;
    }

    // Backtracking along the projected path with adjusted trial points.
    bool accepted = false;
    Vector x_next;
    double f_next = 0.0;
    double step = 1.0;
    for (int j = 0; j <= cfg.max_backtracks; ++j, step *= cfg.alpha) {
      const Vector x_p = project(x + step * dx, box);
      Vector x_d = x_p;
      double f_d = 0.0;
      double f_p = std::numeric_limits<double>::quiet_NaN();
      if (cfg.adjust_k_max > 0) {
        const AdjustResult adj = adjust_trial(problem, box, x_p, cfg);
        rec.inner_iters += adj.inner_iters;
        x_d = adj.x;
        f_d = adj.f;
        f_p = adj.f_before;
      } else {
        f_d = detail::safe_value(problem, x_p);
      }
      ++trace.total_function_evals;
      if (armijo_accept(ev.f, f_d, ev.g, x, x_p, dx, active, cfg.delta, step)) {
        accepted = true;
        rec.step_exponent = j;
        rec.backtracks = j;
        rec.armijo_lhs = f_d - ev.f;
        rec.armijo_rhs = armijo_bound(ev.g, x, x_p, dx, active, cfg.delta, step);
        rec.f_trial_unadjusted = f_p;
        x_next = x_d;
        f_next = f_d;
        break;
      }
    }
    trace.total_inner_iters += rec.inner_iters;
    if (!accepted) {
      trace.status = RunStatus::LineSearchFailure;
      trace.message = "no acceptable step after " + std::to_string(cfg.max_backtracks) +
                      " backtracks";
      rec.backtracks = cfg.max_backtracks + 1;
      rec.cpu_ms = elapsed_ms();
      trace.records.push_back(rec);
      break;
    }

    // Step quality from the inactive-block model decrease.
    double model_decrease = 0.0;
    for (Index i = 0; i < x.size(); ++i) {
      if (!active[static_cast<std::size_t>(i)]) model_decrease += ev.g[i] * dx[i];
    }
    model_decrease *= -0.5;
    const double rho = model_decrease > 0.0 ? (ev.f - f_next) / model_decrease : 0.0;
    if (rho > cfg.rho_good) {
      lambda = std::max(lambda / 2.0, cfg.lambda_min);
    } else if (rho < cfg.rho_bad) {
      lambda = std::min(10.0 * lambda, cfg.lambda_max);
    }
    eps = std::min(cfg.epsilon0, (project(x + dx, box) - x).norm());

    rec.cpu_ms = elapsed_ms();
    trace.records.push_back(rec);

    x = x_next;
    ev = problem.evaluate(x);
    ++trace.total_function_evals;
  }
  out.x = x;
  return out;
}

}  // namespace semired
