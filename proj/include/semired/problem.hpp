// Abstract objective interface consumed by the projected Newton-type driver.
#pragma once

#include "semired/types.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace semired {

enum class LinearSolver { FullQr, BlockQr, BlockDiagQr, MixedCgDirect, FullCg };

inline std::string_view to_string(LinearSolver s) {
  switch (s) {
    case LinearSolver::FullQr: return "full-qr";
    case LinearSolver::BlockQr: return "block-qr";
    case LinearSolver::BlockDiagQr: return "blockdiag-qr";
    case LinearSolver::MixedCgDirect: return "mixed-cg-direct";
    case LinearSolver::FullCg: return "full-cg";
  }
  return "unknown";
}

inline LinearSolver parse_linear_solver(std::string_view name) {
  for (auto s : {LinearSolver::FullQr, LinearSolver::BlockQr, LinearSolver::BlockDiagQr,
                 LinearSolver::MixedCgDirect, LinearSolver::FullCg}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown linear solver '" + std::string(name) + "'");
}

struct LinearSolverOptions {
  LinearSolver solver = LinearSolver::BlockDiagQr;
  // full-CG baseline
  double cg_tol = 1e-6;
  int cg_max = 40;
  double cg_precond_y = 1e5;
  // B_zz solves inside the mixed CG/direct method
  double inner_cg_tol = 1e-8;
  int inner_cg_max = 500;
};

struct Evaluation {
  double f = 0.0;
  Vector g;
};

struct SolveInfo {
  int cg_iterations = 0;
  int cg_nonconverged = 0;
};

/// Smooth objective over x = (y, z) with a damped Newton-type model.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual Index size() const = 0;
  /// Leading block of x that holds the nonlinear parameters y.
  virtual Index n_y() const = 0;

  /// Objective value; throws DomainError outside the objective's domain.
  virtual double value(const Vector& x) const = 0;
  virtual Evaluation evaluate(const Vector& x) const = 0;

  /// Solves (B_II + lambda I) dx_I = -g_I where I are the indices with
  /// inactive[i] != 0. The result has full length with zeros off I. Throws
  /// SingularSystemError / IndefiniteError when the model cannot be solved
  /// at this damping.
  virtual Vector solve_inactive(const Vector& x, const Vector& g, const std::vector<char>& inactive,
                                double lambda, const LinearSolverOptions& opts,
                                SolveInfo* info) const = 0;
};

}  // namespace semired
