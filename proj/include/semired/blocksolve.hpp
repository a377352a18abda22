// Linear solvers for the block Newton-type system B dx = -g.
//
// Direct solvers work on normal equations (J^T J + lambda I) dx = -(J^T r + g_e)
// given the weighted Jacobian in block form. The iterative solvers work on
// the Hessian model in operator form (products only).
#pragma once

#include "semired/linalg.hpp"
#include "semired/types.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace semired {

/// Normal-equation system in Jacobian form.
///
/// Rows of `j_y` and `r` are the concatenation of the row blocks of
/// `j_z_blocks` (block i occupies the next j_z_blocks[i].rows() rows); J_z is
/// block diagonal. `g_extra_y` / `g_extra_z` hold the part of the gradient
/// that is not of the form J^T r (components with zero curvature); empty
/// means zero. A nonzero extra gradient requires lambda > 0: it is carried as
/// the residual of the sqrt(lambda) I augmentation rows.
struct BlockNormalSystem {
  Matrix j_y;
  std::vector<Matrix> j_z_blocks;
  Vector r;
  double lambda = 0.0;
  Vector g_extra_y;
  Vector g_extra_z;

  Index n_y() const { return j_y.cols(); }
  Index n_z() const {
    Index n = 0;
    for (const auto& b : j_z_blocks) n += b.cols();
    return n;
  }
  Index rows() const { return j_y.rows(); }
};

struct BlockStep {
  Vector dy;
  Vector dz;
};

namespace detail {

inline void validate(const BlockNormalSystem& sys) {
  if (sys.lambda < 0.0) throw ConfigError("BlockNormalSystem: lambda must be >= 0");
  if (sys.r.size() != sys.j_y.rows()) throw ConfigError("BlockNormalSystem: r / J_y row mismatch");
  Index rows = 0;
  for (const auto& b : sys.j_z_blocks) rows += b.rows();
  if (!sys.j_z_blocks.empty() && rows != sys.j_y.rows()) {
    throw ConfigError("BlockNormalSystem: J_z block rows do not cover J_y rows");
  }
  if (sys.g_extra_y.size() != 0 && sys.g_extra_y.size() != sys.n_y()) {
    throw ConfigError("BlockNormalSystem: g_extra_y length mismatch");
  }
  if (sys.g_extra_z.size() != 0 && sys.g_extra_z.size() != sys.n_z()) {
    throw ConfigError("BlockNormalSystem: g_extra_z length mismatch");
  }
  const bool has_extra = (sys.g_extra_y.size() != 0 && sys.g_extra_y.squaredNorm() > 0.0) ||
                         (sys.g_extra_z.size() != 0 && sys.g_extra_z.squaredNorm() > 0.0);
  if (has_extra && !(sys.lambda > 0.0)) {
    throw ConfigError("BlockNormalSystem: an extra gradient term needs lambda > 0");
  }
}

// Residual of the sqrt(lambda) I rows: g_e / sqrt(lambda), zero if absent.
inline Vector augmented_residual(const Vector& extra, Index n, double lambda) {
  if (extra.size() == 0) return Vector::Zero(n);
  return extra / std::sqrt(lambda);
}

// Rows [J; sqrt(lambda) I] for the columns of one block.
inline Matrix augment(const Matrix& j, double lambda) {
  if (!(lambda > 0.0)) return j;
  Matrix out(j.rows() + j.cols(), j.cols());
  out.topRows(j.rows()) = j;
  out.bottomRows(j.cols()) = std::sqrt(lambda) * Matrix::Identity(j.cols(), j.cols());
  return out;
}

inline Vector augment_residual(const Vector& r, const Vector& extra, Index n, double lambda) {
  if (!(lambda > 0.0)) return r;
  Vector out(r.size() + n);
  out << r, augmented_residual(extra, n, lambda);
  return out;
}

// Largest column norm of [J_y, J_z]: J_s columns far below it are dependent.
inline double column_scale(const BlockNormalSystem& sys) {
  double s = sys.j_y.cols() > 0 ? sys.j_y.colwise().norm().maxCoeff() : 0.0;
  for (const auto& b : sys.j_z_blocks) {
    if (b.cols() > 0) s = std::max(s, b.colwise().norm().maxCoeff());
  }
  return s;
}

}  // namespace detail

/// Reference solver: one QR of the whole lambda-augmented dense Jacobian.
inline BlockStep solve_full_qr(const BlockNormalSystem& sys) {
  detail::validate(sys);
  const Index ny = sys.n_y();
  const Index nz = sys.n_z();
  const Index n = ny + nz;
  const Index m = sys.rows();
  const bool damped = sys.lambda > 0.0;

  Matrix j = Matrix::Zero(m + (damped ? n : 0), n);
  Vector r = Vector::Zero(j.rows());
  j.topLeftCorner(m, ny) = sys.j_y;
  r.head(m) = sys.r;
  Index row = 0;
  Index col = ny;
  for (const auto& b : sys.j_z_blocks) {
    j.block(row, col, b.rows(), b.cols()) = b;
    row += b.rows();
    col += b.cols();
  }
  if (damped) {
    j.bottomRows(n) = std::sqrt(sys.lambda) * Matrix::Identity(n, n);
    r.segment(m, ny) = detail::augmented_residual(sys.g_extra_y, ny, sys.lambda);
    r.tail(nz) = detail::augmented_residual(sys.g_extra_z, nz, sys.lambda);
  }
  const ThinQR qr(j);
  qr.require_full_rank("solve_full_qr");
  const Vector dx = -qr.solve_r(qr.apply_qt(r));
  return {dx.head(ny), dx.tail(nz)};
}

/// Block-decomposed QR for a single (dense) J_z block:
/// QR of J_z, T = Q_z^T J_y, t = Q_z^T r, J_s = J_y - Q_z T, QR of J_s,
/// dy = -R_s^{-1} Q_s^T r, dz = -R_z^{-1} (t + T dy).
inline BlockStep solve_block_qr(const BlockNormalSystem& sys) {
  detail::validate(sys);
  if (sys.j_z_blocks.size() > 1) {
    throw ConfigError("solve_block_qr: expects a single J_z block; use solve_block_qr_blockdiag");
  }
  const Index ny = sys.n_y();
  const Index nz = sys.n_z();
  const Index m = sys.rows();
  const double lambda = sys.lambda;
  const bool damped = lambda > 0.0;
  const Matrix jz = sys.j_z_blocks.empty() ? Matrix(m, 0) : sys.j_z_blocks.front();

  // z-stage rows: [data rows; z damping rows].
  const Matrix jz_aug = detail::augment(jz, lambda);
  const Index zrows = jz_aug.rows();
  Matrix jy_z = Matrix::Zero(zrows, ny);
  jy_z.topRows(m) = sys.j_y;
  const Vector r_z = detail::augment_residual(sys.r, sys.g_extra_z, nz, lambda);

  const ThinQR qz(jz_aug);
  qz.require_full_rank("solve_block_qr: R_z");
  const Matrix t_mat = qz.apply_qt(jy_z);
  const Vector t = qz.apply_qt(r_z);

  // J_s rows: [J_y - Q_z T; sqrt(lambda) I_y].
  Matrix js(zrows + (damped ? ny : 0), ny);
  js.topRows(zrows) = jy_z - qz.apply_q(t_mat);
  Vector r_s(js.rows());
  r_s.head(zrows) = r_z;
  if (damped) {
    js.bottomRows(ny) = std::sqrt(lambda) * Matrix::Identity(ny, ny);
    r_s.tail(ny) = detail::augmented_residual(sys.g_extra_y, ny, lambda);
  }
  const ThinQR qs(js);
  qs.require_full_rank("solve_block_qr: R_s", detail::column_scale(sys));
  BlockStep out;
  out.dy = -qs.solve_r(qs.apply_qt(r_s));
  out.dz = -qz.solve_r(Vector(t + t_mat * out.dy));
  return out;
}

/// Block-decomposed QR exploiting block-diagonal J_z. Each block is
/// factorized on its own; only the stacked Schur factor J_s is shared.
inline BlockStep solve_block_qr_blockdiag(const BlockNormalSystem& sys) {
  detail::validate(sys);
  const Index ny = sys.n_y();
  const Index nz = sys.n_z();
  const double lambda = sys.lambda;
  const bool damped = lambda > 0.0;
  std::vector<Matrix> empty_block;
  if (sys.j_z_blocks.empty()) empty_block.emplace_back(sys.rows(), 0);
  const std::vector<Matrix>& blocks = sys.j_z_blocks.empty() ? empty_block : sys.j_z_blocks;
  const std::size_t nblocks = blocks.size();

  struct BlockFactor {
    ThinQR qz;
    Matrix t_mat;
    Vector t;
    Index z_offset = 0;
    Index z_cols = 0;
  };
  std::vector<BlockFactor> factors(nblocks);

  Index js_rows = (damped ? ny : 0);
  for (const auto& b : blocks) js_rows += b.rows() + (damped ? b.cols() : 0);
  Matrix js(js_rows, ny);
  Vector r_s(js_rows);

  Index row = 0;
  Index srow = 0;
  Index zoff = 0;
  for (std::size_t i = 0; i < nblocks; ++i) {
    const Matrix& jz = blocks[i];
    const Index mi = jz.rows();
    const Index ci = jz.cols();
    const Vector extra_i =
        sys.g_extra_z.size() == 0 ? Vector() : Vector(sys.g_extra_z.segment(zoff, ci));
    const Matrix jz_aug = detail::augment(jz, lambda);
    const Index zrows = jz_aug.rows();
    Matrix jy_i = Matrix::Zero(zrows, ny);
    jy_i.topRows(mi) = sys.j_y.middleRows(row, mi);
    const Vector r_i = detail::augment_residual(sys.r.segment(row, mi), extra_i, ci, lambda);

    BlockFactor& f = factors[i];
    f.z_offset = zoff;
    f.z_cols = ci;
    if (ci > 0) {
      f.qz = ThinQR(jz_aug);
      if (f.qz.singular()) {
        throw SingularSystemError("solve_block_qr_blockdiag: R_z of block " + std::to_string(i) +
                                  " is rank-deficient");
      }
      f.t_mat = f.qz.apply_qt(jy_i);
      f.t = f.qz.apply_qt(r_i);
      js.middleRows(srow, zrows) = jy_i - f.qz.apply_q(f.t_mat);
    } else {
      // Every column of this block is active: its rows enter J_s unchanged.
      js.middleRows(srow, zrows) = jy_i;
    }
    r_s.segment(srow, zrows) = r_i;
    srow += zrows;
    row += mi;
    zoff += ci;
  }
  if (damped) {
    js.bottomRows(ny) = std::sqrt(lambda) * Matrix::Identity(ny, ny);
    r_s.tail(ny) = detail::augmented_residual(sys.g_extra_y, ny, lambda);
  }

  const ThinQR qs(js);
  qs.require_full_rank("solve_block_qr_blockdiag: R_s", detail::column_scale(sys));
  BlockStep out;
  out.dy = -qs.solve_r(qs.apply_qt(r_s));
  out.dz.resize(nz);
  for (const auto& f : factors) {
    if (f.z_cols == 0) continue;
    out.dz.segment(f.z_offset, f.z_cols) = -f.qz.solve_r(Vector(f.t + f.t_mat * out.dy));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operator form.

using LinearOperator = std::function<Vector(const Vector&)>;

/// B = [[B_yy, B_yz], [B_zy, B_zz]] given by products. byz maps z -> y and
/// bzy maps y -> z.
struct BlockHessianOperator {
  Index n_y = 0;
  Index n_z = 0;
  LinearOperator byy;
  LinearOperator byz;
  LinearOperator bzy;
  LinearOperator bzz;
  bool symmetric = true;

  Vector apply(const Vector& x) const {
    Vector out(n_y + n_z);
    const Vector xy = x.head(n_y);
    const Vector xz = x.tail(n_z);
    if (n_y > 0) out.head(n_y) = byy(xy) + byz(xz);
    out.tail(n_z) = (n_y > 0 ? Vector(bzy(xy)) : Vector::Zero(n_z)) + bzz(xz);
    return out;
  }
};

struct CgResult {
  Vector x;
  int iterations = 0;
  double relres = 0.0;
  bool converged = false;
};

/// Preconditioned conjugate gradients from x0 = 0. `precond` holds the
/// diagonal of M^{-1}. Stops when ||A x - b|| / ||b|| <= tol or after
/// max_iter iterations.
inline CgResult cg(const LinearOperator& op, const Vector& rhs, double tol, int max_iter,
                   const std::optional<Vector>& precond = std::nullopt) {
  CgResult out;
  out.x = Vector::Zero(rhs.size());
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  Vector r = rhs;
  auto apply_m = [&](const Vector& v) -> Vector {
    return precond ? Vector(precond->cwiseProduct(v)) : v;
  };
  Vector zvec = apply_m(r);
  Vector p = zvec;
  double rz = r.dot(zvec);
  out.relres = 1.0;
  while (out.iterations < max_iter) {
    const Vector ap = op(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) {
      throw IndefiniteError("cg: non-positive curvature p^T A p = " + std::to_string(pap));
    }
    const double step = rz / pap;
    out.x += step * p;
    r -= step * ap;
    ++out.iterations;
    out.relres = r.norm() / bnorm;
    if (out.relres <= tol) {
      out.converged = true;
      break;
    }
    zvec = apply_m(r);
    const double rz_next = r.dot(zvec);
    p = zvec + (rz_next / rz) * p;
    rz = rz_next;
  }
  return out;
}

struct MixedSolveStats {
  int cg_solves = 0;
  int cg_iterations = 0;
  int nonconverged = 0;
  double max_relres = 0.0;
};

struct MixedSolveResult {
  Vector dy;
  Vector dz;
  MixedSolveStats stats;
};

/// Mixed CG/direct solve: B_s is assembled column by column with every
/// B_zz^{-1} product done by CG, then Cholesky-factorized;
/// dy = -B_s^{-1}(g_y - B_yz B_zz^{-1} g_z), dz = -B_zz^{-1}(g_z + B_zy dy).
/// CG non-convergence is recorded in the stats and the best iterate is used.
inline MixedSolveResult solve_mixed_cg_direct(const BlockHessianOperator& op, const Vector& g_y,
                                              const Vector& g_z, double cg_tol, int cg_max) {
  if (g_y.size() != op.n_y || g_z.size() != op.n_z) {
    throw ConfigError("solve_mixed_cg_direct: gradient size mismatch");
  }
  MixedSolveResult out;
  auto zz_solve = [&](const Vector& rhs) {
    CgResult res = cg(op.bzz, rhs, cg_tol, cg_max);
    ++out.stats.cg_solves;
    out.stats.cg_iterations += res.iterations;
    out.stats.max_relres = std::max(out.stats.max_relres, res.relres);
    if (!res.converged) ++out.stats.nonconverged;
    return res.x;
  };

  const Index ny = op.n_y;
  // Columns B_zz^{-1} B_zy e_i, kept for the dz back-substitution.
  Matrix zz_inv_bzy(op.n_z, ny);
  Matrix bs(ny, ny);
  for (Index i = 0; i < ny; ++i) {
    const Vector e = Vector::Unit(ny, i);
    zz_inv_bzy.col(i) = zz_solve(op.bzy(e));
    bs.col(i) = op.byy(e) - op.byz(zz_inv_bzy.col(i));
  }
  const Vector u = zz_solve(g_z);

  out.dy = Vector::Zero(ny);
  if (ny > 0) {
    bs = 0.5 * (bs + bs.transpose()).eval();
    const Eigen::LLT<Matrix> llt(bs);
    if (llt.info() != Eigen::Success) {
      throw IndefiniteError("solve_mixed_cg_direct: Schur complement is not positive definite; "
                            "increase the damping");
    }
    const Vector g_r = g_y - op.byz(u);
    out.dy = -llt.solve(g_r);
  }
  out.dz = -(u + zz_inv_bzy * out.dy);
  return out;
}

/// Iteration count above which the mixed solver beats full CG:
/// n_y (t_y + k_z t_z) / (t_y + t_z).
inline double mixed_crossover_threshold(double t_y, double t_z, double k_z, double n_y) {
  return n_y * (t_y + k_z * t_z) / (t_y + t_z);
}

}  // namespace semired
