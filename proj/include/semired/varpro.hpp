// Variable projection on dense single-block problems: reduced Jacobians,
// Hessian models and the reduced vs simplified semi-reduced iterations.
#pragma once

#include "semired/blocksolve.hpp"
#include "semired/linalg.hpp"
#include "semired/loss.hpp"
#include "semired/model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <string_view>
#include <vector>

namespace semired {

/// z_m = A^+ b through a thin QR; rank deficiency is an error.
inline Vector zm_least_squares(const Matrix& a, const Vector& b) {
  if (a.rows() != b.size()) throw ConfigError("zm_least_squares: dimension mismatch");
  const ThinQR qr(a);
  qr.require_full_rank("zm_least_squares");
  return qr.solve_r(qr.apply_qt(b));
}

namespace detail {

struct WeightedSetup {
  Matrix a_bar;  // W A
  Matrix j_y;    // columns w .* (dA/dy_j) z
  ThinQR qr;     // of a_bar
  CurvatureBundle bundle;
};

inline WeightedSetup weighted_setup(const SeparableModel& model, const LossModel& loss,
                                    const Vector& y, const Vector& z) {
  if (model.n_blocks != 1 || !model.has_dense()) {
    throw UnsupportedOperation("varpro: dense single-block models only");
  }
  WeightedSetup s;
  s.bundle = loss.curvature(model.apply(y, z));
  const JacobianBlocks jb = jacobian_blocks(model, y, z, s.bundle.w);
  s.j_y = jb.j_y;
  s.a_bar = jb.j_z.front();
  s.qr = ThinQR(s.a_bar);
  s.qr.require_full_rank("varpro: weighted A");
  return s;
}

// (I - Q Q^T) X.
inline Matrix project_out(const ThinQR& qr, const Matrix& x) {
  return x - qr.apply_q(qr.apply_qt(x));
}

}  // namespace detail

/// Applies the projector I - Q_z Q_z^T of the weighted A(y) to x.
inline Matrix orthogonal_complement_apply(const SeparableModel& model, const LossModel& loss,
                                          const Vector& y, const Vector& z, const Matrix& x) {
  return detail::project_out(detail::weighted_setup(model, loss, y, z).qr, x);
}

/// Kaufman's reduced Jacobian J_s = -(I - Q_z Q_z^T) J_y.
inline Matrix kaufman_jacobian(const SeparableModel& model, const LossModel& loss, const Vector& y,
                               const Vector& z) {
  const detail::WeightedSetup s = detail::weighted_setup(model, loss, y, z);
  return -detail::project_out(s.qr, s.j_y);
}

/// (Abar^+)^T (dA/dy_j)^T grad for every j, as Q_z R_z^{-T} v.
inline Matrix gp_correction(const SeparableModel& model, const detail::WeightedSetup& s,
                            const Vector& y) {
  Matrix m(s.a_bar.rows(), model.n_y);
  for (Index j = 0; j < model.n_y; ++j) {
    const Vector v = model.apply_dAt(j, y, s.bundle.grad);
    m.col(j) = s.qr.apply_q(Matrix(s.qr.solve_rt(v))).col(0);
  }
  return m;
}

/// Golub-Pereyra reduced Jacobian K_s = J_s + M.
inline Matrix golub_pereyra_jacobian(const SeparableModel& model, const LossModel& loss,
                                     const Vector& y, const Vector& z) {
  const detail::WeightedSetup s = detail::weighted_setup(model, loss, y, z);
  return -detail::project_out(s.qr, s.j_y) + gp_correction(model, s, y);
}

struct UduFactors {
  Matrix u;     // [[I, X_yz X_zz^{-1}], [0, I]]
  Matrix x_s;   // X_yy - X_yz X_zz^{-1} X_zy
  Matrix x_zz;
};

/// X = U diag(X_s, X_zz) U^T with the first `split` variables as the y block.
inline UduFactors udu_factor(const Matrix& x, Index split) {
  const Index n = x.rows();
  if (x.cols() != n || split < 0 || split > n) throw ConfigError("udu_factor: bad shape or split");
  const Index nz = n - split;
  UduFactors f;
  f.x_zz = x.bottomRightCorner(nz, nz);
  const Eigen::FullPivLU<Matrix> lu(f.x_zz);
  if (nz > 0 && !lu.isInvertible()) throw SingularSystemError("udu_factor: X_zz is singular");
  const Matrix u_yz = nz > 0 ? Matrix(lu.solve(x.bottomLeftCorner(nz, split)).transpose())
                             : Matrix(split, 0);
  f.u = Matrix::Identity(n, n);
  f.u.topRightCorner(split, nz) = u_yz;
  f.x_s = x.topLeftCorner(split, split) - u_yz * x.bottomLeftCorner(nz, split);
  f.x_s = 0.5 * (f.x_s + f.x_s.transpose()).eval();
  return f;
}

/// Dense Gauss-Newton matrix G = J^T J with J = [J_y, W A].
inline Matrix gauss_newton_matrix(const SeparableModel& model, const LossModel& loss,
                                  const Vector& y, const Vector& z) {
  const detail::WeightedSetup s = detail::weighted_setup(model, loss, y, z);
  Matrix j(s.j_y.rows(), model.n_y + model.n_z);
  j << s.j_y, s.a_bar;
  return j.transpose() * j;
}

/// H = U Hhat U^T where U comes from the block factorization of G + E and
/// Hhat is the block diagonal of U^{-1} G U^{-T}. E_yy is never needed.
inline Matrix gp_hessian_model(const SeparableModel& model, const LossModel& loss, const Vector& y,
                               const Vector& z) {
  const Index ny = model.n_y;
  const Index nz = model.n_z;
  const Matrix g = gauss_newton_matrix(model, loss, y, z);
  const Vector grad = loss.curvature(model.apply(y, z)).grad;
  const Matrix e_zy = second_order_cross(model, y, grad);

  const Matrix g_zz = g.bottomRightCorner(nz, nz);
  const Eigen::LLT<Matrix> llt(g_zz);
  if (llt.info() != Eigen::Success) throw SingularSystemError("gp_hessian_model: G_zz singular");
  const Matrix x_zy = g.bottomLeftCorner(nz, ny) + e_zy;
  const Matrix u_yz = llt.solve(x_zy).transpose();

  const UduFactors gf = udu_factor(g, ny);
  Matrix h_hat = Matrix::Zero(ny + nz, ny + nz);
  h_hat.topLeftCorner(ny, ny) = gf.x_s + e_zy.transpose() * llt.solve(e_zy);
  h_hat.bottomRightCorner(nz, nz) = g_zz;
  Matrix u = Matrix::Identity(ny + nz, ny + nz);
  u.topRightCorner(ny, nz) = u_yz;
  Matrix h = u * h_hat * u.transpose();
  return 0.5 * (h + h.transpose());
}

/// Least-squares exact Hessian of F at (y, z): G + E with E_yy from the
/// model's second derivatives.
inline Matrix ls_exact_hessian(const SeparableModel& model, const Vector& b, const Vector& y,
                               const Vector& z) {
  if (!model.apply_d2A) throw UnsupportedOperation("exact Hessian needs apply_d2A");
  const LossModel loss = LossModel::least_squares(b);
  Matrix h = gauss_newton_matrix(model, loss, y, z);
  const Vector grad = model.apply(y, z) - b;
  const Matrix e_zy = second_order_cross(model, y, grad);
  const Index ny = model.n_y;
  h.bottomLeftCorner(model.n_z, ny) += e_zy;
  h.topRightCorner(ny, model.n_z) += e_zy.transpose();
  for (Index j = 0; j < ny; ++j) {
    for (Index k = 0; k < ny; ++k) h(j, k) += grad.dot(model.apply_d2A(j, k, y, z));
  }
  return h;
}

/// Schur complement of the zz block of the exact Hessian at (y, z_m(y)): the
/// Hessian of the reduced functional.
inline Matrix reduced_newton_hessian(const SeparableModel& model, const Vector& b, const Vector& y) {
  const Vector z = zm_least_squares(model.dense_A(y), b);
  const Matrix h = ls_exact_hessian(model, b, y, z);
  return udu_factor(h, model.n_y).x_s;
}

struct ReducedEval {
  Vector y;
  Vector z_m;
  double f_r = 0.0;
  Vector g_r;
  Matrix jac_r;
};

enum class ReducedJacobian { Kaufman, GolubPereyra };

namespace detail {

// Columns of dA/dy_j as a dense matrix.
inline Matrix dense_derivative(const SeparableModel& model, Index j, const Vector& y) {
  Matrix d(model.rows_per_block, model.n_z);
  for (Index k = 0; k < model.n_z; ++k) d.col(k) = model.apply_dA(j, y, Vector::Unit(model.n_z, k));
  return d;
}

}  // namespace detail

/// Classical variable projection for 0.5 ||A(y) z - b||^2 from explicit
/// projector and pseudoinverse matrices: F_r = 0.5 ||P^perp b||^2, Kaufman
/// J_r = -P^perp dA_j A^+ b, Golub-Pereyra K_r = -(D_j + D_j^T) b with
/// D_j = P^perp dA_j A^+. The gradient is K_r^T P^perp b in both cases.
inline ReducedEval reduced_ls_eval(const SeparableModel& model, const Vector& b, const Vector& y,
                                   ReducedJacobian kind) {
  const Matrix a = model.dense_A(y);
  const ThinQR qr(a);
  qr.require_full_rank("reduced_ls_eval");
  const Index m = a.rows();
  const Matrix q = qr.apply_q(Matrix::Identity(a.cols(), a.cols()));
  const Matrix pinv = qr.solve_r(Matrix(q.transpose()));
  const Matrix p_perp = Matrix::Identity(m, m) - q * q.transpose();
  const Vector pb = p_perp * b;

  ReducedEval out;
  out.y = y;
  out.z_m = pinv * b;
  out.f_r = 0.5 * pb.squaredNorm();
  Matrix k_r(m, model.n_y);
  Matrix j_r(m, model.n_y);
  for (Index j = 0; j < model.n_y; ++j) {
    const Matrix d = p_perp * detail::dense_derivative(model, j, y) * pinv;
    k_r.col(j) = -(d + d.transpose()) * b;
    j_r.col(j) = -d * b;
  }
  out.g_r = k_r.transpose() * pb;
  out.jac_r = kind == ReducedJacobian::Kaufman ? j_r : k_r;
  return out;
}

enum class EquivalenceMode { Reduced, SemiReducedSimplified };
enum class HessianModel { GaussNewton, GolubPereyra };

inline std::string_view to_string(EquivalenceMode m) {
  return m == EquivalenceMode::Reduced ? "reduced" : "semi-reduced-simplified";
}
inline std::string_view to_string(HessianModel h) {
  return h == HessianModel::GaussNewton ? "gauss-newton" : "gp";
}

struct LineSearchConfig {
  double delta = 1e-4;
  double alpha = 0.2;
  int max_backtracks = 60;
};

/// Undamped line-search iterations on a least-squares separable problem.
/// Reduced mode: Newton-type steps on F_r with B_r = J_r^T J_r (or K_r^T
/// K_r). Simplified semi-reduced mode: B_s dy = -grad_y F(y, z_m) with B = G
/// (block QR) or B = H, trial points (y + s dy, z_m(y + s dy)). Returns the
/// y iterates including y0; stops early if a line search fails.
inline std::vector<Vector> equivalence_run(const SeparableModel& model, const Vector& b,
                                           const Vector& y0, EquivalenceMode mode,
                                           HessianModel hessian, int n_iter,
                                           const LineSearchConfig& ls = {}) {
  const LossModel loss = LossModel::least_squares(b);
  auto f_full = [&](const Vector& y) {
    const Vector z = zm_least_squares(model.dense_A(y), b);
    return std::make_pair(loss.value(model.apply(y, z)), z);
  };

  std::vector<Vector> iterates{y0};
  Vector y = y0;
  for (int k = 0; k < n_iter; ++k) {
    double f0 = 0.0;
    Vector g;
    Vector dy;
    if (mode == EquivalenceMode::Reduced) {
      const ReducedEval re = reduced_ls_eval(
          model, b, y,
          hessian == HessianModel::GaussNewton ? ReducedJacobian::Kaufman
                                               : ReducedJacobian::GolubPereyra);
      f0 = re.f_r;
      g = re.g_r;
      const ThinQR qr(re.jac_r);
      qr.require_full_rank("equivalence_run: reduced Jacobian");
      dy = -qr.solve_r(Vector(qr.solve_rt(g)));
    } else {
      const auto [f, z] = f_full(y);
      f0 = f;
      const ObjectiveEval oe = objective(model, loss, y, z);
      g = oe.g_y;
      if (hessian == HessianModel::GaussNewton) {
        const JacobianBlocks jb = jacobian_blocks(model, y, z, oe.bundle.w);
        BlockNormalSystem sys;
        sys.j_y = jb.j_y;
        sys.j_z_blocks = jb.j_z;
        sys.r = oe.bundle.r;
        dy = solve_block_qr(sys).dy;
      } else {
        const Matrix h = gp_hessian_model(model, loss, y, z);
        const Eigen::LLT<Matrix> llt(udu_factor(h, model.n_y).x_s);
        if (llt.info() != Eigen::Success) throw IndefiniteError("equivalence_run: H_s not SPD");
        dy = -llt.solve(g);
      }
    }

    bool accepted = false;
    double step = 1.0;
    for (int j = 0; j <= ls.max_backtracks; ++j, step *= ls.alpha) {
      const Vector y_trial = y + step * dy;
      const double f_trial = mode == EquivalenceMode::Reduced
                                 ? 0.5 * (b - model.dense_A(y_trial) *
                                                  zm_least_squares(model.dense_A(y_trial), b))
                                             .squaredNorm()
                                 : f_full(y_trial).first;
      if (f_trial - f0 <= ls.delta * g.dot(step * dy)) {
        y = y_trial;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    iterates.push_back(y);
  }
  return iterates;
}

}  // namespace semired
