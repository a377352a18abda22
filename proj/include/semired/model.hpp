// Separable forward maps mu = (I_n kron A(y)) z, objective assembly and
// Gauss-Newton Jacobian blocks.
#pragma once

#include "semired/loss.hpp"
#include "semired/types.hpp"

#include <functional>
#include <vector>

namespace semired {

/// The map (y, z) -> A(y) z in operator form.
///
/// z is the concatenation of `n_blocks` blocks of `n_z / n_blocks` columns;
/// the output is the concatenation of `n_blocks` blocks of `rows_per_block`
/// entries, block k depending only on z-block k. All callbacks operate on the
/// full (all-block) vectors. `dense_A` returns the shared per-block matrix and
/// is only needed by the direct (QR) solver paths; `apply_d2A` supplies exact
/// second derivatives and is only needed by the reduced-Newton oracle.
struct SeparableModel {
  using Apply = std::function<Vector(const Vector& y, const Vector& z)>;
  using ApplyDerivative = std::function<Vector(Index j, const Vector& y, const Vector& z)>;
  using ApplySecond = std::function<Vector(Index j, Index k, const Vector& y, const Vector& z)>;
  using Dense = std::function<Matrix(const Vector& y)>;

  Index n_y = 0;
  Index n_z = 0;
  Index n_blocks = 1;
  Index rows_per_block = 0;

  Apply apply;
  ApplyDerivative apply_dA;
  Apply apply_At;
  ApplyDerivative apply_dAt;
  Dense dense_A;
  ApplySecond apply_d2A;

  Index columns_per_block() const { return n_z / n_blocks; }
  Index output_size() const { return rows_per_block * n_blocks; }
  bool has_dense() const { return static_cast<bool>(dense_A); }
};

struct ObjectiveEval {
  double f = 0.0;
  Vector g_y;
  Vector g_z;
  Vector mu;
  CurvatureBundle bundle;
};

namespace detail {

inline void check_dims(const SeparableModel& model, const Vector& y, const Vector& z) {
  if (y.size() != model.n_y || z.size() != model.n_z) {
    throw ConfigError("separable model: parameter dimensions do not match");
  }
}

}  // namespace detail

/// F(y, z) = L(A(y) z) with gradients by adjoint products.
inline ObjectiveEval objective(const SeparableModel& model, const LossModel& loss, const Vector& y,
                               const Vector& z) {
  detail::check_dims(model, y, z);
  ObjectiveEval out;
  out.mu = model.apply(y, z);
  out.f = loss.value(out.mu);
  out.bundle = loss.curvature(out.mu);
  out.g_y.resize(model.n_y);
  for (Index j = 0; j < model.n_y; ++j) {
    out.g_y[j] = model.apply_dA(j, y, z).dot(out.bundle.grad);
  }
  out.g_z = model.apply_At(y, out.bundle.grad);
  return out;
}

struct JacobianBlocks {
  Matrix j_y;                 // (rows_per_block * n_blocks) x n_y
  std::vector<Matrix> j_z;    // n_blocks blocks of rows_per_block x c
};

/// Weighted Jacobian blocks: column j of J_y is w .* (dA/dy_j) z and block k
/// of J_z is diag(w_k) A(y). J_z is never assembled as one sparse matrix.
inline JacobianBlocks jacobian_blocks(const SeparableModel& model, const Vector& y,
                                      const Vector& z, const Vector& w) {
  detail::check_dims(model, y, z);
  if (!model.has_dense()) {
    throw UnsupportedOperation(
        "jacobian_blocks: model has no dense A(y); use the operator (CG) solver path");
  }
  if (w.size() != model.output_size()) throw ConfigError("jacobian_blocks: w has wrong length");
  JacobianBlocks out;
  const Index m = model.rows_per_block;
  out.j_y.resize(model.output_size(), model.n_y);
  for (Index j = 0; j < model.n_y; ++j) {
    out.j_y.col(j) = w.cwiseProduct(model.apply_dA(j, y, z));
  }
  const Matrix a = model.dense_A(y);
  out.j_z.reserve(static_cast<std::size_t>(model.n_blocks));
  for (Index k = 0; k < model.n_blocks; ++k) {
    out.j_z.push_back(w.segment(k * m, m).asDiagonal() * a);
  }
  return out;
}

/// E_zy: column j is (dA/dy_j)^T grad, the mixed second-order residual term.
inline Matrix second_order_cross(const SeparableModel& model, const Vector& y, const Vector& grad) {
  if (grad.size() != model.output_size()) throw ConfigError("second_order_cross: bad grad length");
  Matrix e(model.n_z, model.n_y);
  for (Index j = 0; j < model.n_y; ++j) e.col(j) = model.apply_dAt(j, y, grad);
  return e;
}

}  // namespace semired
