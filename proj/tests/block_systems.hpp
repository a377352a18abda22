#pragma once

#include "semired/blocksolve.hpp"
#include "test_util.hpp"

#include <Eigen/QR>

namespace semired::testing {

inline Vector stack(const BlockStep& s) {
  Vector out(s.dy.size() + s.dz.size());
  out << s.dy, s.dz;
  return out;
}

inline double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

inline Matrix dense_jacobian(const BlockNormalSystem& sys) {
  Matrix j = Matrix::Zero(sys.rows(), sys.n_y() + sys.n_z());
  j.leftCols(sys.n_y()) = sys.j_y;
  Index row = 0;
  Index col = sys.n_y();
  for (const auto& b : sys.j_z_blocks) {
    j.block(row, col, b.rows(), b.cols()) = b;
    row += b.rows();
    col += b.cols();
  }
  return j;
}

/// (J^T J + lambda I) dx = -(J^T r + g_extra) by explicit inversion.
inline Vector normal_equation_oracle(const BlockNormalSystem& sys) {
  const Matrix j = dense_jacobian(sys);
  const Index n = j.cols();
  Vector g = j.transpose() * sys.r;
  if (sys.g_extra_y.size()) g.head(sys.n_y()) += sys.g_extra_y;
  if (sys.g_extra_z.size()) g.tail(sys.n_z()) += sys.g_extra_z;
  const Matrix b = j.transpose() * j + sys.lambda * Matrix::Identity(n, n);
  return -b.inverse() * g;
}

inline BlockNormalSystem random_system(Rng& rng, Index n_y, Index blocks, Index rows_per_block,
                                Index cols_per_block, double lambda = 0.0) {
  BlockNormalSystem sys;
  const Index m = blocks * rows_per_block;
  sys.j_y = random_matrix(rng, m, n_y);
  for (Index k = 0; k < blocks; ++k) {
    sys.j_z_blocks.push_back(random_matrix(rng, rows_per_block, cols_per_block));
  }
  sys.r = random_vector(rng, m);
  sys.lambda = lambda;
  return sys;
}

/// One dense block with prescribed singular values spread to `cond`.
inline BlockNormalSystem ill_conditioned_system(Rng& rng, Index m, Index n_y, Index n_z, double cond) {
  const Index n = n_y + n_z;
  const Eigen::HouseholderQR<Matrix> qu(random_matrix(rng, m, m));
  const Eigen::HouseholderQR<Matrix> qv(random_matrix(rng, n, n));
  const Matrix u = qu.householderQ() * Matrix::Identity(m, n);
  const Matrix v = qv.householderQ() * Matrix::Identity(n, n);
  Vector s(n);
  for (Index i = 0; i < n; ++i) s[i] = std::pow(cond, -static_cast<double>(i) / (n - 1));
  const Matrix j = u * s.asDiagonal() * v.transpose();
  BlockNormalSystem sys;
  sys.j_y = j.leftCols(n_y);
  sys.j_z_blocks = {j.rightCols(n_z)};
  sys.r = random_vector(rng, m);
  return sys;
}

inline double residual_norm(const BlockNormalSystem& sys, const Vector& dx) {
  return (dense_jacobian(sys) * dx + sys.r).norm();
}


inline BlockHessianOperator dense_operator(const Matrix& b, Index ny) {
  const Index nz = b.rows() - ny;
  BlockHessianOperator op;
  op.n_y = ny;
  op.n_z = nz;
  op.byy = [b, ny](const Vector& v) { return Vector(b.topLeftCorner(ny, ny) * v); };
  op.byz = [b, ny, nz](const Vector& v) { return Vector(b.topRightCorner(ny, nz) * v); };
  op.bzy = [b, ny, nz](const Vector& v) { return Vector(b.bottomLeftCorner(nz, ny) * v); };
  op.bzz = [b, nz](const Vector& v) { return Vector(b.bottomRightCorner(nz, nz) * v); };
  return op;
}

}  // namespace semired::testing
