// Thin Householder QR with a sign-normalized R (nonnegative diagonal).
#pragma once

#include "semired/types.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <string>

namespace semired {

/// Thin QR factorization A = Q R of a tall matrix, Q kept implicitly as a
/// product of Householder reflections. Signs are normalized so that
/// diag(R) >= 0, which makes the factorization unique for full-rank A.
class ThinQR {
 public:
  ThinQR() = default;

  explicit ThinQR(const Matrix& a) : rows_(a.rows()), cols_(a.cols()) {
    if (cols_ > rows_) {
      throw SingularSystemError("ThinQR: more columns (" + std::to_string(cols_) + ") than rows (" +
                                std::to_string(rows_) + ")");
    }
    if (cols_ == 0) {
      r_.resize(0, 0);
      sign_.resize(0);
      return;
    }
    qr_.compute(a);
    r_ = qr_.matrixQR().topRows(cols_).template triangularView<Eigen::Upper>();
    sign_.resize(cols_);
    for (Index i = 0; i < cols_; ++i) {
      sign_[i] = r_(i, i) < 0.0 ? -1.0 : 1.0;
      r_.row(i) *= sign_[i];
    }
  }

  Index rows() const noexcept { return rows_; }
  Index cols() const noexcept { return cols_; }
  const Matrix& r() const noexcept { return r_; }

  /// True when some |R_ii| is zero relative to the largest diagonal entry,
  /// or to `reference` when that is larger.
  bool singular(double rel_tol = -1.0, double reference = 0.0) const {
    if (cols_ == 0) return false;
    if (rel_tol < 0.0) {
      rel_tol = static_cast<double>(std::max(rows_, cols_)) * std::numeric_limits<double>::epsilon();
    }
    const Vector d = r_.diagonal().cwiseAbs();
    const double dmax = std::max(d.maxCoeff(), reference);
    if (!(dmax > 0.0) || !std::isfinite(dmax)) return true;
    return d.minCoeff() <= rel_tol * dmax;
  }

  /// Throws SingularSystemError naming `what` when R is numerically singular.
  void require_full_rank(const std::string& what, double reference = 0.0) const {
    if (singular(-1.0, reference)) throw SingularSystemError(what + ": rank-deficient factor");
  }

  /// Q^T B (thin: cols x k).
  Matrix apply_qt(const Matrix& b) const {
    if (b.rows() != rows_) throw ConfigError("ThinQR::apply_qt: row mismatch");
    if (cols_ == 0) return Matrix(0, b.cols());
    Matrix full = qr_.householderQ().transpose() * b;
    Matrix out = full.topRows(cols_);
    for (Index i = 0; i < cols_; ++i) out.row(i) *= sign_[i];
    return out;
  }

  Vector apply_qt(const Vector& b) const { return apply_qt(Matrix(b)).col(0); }

  /// Q C (rows x k) for C with `cols` rows.
  Matrix apply_q(const Matrix& c) const {
    if (c.rows() != cols_) throw ConfigError("ThinQR::apply_q: row mismatch");
    if (cols_ == 0) return Matrix::Zero(rows_, c.cols());
    Matrix padded = Matrix::Zero(rows_, c.cols());
    for (Index i = 0; i < cols_; ++i) padded.row(i) = sign_[i] * c.row(i);
    return qr_.householderQ() * padded;
  }

  /// R^{-1} v.
  Vector solve_r(const Vector& v) const {
    return r_.template triangularView<Eigen::Upper>().solve(v);
  }

  Matrix solve_r(const Matrix& v) const {
    return r_.template triangularView<Eigen::Upper>().solve(v);
  }

  /// R^{-T} v.
  Vector solve_rt(const Vector& v) const {
    return r_.transpose().template triangularView<Eigen::Lower>().solve(v);
  }

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  Eigen::HouseholderQR<Matrix> qr_;
  Matrix r_;
  Vector sign_;
};

/// Relative error ||a - b|| / max(||b||, tiny).
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double denom = std::max(b.norm(), std::numeric_limits<double>::min());
  return (a - b).norm() / denom;
}

}  // namespace semired
