// Separable loss functions L(mu) = sum_i c_i * l_i(mu_i) and the curvature
// quantities consumed by Gauss-Newton Hessian models.
#pragma once

#include "semired/types.hpp"

#include <cmath>
#include <limits>
#include <string_view>

namespace semired {

enum class LossKind { LeastSquares, WeightedLeastSquares, Poisson, Huber };

inline std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::LeastSquares: return "least-squares";
    case LossKind::WeightedLeastSquares: return "weighted-ls";
    case LossKind::Poisson: return "poisson";
    case LossKind::Huber: return "huber";
  }
  return "unknown";
}

/// Gradient and diagonal curvature of a separable loss at one point.
///
/// `w` is the diagonal of W = (grad^2 L)^{1/2} and `r` the weighted residual
/// W^{-1} grad L. Components with zero curvature get r_i = 0, so w_i * r_i
/// equals grad_i only where w_i > 0.
struct CurvatureBundle {
  Vector grad;
  Vector curv;
  Vector w;
  Vector r;
};

/// Elementwise 1 / max(sqrt(b_i), eps): the variance weights of the
/// weighted least-squares surrogate for Poisson data.
inline Vector weighted_ls_weights(const Vector& b, double eps) {
  if (!(eps > 0.0)) throw ConfigError("weighted_ls_weights: eps must be positive");
  Vector out(b.size());
  for (Index i = 0; i < b.size(); ++i) {
    if (b[i] < 0.0) throw DomainError("weighted_ls_weights: negative observation", i);
    out[i] = 1.0 / std::max(std::sqrt(b[i]), eps);
  }
  return out;
}

class LossModel {
 public:
  static LossModel least_squares(Vector b) {
    return LossModel(LossKind::LeastSquares, std::move(b), 0.0, 0.0);
  }

  /// l_i = 0.5 * omega_i^2 * (mu_i - b_i)^2 with omega from weighted_ls_weights.
  static LossModel weighted_least_squares(Vector b, double eps = 1.0) {
    LossModel loss(LossKind::WeightedLeastSquares, std::move(b), eps, 0.0);
    loss.weights_ = weighted_ls_weights(loss.b_, eps).array().square();
    return loss;
  }

  /// l_i = mu_i - b_i log mu_i (the log(b_i!) constant is dropped).
  static LossModel poisson(Vector b) {
    for (Index i = 0; i < b.size(); ++i) {
      if (b[i] < 0.0) throw DomainError("poisson loss: negative count", i);
    }
    return LossModel(LossKind::Poisson, std::move(b), 0.0, 0.0);
  }

  /// l_i = x^2/2 for |x| <= t, t(|x| - t/2) otherwise, with x = mu_i - b_i.
  static LossModel huber(Vector b, double t) {
    if (!(t > 0.0)) throw ConfigError("huber loss: threshold must be positive");
    return LossModel(LossKind::Huber, std::move(b), 0.0, t);
  }

  /// Multiplies each component's loss by c_i >= 0 (on top of any
  /// kind-specific weighting).
  LossModel with_component_weights(const Vector& c) const {
    if (c.size() != b_.size()) throw ConfigError("component weights: size mismatch");
    if ((c.array() < 0.0).any()) throw ConfigError("component weights must be nonnegative");
    LossModel out = *this;
    out.weights_ = weights_.cwiseProduct(c);
    return out;
  }

  LossKind kind() const noexcept { return kind_; }
  const Vector& data() const noexcept { return b_; }
  const Vector& weights() const noexcept { return weights_; }
  Index size() const noexcept { return b_.size(); }
  double eps() const noexcept { return eps_; }
  double threshold() const noexcept { return t_; }

  /// Per-component lower bound of the open domain of mu.
  Vector domain_lo() const {
    Vector lo = Vector::Constant(size(), -std::numeric_limits<double>::infinity());
    if (kind_ == LossKind::Poisson) {
      for (Index i = 0; i < size(); ++i) {
        if (b_[i] > 0.0) lo[i] = 0.0;
      }
    }
    return lo;
  }

  double value(const Vector& mu) const {
    check_size(mu);
    double sum = 0.0;
    for (Index i = 0; i < size(); ++i) {
      check_domain(mu[i], i);
      sum += weights_[i] * component_value(mu[i], b_[i]);
    }
    return sum;
  }

  CurvatureBundle curvature(const Vector& mu) const {
    check_size(mu);
    CurvatureBundle out;
    out.grad.resize(size());
    out.curv.resize(size());
    out.w.resize(size());
    out.r.resize(size());
    for (Index i = 0; i < size(); ++i) {
      check_domain(mu[i], i);
      const auto [d1, d2] = component_derivatives(mu[i], b_[i]);
      out.grad[i] = weights_[i] * d1;
      out.curv[i] = weights_[i] * d2;
      out.w[i] = std::sqrt(out.curv[i]);
      out.r[i] = out.w[i] > 0.0 ? out.grad[i] / out.w[i] : 0.0;
    }
    return out;
  }

 private:
  LossModel(LossKind kind, Vector b, double eps, double t)
      : kind_(kind), b_(std::move(b)), weights_(Vector::Ones(b_.size())), eps_(eps), t_(t) {}

  void check_size(const Vector& mu) const {
    if (mu.size() != size()) throw ConfigError("loss: mu has wrong length");
  }

  void check_domain(double mu, Index i) const {
    if (std::isnan(mu)) throw DomainError("loss: NaN model value", i);
    if (kind_ == LossKind::Poisson && b_[i] > 0.0 && !(mu > 0.0)) {
      throw DomainError("poisson loss: nonpositive mean with positive count", i);
    }
  }

  double component_value(double mu, double b) const {
    switch (kind_) {
      case LossKind::LeastSquares:
      case LossKind::WeightedLeastSquares:
        return 0.5 * (mu - b) * (mu - b);
      case LossKind::Poisson:
        return b > 0.0 ? mu - b * std::log(mu) : mu;
      case LossKind::Huber: {
        const double x = std::abs(mu - b);
        return x <= t_ ? 0.5 * x * x : t_ * (x - 0.5 * t_);
      }
    }
    return 0.0;
  }

  struct Derivs {
    double d1, d2;
  };

  Derivs component_derivatives(double mu, double b) const {
    switch (kind_) {
      case LossKind::LeastSquares:
      case LossKind::WeightedLeastSquares:
        return {mu - b, 1.0};
      case LossKind::Poisson:
        if (b > 0.0) return {1.0 - b / mu, b / (mu * mu)};
        return {1.0, 0.0};
      case LossKind::Huber: {
        const double x = mu - b;
        if (std::abs(x) <= t_) return {x, 1.0};
        return {x > 0.0 ? t_ : -t_, 0.0};
      }
    }
    return {0.0, 0.0};
  }

  LossKind kind_;
  Vector b_;
  Vector weights_;
  double eps_;
  double t_;
};

inline double loss_value(const LossModel& loss, const Vector& mu) { return loss.value(mu); }

inline CurvatureBundle curvature_bundle(const LossModel& loss, const Vector& mu) {
  return loss.curvature(mu);
}

}  // namespace semired
