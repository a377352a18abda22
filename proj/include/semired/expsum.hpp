// Sums of decaying exponentials observed in n experiments with shared rates.
#pragma once

#include "semired/instance.hpp"
#include "semired/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace semired {

/// mu_k(t_i) = sum_j Z_jk exp(-y_j t_i) for k = 1..n: the model
/// (I_n kron A(y)) z with A(y)_ij = exp(-y_j t_i), z the stacked columns of Z.
inline SeparableModel exponential_model(const Vector& t, Index c, Index n = 1) {
  const Index m = t.size();
  SeparableModel model;
  model.n_y = c;
  model.n_z = c * n;
  model.n_blocks = n;
  model.rows_per_block = m;

  auto dense = [t, c](const Vector& y) -> Matrix {
    Matrix a(t.size(), c);
    for (Index j = 0; j < c; ++j) a.col(j) = (-y[j] * t.array()).exp().matrix();
    return a;
  };
  model.dense_A = dense;
  model.apply = [dense, m, c, n](const Vector& y, const Vector& z) -> Vector {
    const Matrix a = dense(y);
    Vector out(m * n);
    for (Index k = 0; k < n; ++k) out.segment(k * m, m) = a * z.segment(k * c, c);
    return out;
  };
  model.apply_At = [dense, m, c, n](const Vector& y, const Vector& v) -> Vector {
    const Matrix a = dense(y);
    Vector out(c * n);
    for (Index k = 0; k < n; ++k) out.segment(k * c, c) = a.transpose() * v.segment(k * m, m);
    return out;
  };
  model.apply_dA = [t, m, c, n](Index j, const Vector& y, const Vector& z) -> Vector {
    const Vector col = (-t.array() * (-y[j] * t.array()).exp()).matrix();
    Vector out(m * n);
    for (Index k = 0; k < n; ++k) out.segment(k * m, m) = col * z[k * c + j];
    return out;
  };
  model.apply_dAt = [t, m, c, n](Index j, const Vector& y, const Vector& v) -> Vector {
    const Vector col = (-t.array() * (-y[j] * t.array()).exp()).matrix();
    Vector out = Vector::Zero(c * n);
    for (Index k = 0; k < n; ++k) out[k * c + j] = col.dot(v.segment(k * m, m));
    return out;
  };
  model.apply_d2A = [t, m, c, n](Index j, Index l, const Vector& y, const Vector& z) -> Vector {
    Vector out = Vector::Zero(m * n);
    if (j != l) return out;
    const Vector col = (t.array().square() * (-y[j] * t.array()).exp()).matrix();
    for (Index k = 0; k < n; ++k) out.segment(k * m, m) = col * z[k * c + j];
    return out;
  };
  return model;
}

/// t_i = i * t_end / m for i = 0..m-1.
inline Vector expsum_time_grid(Index m, double t_end) {
  Vector t(m);
  for (Index i = 0; i < m; ++i) t[i] = static_cast<double>(i) * t_end / static_cast<double>(m);
  return t;
}

struct ExpSumConfig {
  Index c = 2;
  Vector rates_true = (Vector(2) << 1.0, 3.0).finished();
  Index m = 200;
  double t_end = 5.0;
  Index n = 20;
  double weight_scale = 10.0;
  double weight_spread = 1.2;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::Poisson;
  double wls_eps = 1.0;
  bool rates_nonnegative = true;
  bool noiseless = false;

  static ExpSumConfig desk() { return {}; }

  static ExpSumConfig paper() {
    ExpSumConfig cfg;
    cfg.c = 4;
    cfg.rates_true = (Vector(4) << 1.0, 2.0, 3.0, 4.0).finished();
    cfg.m = 1000;
    cfg.n = 100;
    return cfg;
  }

  void validate() const {
    if (c < 1 || rates_true.size() != c) throw ConfigError("expsum: rates_true must have c entries");
    if (m < 1 || n < 1) throw ConfigError("expsum: m and n must be positive");
    if (!(t_end > 0.0)) throw ConfigError("expsum: t_end must be positive");
    for (Index j = 0; j < c; ++j) {
      if (!(rates_true[j] > 0.0)) throw ConfigError("expsum: rates must be positive");
      for (Index k = 0; k < j; ++k) {
        if (rates_true[j] == rates_true[k]) throw ConfigError("expsum: rates must be distinct");
      }
    }
    if (loss != LossKind::Poisson && loss != LossKind::WeightedLeastSquares &&
        loss != LossKind::LeastSquares) {
      throw ConfigError("expsum: loss must be poisson, weighted-ls or least-squares");
    }
  }
};

inline nlohmann::json to_json(const ExpSumConfig& cfg) {
  nlohmann::json j;
  j["c"] = cfg.c;
  j["rates_true"] = std::vector<double>(cfg.rates_true.data(), cfg.rates_true.data() + cfg.c);
  j["m"] = cfg.m;
  j["t_end"] = cfg.t_end;
  j["n"] = cfg.n;
  j["weight_scale"] = cfg.weight_scale;
  j["weight_spread"] = cfg.weight_spread;
  j["seed"] = cfg.seed;
  j["loss"] = std::string(to_string(cfg.loss));
  j["wls_eps"] = cfg.wls_eps;
  j["rates_nonnegative"] = cfg.rates_nonnegative;
  j["noiseless"] = cfg.noiseless;
  return j;
}

/// Weights 10 exp(1.2 N(0,1)) drawn first (column by column), then counts
/// B_ik ~ Poisson(mu_k(t_i)) in the same stacked order. Noiseless mode keeps
/// b = mu exactly.
inline ProblemInstance gen_expsum(const ExpSumConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Vector t = expsum_time_grid(cfg.m, cfg.t_end);
  ProblemInstance inst;
  inst.name = "expsum";
  inst.model = exponential_model(t, cfg.c, cfg.n);

  Vector z_true(cfg.c * cfg.n);
  for (Index i = 0; i < z_true.size(); ++i) {
    z_true[i] = cfg.weight_scale * std::exp(cfg.weight_spread * rng.normal());
  }
  const Vector mu = inst.model.apply(cfg.rates_true, z_true);
  Vector b(mu.size());
  for (Index i = 0; i < mu.size(); ++i) {
    b[i] = cfg.noiseless ? mu[i] : static_cast<double>(rng.poisson(mu[i]));
  }

  switch (cfg.loss) {
    case LossKind::Poisson: inst.loss = LossModel::poisson(b); break;
    case LossKind::WeightedLeastSquares:
      inst.loss = LossModel::weighted_least_squares(b, cfg.wls_eps);
      break;
    default: inst.loss = LossModel::least_squares(b); break;
  }

  const Index n_total = cfg.c + cfg.c * cfg.n;
  const double inf = std::numeric_limits<double>::infinity();
  inst.box.lo = Vector::Constant(n_total, -inf);
  inst.box.up = Vector::Constant(n_total, inf);
  if (cfg.rates_nonnegative) inst.box.lo.head(cfg.c).setZero();
  inst.box.lo.tail(cfg.c * cfg.n).setZero();

  inst.x0.resize(n_total);
  for (Index j = 0; j < cfg.c; ++j) {
    inst.x0[j] = cfg.c == 1 ? 0.5 + 0.5 * static_cast<double>(cfg.c)
                            : 0.5 + static_cast<double>(cfg.c) * static_cast<double>(j) /
                                        static_cast<double>(cfg.c - 1);
  }
  inst.x0.tail(cfg.c * cfg.n).setConstant(cfg.weight_scale);
  inst.x_true.resize(n_total);
  inst.x_true << cfg.rates_true, z_true;
  inst.config = to_json(cfg);
  return inst;
}

/// Rates sorted ascending (the model is invariant to permuting components).
inline Vector sorted_rates(const Vector& y) {
  Vector s = y;
  std::sort(s.data(), s.data() + s.size());
  return s;
}

}  // namespace semired
