// Two-parameter Huber deconvolution toy with a curved valley as rho -> 0.
#pragma once

#include "semired/instance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace semired {

struct ToyConfig {
  double rho = 1e-2;
  double huber_t = 0.3;
  double y_true = 0.7;
  double z_true = 1.0;
  double y0 = 0.02;
  double z0 = 0.02;

  void validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("toy: rho must lie in (0, 1]");
    if (!(huber_t > 0.0)) throw ConfigError("toy: huber threshold must be positive");
  }
};

inline nlohmann::json to_json(const ToyConfig& cfg) {
  return {{"rho", cfg.rho},       {"huber_t", cfg.huber_t}, {"y_true", cfg.y_true},
          {"z_true", cfg.z_true}, {"y0", cfg.y0},           {"z0", cfg.z0}};
}

/// q1 = yz + (1 - yz) rho on the support, q2 = (1 - y) z rho off it.
inline double toy_q1(double rho, double y, double z) { return y * z + (1.0 - y * z) * rho; }
inline double toy_q2(double rho, double y, double z) { return (1.0 - y) * z * rho; }

struct ToyEval {
  double f = 0.0;
  double g_y = 0.0;
  double g_z = 0.0;
};

/// F = rho l(q1 - q1t) + (1 - rho) l(q2 - q2t), Huber l (m/2 factor dropped).
inline ToyEval toy_objective(const ToyConfig& cfg, double y, double z) {
  const double t = cfg.huber_t;
  const double rho = cfg.rho;
  auto ell = [t](double x) { return std::abs(x) <= t ? 0.5 * x * x : t * (std::abs(x) - 0.5 * t); };
  auto dell = [t](double x) { return std::clamp(x, -t, t); };
  const double x1 = toy_q1(rho, y, z) - toy_q1(rho, cfg.y_true, cfg.z_true);
  const double x2 = toy_q2(rho, y, z) - toy_q2(rho, cfg.y_true, cfg.z_true);
  ToyEval out;
  out.f = rho * ell(x1) + (1.0 - rho) * ell(x2);
  const double d1 = rho * dell(x1);
  const double d2 = (1.0 - rho) * dell(x2);
  out.g_y = d1 * (1.0 - rho) * z - d2 * rho * z;
  out.g_z = d1 * (1.0 - rho) * y + d2 * rho * (1.0 - y);
  return out;
}

/// The toy as a separable model: A(y) = [(1 - rho) y; rho (1 - y)], data
/// b = (q1t - rho, q2t), component weights (rho, 1 - rho).
inline SeparableModel toy_model(double rho) {
  SeparableModel model;
  model.n_y = 1;
  model.n_z = 1;
  model.n_blocks = 1;
  model.rows_per_block = 2;
  auto dense = [rho](const Vector& y) -> Matrix {
    Matrix a(2, 1);
    a << (1.0 - rho) * y[0], rho * (1.0 - y[0]);
    return a;
  };
  model.dense_A = dense;
  model.apply = [dense](const Vector& y, const Vector& z) -> Vector { return dense(y) * z; };
  model.apply_At = [dense](const Vector& y, const Vector& v) -> Vector {
    return dense(y).transpose() * v;
  };
  model.apply_dA = [rho](Index, const Vector&, const Vector& z) -> Vector {
    return (Vector(2) << (1.0 - rho) * z[0], -rho * z[0]).finished();
  };
  model.apply_dAt = [rho](Index, const Vector&, const Vector& v) -> Vector {
    return Vector::Constant(1, (1.0 - rho) * v[0] - rho * v[1]);
  };
  model.apply_d2A = [](Index, Index, const Vector&, const Vector&) -> Vector {
    return Vector::Zero(2);
  };
  return model;
}

inline ProblemInstance gen_toy(const ToyConfig& cfg) {
  cfg.validate();
  const double rho = cfg.rho;
  ProblemInstance inst;
  inst.name = "toy";
  inst.model = toy_model(rho);
  const Vector b = (Vector(2) << toy_q1(rho, cfg.y_true, cfg.z_true) - rho,
                    toy_q2(rho, cfg.y_true, cfg.z_true))
                       .finished();
  inst.loss = LossModel::huber(b, cfg.huber_t)
                  .with_component_weights((Vector(2) << rho, 1.0 - rho).finished());
  inst.box.lo = Vector::Zero(2);
  inst.box.up = (Vector(2) << 1.0, std::numeric_limits<double>::infinity()).finished();
  inst.x0 = (Vector(2) << cfg.y0, cfg.z0).finished();
  inst.x_true = (Vector(2) << cfg.y_true, cfg.z_true).finished();
  inst.config = to_json(cfg);
  return inst;
}

}  // namespace semired
