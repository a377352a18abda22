// F(y, z) = L(A(y) z) as an optimizer Problem with a Gauss-Newton model.
#pragma once

#include "semired/blocksolve.hpp"
#include "semired/loss.hpp"
#include "semired/model.hpp"
#include "semired/problem.hpp"

#include <utility>
#include <vector>

namespace semired {

class SeparableProblem : public Problem {
 public:
  SeparableProblem(SeparableModel model, LossModel loss)
      : model_(std::move(model)), loss_(std::move(loss)) {
    if (loss_.size() != model_.output_size()) {
      throw ConfigError("SeparableProblem: loss data length differs from model output size");
    }
    if (model_.n_blocks < 1 || model_.n_z % model_.n_blocks != 0) {
      throw ConfigError("SeparableProblem: n_z must be a multiple of n_blocks");
    }
  }

  const SeparableModel& model() const { return model_; }
  const LossModel& loss() const { return loss_; }

  Index size() const override { return model_.n_y + model_.n_z; }
  Index n_y() const override { return model_.n_y; }

  Vector y_of(const Vector& x) const { return x.head(model_.n_y); }
  Vector z_of(const Vector& x) const { return x.tail(model_.n_z); }

  double value(const Vector& x) const override {
    return loss_.value(model_.apply(y_of(x), z_of(x)));
  }

  Evaluation evaluate(const Vector& x) const override {
    const ObjectiveEval oe = objective(model_, loss_, y_of(x), z_of(x));
    Evaluation ev;
    ev.f = oe.f;
    ev.g.resize(size());
    ev.g << oe.g_y, oe.g_z;
    return ev;
  }

  Vector solve_inactive(const Vector& x, const Vector& g, const std::vector<char>& inactive,
                        double lambda, const LinearSolverOptions& opts,
                        SolveInfo* info) const override {
    const Vector y = y_of(x);
    const Vector z = z_of(x);
    const Vector mu = model_.apply(y, z);
    const CurvatureBundle bundle = loss_.curvature(mu);

    Partition part = partition(inactive);
    Vector dx = Vector::Zero(size());
    switch (opts.solver) {
      case LinearSolver::FullQr:
      case LinearSolver::BlockQr:
      case LinearSolver::BlockDiagQr: {
        const BlockNormalSystem sys = normal_system(y, z, bundle, part, lambda, opts.solver);
        BlockStep step;
        if (opts.solver == LinearSolver::FullQr) {
          step = solve_full_qr(sys);
        } else if (opts.solver == LinearSolver::BlockQr) {
          step = solve_block_qr(sys);
        } else {
          step = solve_block_qr_blockdiag(sys);
        }
        scatter(part, step.dy, step.dz, dx);
        break;
      }
      case LinearSolver::MixedCgDirect: {
        const BlockHessianOperator op = hessian_operator(y, z, bundle, part, lambda);
        const Vector gy = gather(g, part.y_idx, 0);
        const Vector gz = gather(g, part.z_idx, model_.n_y);
        const MixedSolveResult res =
            solve_mixed_cg_direct(op, gy, gz, opts.inner_cg_tol, opts.inner_cg_max);
        if (info) {
          info->cg_iterations += res.stats.cg_iterations;
          info->cg_nonconverged += res.stats.nonconverged;
        }
        scatter(part, res.dy, res.dz, dx);
        break;
      }
      case LinearSolver::FullCg: {
        const BlockHessianOperator op = hessian_operator(y, z, bundle, part, lambda);
        const Index ny = op.n_y;
        Vector rhs(ny + op.n_z);
        rhs << gather(g, part.y_idx, 0), gather(g, part.z_idx, model_.n_y);
        Vector precond = Vector::Ones(rhs.size());
        precond.head(ny).setConstant(opts.cg_precond_y);
        const CgResult res =
            cg([&op](const Vector& v) { return op.apply(v); }, -rhs, opts.cg_tol, opts.cg_max,
               precond);
        if (info) {
          info->cg_iterations += res.iterations;
          if (!res.converged) ++info->cg_nonconverged;
        }
        scatter(part, res.x.head(ny), res.x.tail(op.n_z), dx);
        break;
      }
    }
    return dx;
  }

  /// The damped Gauss-Newton system restricted to the inactive set (exposed
  /// for solver cross-checks).
  BlockNormalSystem normal_system(const Vector& x, const std::vector<char>& inactive,
                                  double lambda, LinearSolver solver) const {
    const Vector y = y_of(x);
    const Vector z = z_of(x);
    const CurvatureBundle bundle = loss_.curvature(model_.apply(y, z));
    return normal_system(y, z, bundle, partition(inactive), lambda, solver);
  }

 private:
  struct Partition {
    std::vector<Index> y_idx;                    // inactive y indices
    std::vector<Index> z_idx;                    // inactive z indices (into z)
    std::vector<std::vector<Index>> z_by_block;  // inactive z columns, local to each block
  };

  Partition partition(const std::vector<char>& inactive) const {
    if (static_cast<Index>(inactive.size()) != size()) {
      throw ConfigError("solve_inactive: mask length mismatch");
    }
    Partition p;
    const Index c = model_.columns_per_block();
    p.z_by_block.resize(static_cast<std::size_t>(model_.n_blocks));
    for (Index i = 0; i < model_.n_y; ++i) {
      if (inactive[static_cast<std::size_t>(i)]) p.y_idx.push_back(i);
    }
    for (Index i = 0; i < model_.n_z; ++i) {
      if (inactive[static_cast<std::size_t>(model_.n_y + i)]) {
        p.z_idx.push_back(i);
        p.z_by_block[static_cast<std::size_t>(i / c)].push_back(i % c);
      }
    }
    return p;
  }

  static Vector gather(const Vector& v, const std::vector<Index>& idx, Index offset) {
    Vector out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = v[offset + idx[i]];
    return out;
  }

  Vector scatter_z(const std::vector<Index>& idx, const Vector& v) const {
    Vector out = Vector::Zero(model_.n_z);
    for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = v[static_cast<Index>(i)];
    return out;
  }

  void scatter(const Partition& p, const Vector& dy, const Vector& dz, Vector& dx) const {
    for (std::size_t i = 0; i < p.y_idx.size(); ++i) dx[p.y_idx[i]] = dy[static_cast<Index>(i)];
    for (std::size_t i = 0; i < p.z_idx.size(); ++i) {
      dx[model_.n_y + p.z_idx[i]] = dz[static_cast<Index>(i)];
    }
  }

  // grad - w .* r: the gradient of components the Gauss-Newton model cannot
  // see (zero curvature). Empty when there is none.
  static Vector invisible_gradient(const CurvatureBundle& b) {
    Vector e = b.grad - b.w.cwiseProduct(b.r);
    if (e.cwiseAbs().maxCoeff() == 0.0) return Vector();
    return e;
  }

  BlockNormalSystem normal_system(const Vector& y, const Vector& z, const CurvatureBundle& bundle,
                                  const Partition& part, double lambda,
                                  LinearSolver solver) const {
    const JacobianBlocks jb = jacobian_blocks(model_, y, z, bundle.w);
    BlockNormalSystem sys;
    sys.lambda = lambda;
    sys.r = bundle.r;
    sys.j_y.resize(jb.j_y.rows(), static_cast<Index>(part.y_idx.size()));
    for (std::size_t i = 0; i < part.y_idx.size(); ++i) {
      sys.j_y.col(static_cast<Index>(i)) = jb.j_y.col(part.y_idx[i]);
    }
    const Index m = model_.rows_per_block;
    for (std::size_t k = 0; k < jb.j_z.size(); ++k) {
      const auto& cols = part.z_by_block[k];
      Matrix blk(m, static_cast<Index>(cols.size()));
      for (std::size_t i = 0; i < cols.size(); ++i) {
        blk.col(static_cast<Index>(i)) = jb.j_z[k].col(cols[i]);
      }
      sys.j_z_blocks.push_back(std::move(blk));
    }
    if (solver == LinearSolver::BlockQr && sys.j_z_blocks.size() > 1) {
      // Single dense block holding the whole block-diagonal J_z.
      Matrix dense = Matrix::Zero(sys.rows(), sys.n_z());
      Index row = 0;
      Index col = 0;
      for (const auto& b : sys.j_z_blocks) {
        dense.block(row, col, b.rows(), b.cols()) = b;
        row += b.rows();
        col += b.cols();
      }
      sys.j_z_blocks.assign(1, std::move(dense));
    }

    const Vector e = invisible_gradient(bundle);
    if (e.size() != 0) {
      sys.g_extra_y.resize(static_cast<Index>(part.y_idx.size()));
      for (std::size_t i = 0; i < part.y_idx.size(); ++i) {
        sys.g_extra_y[static_cast<Index>(i)] = model_.apply_dA(part.y_idx[i], y, z).dot(e);
      }
      sys.g_extra_z = gather(model_.apply_At(y, e), part.z_idx, 0);
    }
    return sys;
  }

  BlockHessianOperator hessian_operator(const Vector& y, const Vector& z,
                                        const CurvatureBundle& bundle, const Partition& part,
                                        double lambda) const {
    const Index ny = static_cast<Index>(part.y_idx.size());
    Matrix jy(model_.output_size(), ny);
    for (Index i = 0; i < ny; ++i) {
      jy.col(i) = bundle.w.cwiseProduct(model_.apply_dA(part.y_idx[static_cast<std::size_t>(i)], y, z));
    }
    const Vector w = bundle.w;
    const Vector w2 = bundle.curv;
    const std::vector<Index> zi = part.z_idx;
    const SeparableModel* model = &model_;

    BlockHessianOperator op;
    op.n_y = ny;
    op.n_z = static_cast<Index>(zi.size());
    op.byy = [jy, lambda](const Vector& v) -> Vector {
      return jy.transpose() * (jy * v) + lambda * v;
    };
    op.byz = [this, jy, w, zi, y, model](const Vector& vz) -> Vector {
      return jy.transpose() * w.cwiseProduct(model->apply(y, scatter_z(zi, vz)));
    };
    op.bzy = [jy, w, zi, y, model](const Vector& vy) -> Vector {
      return gather(model->apply_At(y, w.cwiseProduct(jy * vy)), zi, 0);
    };
    op.bzz = [this, w2, zi, y, model, lambda](const Vector& vz) -> Vector {
      const Vector az = model->apply(y, scatter_z(zi, vz));
      return gather(model->apply_At(y, w2.cwiseProduct(az)), zi, 0) + lambda * vz;
    };
    return op;
  }

  SeparableModel model_;
  LossModel loss_;
};

}  // namespace semired
