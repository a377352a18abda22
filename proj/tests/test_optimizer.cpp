#include "semired/experiment.hpp"
#include "semired/expsum.hpp"
#include "semired/optimizer.hpp"
#include "semired/separable_problem.hpp"
#include "semired/toy.hpp"

#include "recording_problem.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>

using namespace semired;
using semired::testing::RecordingProblem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// f = 1/2 (x - c)^T H (x - c), exact Hessian model.
class QuadraticProblem : public Problem {
 public:
  QuadraticProblem(Matrix h, Vector c, Index ny = 0) : h_(std::move(h)), c_(std::move(c)), ny_(ny) {}

  Index size() const override { return c_.size(); }
  Index n_y() const override { return ny_; }
  double value(const Vector& x) const override { return 0.5 * (x - c_).dot(h_ * (x - c_)); }
  Evaluation evaluate(const Vector& x) const override { return {value(x), h_ * (x - c_)}; }
  Vector solve_inactive(const Vector&, const Vector& g, const std::vector<char>& inactive,
                        double lambda, const LinearSolverOptions&, SolveInfo*) const override {
    std::vector<Index> idx;
    for (std::size_t i = 0; i < inactive.size(); ++i) {
      if (inactive[i]) idx.push_back(static_cast<Index>(i));
    }
    const Index k = static_cast<Index>(idx.size());
    Matrix b(k, k);
    Vector rhs(k);
    for (Index a = 0; a < k; ++a) {
      rhs[a] = -g[idx[a]];
      for (Index c = 0; c < k; ++c) b(a, c) = h_(idx[a], idx[c]);
    }
    b.diagonal().array() += lambda;
    const Vector d = b.ldlt().solve(rhs);
    Vector dx = Vector::Zero(size());
    for (Index a = 0; a < k; ++a) dx[idx[a]] = d[a];
    return dx;
  }

 private:
  Matrix h_;
  Vector c_;
  Index ny_;
};

BoundBox box_of(Vector lo, Vector up) {
  BoundBox b;
  b.lo = std::move(lo);
  b.up = std::move(up);
  return b;
}

BoundBox unbounded(Index n) { return box_of(Vector::Constant(n, -kInf), Vector::Constant(n, kInf)); }

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

struct CurveFit {
  Vector t;
  Vector b;
};

CurveFit curve_fit_data() {
  CurveFit d;
  d.t = expsum_time_grid(30, 3.0);
  d.b.resize(30);
  for (Index i = 0; i < 30; ++i) {
    d.b[i] = 2.0 * std::exp(-1.3 * d.t[i]) + 0.02 * std::sin(3.0 * i);
  }
  return d;
}

double toy_error(const Vector& x) { return std::hypot(x[0] - 0.7, x[1] - 1.0); }

}  // namespace

TEST(Project, InsideIsIdentity) {
  const BoundBox box = box_of(Vector::Zero(3), Vector::Ones(3));
  const Vector x = vec({0.1, 0.5, 0.9});
  EXPECT_EQ(project(x, box), x);
}

TEST(Project, ClampLow) {
  EXPECT_EQ(project(vec({-5.0}), box_of(vec({0.0}), vec({1.0}))), vec({0.0}));
}

TEST(Project, PerComponentMedian) {
  const BoundBox box = box_of(Vector::Zero(3), Vector::Ones(3));
  EXPECT_EQ(project(vec({0.5, 2.0, -1.0}), box), vec({0.5, 1.0, 0.0}));
}

TEST(ActiveSet, UnboundedIsEmpty) {
  EXPECT_TRUE(active_set(vec({0.0, 5.0}), vec({1.0, -1.0}), unbounded(2), 1e-3).empty());
}

TEST(ActiveSet, GradientIntoLowerBound) {
  const BoundBox box = box_of(vec({0.0}), vec({kInf}));
  EXPECT_EQ(active_set(vec({0.0}), vec({1.0}), box, 0.0), std::vector<Index>{0});
}

TEST(ActiveSet, DescentIntoInteriorIsInactive) {
  const BoundBox box = box_of(vec({0.0}), vec({kInf}));
  EXPECT_TRUE(active_set(vec({0.0}), vec({-1.0}), box, 0.0).empty());
}

TEST(ActiveSet, UpperBoundAndEpsilon) {
  const BoundBox box = box_of(Vector::Zero(2), Vector::Ones(2));
  EXPECT_EQ(active_set(vec({0.99, 0.5}), vec({-1.0, 1.0}), box, 0.02), std::vector<Index>{0});
  EXPECT_TRUE(active_set(vec({0.99, 0.5}), vec({-1.0, 1.0}), box, 0.0).empty());
}

TEST(ActiveSet, FixedVariablesAlwaysActive) {
  const BoundBox box = box_of(vec({0.3, 0.0}), vec({0.3, 1.0}));
  EXPECT_EQ(active_set(vec({0.3, 0.5}), vec({0.0, 0.0}), box, 0.0), std::vector<Index>{0});
}

TEST(ProjectedGradient, TinyGradientStillCounts) {
  const BoundBox box = unbounded(1);
  EXPECT_GT(projected_gradient_norm(vec({1.0}), vec({1e-20}), box), 0.0);
  const BoundBox lo0 = box_of(vec({0.0}), vec({kInf}));
  EXPECT_DOUBLE_EQ(projected_gradient_norm(vec({0.0}), vec({2.0}), lo0), 0.0);
  EXPECT_DOUBLE_EQ(projected_gradient_norm(vec({0.5}), vec({2.0}), lo0), 0.5);
}

TEST(SearchDirection, AllActiveIsNegativeGradient) {
  QuadraticProblem q(Matrix::Identity(2, 2), Vector::Zero(2));
  const Vector g = vec({1.5, -2.0});
  const Vector dx = search_direction(q, Vector::Zero(2), g, {1, 1}, 1e-3, LinearSolverOptions{});
  EXPECT_EQ(dx, -g);
}

TEST(SearchDirection, NewtonStepOnQuadratic) {
  Rng rng(3);
  const Matrix h = semired::testing::random_spd(rng, 4, 1.0);
  const Vector c = semired::testing::random_vector(rng, 4);
  QuadraticProblem q(h, c);
  const Vector x = Vector::Zero(4);
  const Vector dx = search_direction(q, x, q.evaluate(x).g, {0, 0, 0, 0}, 0.0, LinearSolverOptions{});
  EXPECT_LT((x + dx - c).norm(), 1e-12);
}

TEST(SearchDirection, MixedActiveInactive) {
  QuadraticProblem q(2.0 * Matrix::Identity(2, 2), vec({1.0, 1.0}));
  const Vector x = Vector::Zero(2);
  const Vector g = q.evaluate(x).g;
  const Vector dx = search_direction(q, x, g, {1, 0}, 0.0, LinearSolverOptions{});
  EXPECT_DOUBLE_EQ(dx[0], -g[0]);
  EXPECT_NEAR(dx[1], 1.0, 1e-14);
}

TEST(SearchDirection, BlockQrMatchesFullQrOnExpFit) {
  ExpSumConfig cfg = ExpSumConfig::desk();
  cfg.loss = LossKind::Poisson;
  cfg.seed = 5;
  const ProblemInstance inst = gen_expsum(cfg);
  const auto problem = inst.problem();
  const Vector x = inst.x0;
  const Vector g = problem->evaluate(x).g;
  const std::vector<char> active(static_cast<std::size_t>(x.size()), 0);
  LinearSolverOptions full;
  full.solver = LinearSolver::FullQr;
  const Vector ref = search_direction(*problem, x, g, active, 1e-3, full);
  for (LinearSolver s : {LinearSolver::BlockQr, LinearSolver::BlockDiagQr}) {
    LinearSolverOptions o;
    o.solver = s;
    const Vector dx = search_direction(*problem, x, g, active, 1e-3, o);
    EXPECT_LT((dx - ref).norm() / ref.norm(), 1e-9) << to_string(s);
  }
}

TEST(Armijo, ZeroDecreaseRejected) {
  const Vector x = Vector::Zero(2);
  const Vector g = vec({1.0, 2.0});
  const Vector dx = -g;
  EXPECT_FALSE(armijo_accept(3.0, 3.0, g, x, x + dx, dx, {0, 0}, 1e-4, 1.0));
}

TEST(Armijo, HugeDecreaseAccepted) {
  const Vector x = Vector::Zero(2);
  const Vector g = vec({1.0, 2.0});
  const Vector dx = -g;
  EXPECT_TRUE(armijo_accept(3.0, -kInf, g, x, x + dx, dx, {0, 0}, 1e-4, 1.0));
  EXPECT_TRUE(armijo_accept(3.0, -1e300, g, x, x + dx, dx, {0, 0}, 1e-4, 1.0));
  EXPECT_FALSE(armijo_accept(3.0, kInf, g, x, x + dx, dx, {0, 0}, 1e-4, 1.0));
  EXPECT_FALSE(armijo_accept(3.0, std::nan(""), g, x, x + dx, dx, {0, 0}, 1e-4, 1.0));
}

TEST(Armijo, UnconstrainedIsClassical) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = semired::testing::random_vector(rng, 5);
    const Vector g = semired::testing::random_vector(rng, 5);
    const Vector dx = semired::testing::random_vector(rng, 5);
    const double step = std::pow(0.2, trial % 4);
    const std::vector<char> none(5, 0);
    const double bound = armijo_bound(g, x, x + step * dx, dx, none, 1e-4, step);
    const double classical = 1e-4 * g.dot(step * dx);
    EXPECT_NEAR(bound, classical, 1e-13 * std::abs(classical));
  }
}

TEST(Armijo, ActiveTermUsesProjectedDisplacement) {
  const Vector x = vec({0.0, 1.0});
  const Vector g = vec({2.0, -1.0});
  const Vector dx = vec({-2.0, 3.0});
  const Vector trial = vec({0.0, 1.6});
  const double bound = armijo_bound(g, x, trial, dx, {1, 0}, 0.5, 0.2);
  EXPECT_DOUBLE_EQ(bound, 0.5 * (-1.0 * 0.2 * 3.0 + 2.0 * 0.0));
}

TEST(AdjustTrial, DisabledReturnsInput) {
  ToyConfig tc;
  tc.rho = 1e-2;
  const ProblemInstance inst = gen_toy(tc);
  OptimizerConfig cfg;
  cfg.adjust_k_max = 0;
  const Vector xb = vec({0.3, 0.02});
  const AdjustResult r = adjust_trial(*inst.problem(), inst.box, xb, cfg);
  EXPECT_EQ(r.x, xb);
  EXPECT_EQ(r.inner_iters, 0);
}

TEST(AdjustTrial, LeastSquaresReachesClosedForm) {
  const Vector t = expsum_time_grid(40, 4.0);
  const SeparableModel model = exponential_model(t, 2, 1);
  Rng rng(2);
  const Vector b = semired::testing::random_uniform(rng, 40, 0.5, 2.0);
  SeparableProblem problem(model, LossModel::least_squares(b));
  const Vector y = vec({0.4, 2.5});
  Vector xb(4);
  xb << y, 0.0, 0.0;
  OptimizerConfig cfg;
  cfg.adjust_k_max = 50;
  cfg.adjust_tau = std::numeric_limits<double>::min();
  cfg.linear.solver = LinearSolver::FullQr;
  const AdjustResult r = adjust_trial(problem, unbounded(4), xb, cfg);
  const Vector zm = model.dense_A(y).colPivHouseholderQr().solve(b);
  EXPECT_LT((r.x.tail(2) - zm).norm() / zm.norm(), 1e-8);
  EXPECT_EQ(r.x.head(2), y);
  EXPECT_LE(r.f, r.f_before);
}

TEST(AdjustTrial, ToyOffValleyDecreases) {
  for (double rho : {1e-2, 1e-6}) {
    ExperimentSpec spec;
    spec.problem = "toy";
    spec.rho = rho;
    spec.adjust = true;
    const ProblemInstance inst = build_instance(spec, 1);
    const OptimizerConfig cfg = build_optimizer_config(spec, &inst);
    ToyConfig tc;
    tc.rho = rho;
    const double y = 0.3;
    const double z = 0.02;
    const AdjustResult r = adjust_trial(*inst.problem(), inst.box, vec({y, z}), cfg);
    EXPECT_EQ(r.x[0], y);
    EXPECT_LT(toy_objective(tc, r.x[0], r.x[1]).f, toy_objective(tc, y, z).f) << rho;
  }
}

TEST(Run, QuadraticInterior) {
  QuadraticProblem q(Matrix::Identity(1, 1), vec({3.0}));
  const BoundBox box = box_of(vec({0.0}), vec({10.0}));
  const RunResult res = run(q, box, vec({0.0}), OptimizerConfig{});
  EXPECT_EQ(res.trace.status, RunStatus::Converged);
  EXPECT_LE(res.trace.records.size() - 1, 3u);
  EXPECT_NEAR(res.x[0], 3.0, 1e-6);
  EXPECT_LE(res.trace.records.back().proj_grad_norm, res.trace.tau);
}

TEST(Run, QuadraticAtBoundary) {
  QuadraticProblem q(Matrix::Identity(1, 1), vec({-3.0}));
  const BoundBox box = box_of(vec({0.0}), vec({10.0}));
  const RunResult res = run(q, box, vec({1.0}), OptimizerConfig{});
  EXPECT_EQ(res.trace.status, RunStatus::Converged);
  EXPECT_EQ(res.x[0], 0.0);
  const Vector g = q.evaluate(res.x).g;
  EXPECT_EQ(active_set(res.x, g, box, 0.0), std::vector<Index>{0});
}

TEST(Run, InfeasibleStartIsProjected) {
  QuadraticProblem q(Matrix::Identity(2, 2), vec({0.5, 0.5}));
  const BoundBox box = box_of(Vector::Zero(2), Vector::Ones(2));
  RecordingProblem rec(std::make_shared<QuadraticProblem>(q));
  run(rec, box, vec({-4.0, 7.0}), OptimizerConfig{});
  EXPECT_EQ(rec.iterates().front(), vec({0.0, 1.0}));
}

TEST(Run, ZeroIterationCap) {
  QuadraticProblem q(Matrix::Identity(1, 1), vec({3.0}));
  OptimizerConfig cfg;
  cfg.k_max_outer = 0;
  const RunResult res = run(q, unbounded(1), vec({0.0}), cfg);
  EXPECT_EQ(res.trace.status, RunStatus::IterationCap);
  EXPECT_EQ(res.trace.records.size(), 1u);
  EXPECT_EQ(res.x[0], 0.0);
}

TEST(Run, LineSearchFailureTerminates) {
  // Gradient that disagrees with the objective: no step is ever accepted.
  class Liar : public QuadraticProblem {
   public:
    Liar() : QuadraticProblem(Matrix::Identity(1, 1), Vector::Zero(1)) {}
    Evaluation evaluate(const Vector& x) const override { return {value(x), -x}; }
  };
  Liar q;
  const RunResult res = run(q, unbounded(1), vec({1.0}), OptimizerConfig{});
  EXPECT_EQ(res.trace.status, RunStatus::LineSearchFailure);
  EXPECT_EQ(res.trace.records.back().backtracks, 61);
}

TEST(Run, ToyAdjustedRegression) {
  ExperimentSpec spec;
  spec.problem = "toy";
  spec.rho = 1e-6;
  spec.adjust = true;
  const ProblemInstance inst = build_instance(spec, 1);
  const OptimizerConfig base = build_optimizer_config(spec, &inst);
  int first = -1;
  for (int k = 0; k <= 50 && first < 0; ++k) {
    OptimizerConfig cfg = base;
    cfg.k_max_outer = k;
    const RunResult res = run(*inst.problem(), inst.box, inst.x0, cfg);
    if (toy_error(res.x) <= 1e-6) first = k;
  }
  EXPECT_EQ(first, 7);
}

// Independent damped Gauss-Newton line search for mu = z exp(-y t), LS loss.
TEST(Run, ClassicalGaussNewtonOracle) {
  const CurveFit d = curve_fit_data();
  const SeparableProblem inner(exponential_model(d.t, 1, 1), LossModel::least_squares(d.b));
  const auto rec = std::make_shared<RecordingProblem>(std::make_shared<SeparableProblem>(inner));
  const Vector x0 = vec({-1.0, 0.1});

  OptimizerConfig cfg;
  cfg.linear.solver = LinearSolver::FullQr;
  cfg.k_max_outer = 10;
  cfg.tau = std::numeric_limits<double>::min();
  cfg.lambda0 = 1e-2;
  const RunResult res = run(*rec, unbounded(2), x0, cfg);

  auto residual = [&](const Vector& x) -> Vector {
    return (x[1] * (-x[0] * d.t.array()).exp() - d.b.array()).matrix();
  };
  auto f_of = [&](const Vector& x) { return 0.5 * residual(x).squaredNorm(); };
  std::vector<Vector> oracle{x0};
  Vector x = x0;
  double lambda = 1e-2;
  for (int k = 0; k < 10; ++k) {
    Matrix j(d.t.size(), 2);
    const Vector e = (-x[0] * d.t.array()).exp().matrix();
    j.col(0) = (-x[1] * d.t.array() * e.array()).matrix();
    j.col(1) = e;
    const Vector r = residual(x);
    const Vector g = j.transpose() * r;
    const Matrix h = j.transpose() * j + lambda * Matrix::Identity(2, 2);
    const Vector dx = -h.ldlt().solve(g);
    const double f = f_of(x);
    double s = 1.0;
    double f_new = f_of(x + dx);
    while (f_new - f > 1e-4 * s * g.dot(dx)) {
      s *= 0.2;
      f_new = f_of(x + s * dx);
    }
    const double pred = -0.5 * g.dot(dx);
    const double q = pred > 0.0 ? (f - f_new) / pred : 0.0;
    if (q > 0.7) lambda = std::max(lambda / 2.0, 1e-20);
    if (q < 0.01) lambda = std::min(10.0 * lambda, 1e20);
    x = x + s * dx;
    oracle.push_back(x);
  }
  bool backtracked = false;
  for (const auto& r : res.trace.records) backtracked = backtracked || r.step_exponent > 0;
  EXPECT_TRUE(backtracked);
  ASSERT_EQ(rec->iterates().size(), oracle.size());
  for (std::size_t k = 0; k < oracle.size(); ++k) {
    EXPECT_LT((rec->iterates()[k] - oracle[k]).norm() / oracle[k].norm(), 1e-10) << k;
  }
}

TEST(RunProperties, TraceInvariants) {
  struct Case {
    std::string problem;
    double rho;
    bool adjust;
  };
  for (const Case& c : {Case{"toy", 1e-2, false}, Case{"toy", 1e-2, true}, Case{"toy", 1e-6, true},
                        Case{"expsum", 0.0, false}, Case{"expsum", 0.0, true}}) {
    ExperimentSpec spec;
    spec.problem = c.problem;
    if (c.problem == "toy") spec.rho = c.rho;
    spec.adjust = c.adjust;
    const ProblemInstance inst = build_instance(spec, 3);
    const OptimizerConfig cfg = build_optimizer_config(spec, &inst);
    RecordingProblem rec(inst.problem());
    const RunResult res = run(rec, inst.box, inst.x0, cfg);
    const auto rep = semired::testing::check_run_properties(res, inst.box, rec.iterates());
    const std::string label = c.problem + (c.adjust ? " adjust" : " plain");
    EXPECT_TRUE(rep.monotone) << label << ": " << rep.detail;
    EXPECT_TRUE(rep.armijo) << label << ": " << rep.detail;
    EXPECT_TRUE(rep.feasible) << label << ": " << rep.detail;
    EXPECT_TRUE(rep.stationary) << label;
    EXPECT_TRUE(rep.adjustment_safe) << label << ": " << rep.detail;
  }
}

TEST(RunProperties, BoundedQuadraticInvariants) {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix h = semired::testing::random_spd(rng, 6, 0.1);
    const Vector c = 3.0 * semired::testing::random_vector(rng, 6);
    auto q = std::make_shared<QuadraticProblem>(h, c, 2);
    const BoundBox box = box_of(-Vector::Ones(6), Vector::Ones(6));
    OptimizerConfig cfg;
    cfg.adjust_k_max = trial % 2 ? 2 : 0;
    cfg.tau = 1e-6;
    RecordingProblem rec(q);
    const RunResult res = run(rec, box, Vector::Zero(6), cfg);
    const auto rep = semired::testing::check_run_properties(res, box, rec.iterates());
    EXPECT_TRUE(rep.monotone && rep.armijo && rep.feasible && rep.stationary &&
                rep.adjustment_safe)
        << trial << ": " << rep.detail;
    EXPECT_EQ(res.trace.status, RunStatus::Converged) << trial;
  }
}

TEST(OptimizerConfig, Validation) {
  OptimizerConfig cfg;
  cfg.delta = 0.6;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = OptimizerConfig{};
  cfg.rho_bad = 0.8;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = OptimizerConfig{};
  cfg.k_max_outer = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(OptimizerConfig{}.validate());
}
