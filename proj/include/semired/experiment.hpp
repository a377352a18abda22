// Experiment harness: builds instances from a spec, runs the optimizer over
// seeds, writes trace CSVs and summaries, and hosts the varpro check suite.
#pragma once

#include "semired/deconv.hpp"
#include "semired/expsum.hpp"
#include "semired/optimizer.hpp"
#include "semired/toy.hpp"
#include "semired/varpro.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace semired {

struct ExperimentSpec {
  std::string problem = "toy";  // expsum | deconv | toy
  std::string preset = "desk";  // desk | paper
  bool elimination = true;
  bool adjust = false;
  std::string solver;          // empty: chosen from `elimination`
  std::string loss = "poisson";  // expsum: poisson | weighted-ls | least-squares
  std::vector<std::uint64_t> seeds{1};
  std::string out = "out";

  // Problem knobs; unset keeps the preset value.
  std::optional<double> rho;
  std::optional<Index> side;
  std::optional<Index> frames;
  std::optional<Index> segments;
  std::optional<Index> m;
  std::optional<Index> n;

  // Optimizer knobs; unset keeps the per-problem default.
  std::optional<int> k_max;
  std::optional<int> adjust_k_max;
  std::optional<double> lambda0;
  std::optional<double> tau;

  void validate() const {
    if (problem != "expsum" && problem != "deconv" && problem != "toy") {
      throw ConfigError("unknown problem '" + problem + "'");
    }
    if (preset != "desk" && preset != "paper") throw ConfigError("preset must be desk or paper");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (!solver.empty()) {
      const LinearSolver s = parse_linear_solver(solver);
      const bool operator_only = s == LinearSolver::MixedCgDirect || s == LinearSolver::FullCg;
      if (problem == "deconv" && !operator_only) {
        throw ConfigError("deconv supports only mixed-cg-direct and full-cg");
      }
      if (problem != "deconv" && operator_only) {
        throw ConfigError(std::string(to_string(s)) + " is only available for deconv");
      }
    }
    if (problem == "expsum" && loss != "poisson" && loss != "weighted-ls" &&
        loss != "least-squares") {
      throw ConfigError("expsum loss must be poisson, weighted-ls or least-squares");
    }
  }
};

/// Reads a JSON object whose keys mirror the CLI flags.
inline void apply_json(ExperimentSpec& spec, const nlohmann::json& j) {
  auto on_off = [](const nlohmann::json& v) {
    if (v.is_boolean()) return v.get<bool>();
    const std::string s = v.get<std::string>();
    if (s == "on") return true;
    if (s == "off") return false;
    throw ConfigError("expected on/off, got '" + s + "'");
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "problem") spec.problem = v.get<std::string>();
    else if (key == "preset") spec.preset = v.get<std::string>();
    else if (key == "elimination") spec.elimination = on_off(v);
    else if (key == "adjust") spec.adjust = on_off(v);
    else if (key == "solver") spec.solver = v.get<std::string>();
    else if (key == "loss") spec.loss = v.get<std::string>();
    else if (key == "seeds") spec.seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "out") spec.out = v.get<std::string>();
    else if (key == "rho") spec.rho = v.get<double>();
    else if (key == "side") spec.side = v.get<Index>();
    else if (key == "frames") spec.frames = v.get<Index>();
    else if (key == "segments") spec.segments = v.get<Index>();
    else if (key == "m") spec.m = v.get<Index>();
    else if (key == "n") spec.n = v.get<Index>();
    else if (key == "k_max") spec.k_max = v.get<int>();
    else if (key == "adjust_k_max") spec.adjust_k_max = v.get<int>();
    else if (key == "lambda0") spec.lambda0 = v.get<double>();
    else if (key == "tau") spec.tau = v.get<double>();
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

/// "1..20", "3", "1,4,9" or a mix such as "1..3,7".
inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    const auto dots = part.find("..");
    try {
      if (dots == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const std::uint64_t lo = std::stoull(part.substr(0, dots));
        const std::uint64_t hi = std::stoull(part.substr(dots + 2));
        if (hi < lo) throw ConfigError("empty seed range '" + part + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("bad seed list '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("bad seed list '" + text + "'");
  return out;
}

inline LossKind parse_loss(const std::string& name) {
  for (auto k : {LossKind::LeastSquares, LossKind::WeightedLeastSquares, LossKind::Poisson,
                 LossKind::Huber}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown loss '" + name + "'");
}

inline ProblemInstance build_instance(const ExperimentSpec& spec, std::uint64_t seed) {
  const bool paper = spec.preset == "paper";
  if (spec.problem == "expsum") {
    ExpSumConfig cfg = paper ? ExpSumConfig::paper() : ExpSumConfig::desk();
    if (spec.m) cfg.m = *spec.m;
    if (spec.n) cfg.n = *spec.n;
    cfg.loss = parse_loss(spec.loss);
    cfg.seed = seed;
    return gen_expsum(cfg);
  }
  if (spec.problem == "deconv") {
    DeconvConfig cfg = paper ? DeconvConfig::paper() : DeconvConfig::desk();
    if (spec.side) cfg.side = *spec.side;
    if (spec.frames) cfg.n_frames = *spec.frames;
    if (spec.segments) cfg.segments = *spec.segments;
    cfg.seed = seed;
    return gen_deconv(cfg);
  }
  ToyConfig cfg;
  if (spec.rho) cfg.rho = *spec.rho;
  return gen_toy(cfg);
}

inline LinearSolver resolve_solver(const ExperimentSpec& spec) {
  if (!spec.solver.empty()) return parse_linear_solver(spec.solver);
  if (spec.problem == "deconv") {
    return spec.elimination ? LinearSolver::MixedCgDirect : LinearSolver::FullCg;
  }
  return spec.elimination ? LinearSolver::BlockDiagQr : LinearSolver::FullQr;
}

/// Per-problem defaults: adjustment uses 3 inner iterations (1 for the toy),
/// outer caps of 200 (expsum), 100 (deconv) and 50 (toy). Passing the
/// instance enables the toy's scale-relative damping
/// lambda0 = 1e-3 max diag G(x0) and its effectively-zero tau.
inline OptimizerConfig build_optimizer_config(const ExperimentSpec& spec,
                                              const ProblemInstance* inst = nullptr) {
  OptimizerConfig cfg;
  cfg.linear.solver = resolve_solver(spec);
  if (spec.problem == "expsum") {
    cfg.k_max_outer = 200;
    cfg.adjust_k_max = spec.adjust ? 3 : 0;
  } else if (spec.problem == "deconv") {
    cfg.k_max_outer = 100;
    cfg.adjust_k_max = spec.adjust ? 3 : 0;
  } else {
    cfg.k_max_outer = 50;
    cfg.adjust_k_max = spec.adjust ? 1 : 0;
    if (inst != nullptr) {
      const Index ny = inst->n_y();
      const Matrix g = gauss_newton_matrix(inst->model, inst->loss, inst->x0.head(ny),
                                           inst->x0.tail(inst->n_z()));
      cfg.lambda0 = std::max(1e-3 * g.diagonal().maxCoeff(), cfg.lambda_min);
      cfg.adjust_lambda0 = cfg.lambda0;
      cfg.tau = std::numeric_limits<double>::min();
      cfg.adjust_tau = std::numeric_limits<double>::min();
    }
  }
  if (spec.k_max) cfg.k_max_outer = *spec.k_max;
  if (spec.adjust_k_max && spec.adjust) cfg.adjust_k_max = *spec.adjust_k_max;
  if (spec.lambda0) cfg.lambda0 = cfg.adjust_lambda0 = *spec.lambda0;
  if (spec.tau) cfg.tau = *spec.tau;
  return cfg;
}

// ---------------------------------------------------------------------------
// Traces.

inline const std::vector<std::string>& trace_columns() {
  static const std::vector<std::string> cols{"iter",      "f",          "proj_grad_norm",
                                             "lambda",    "step_exp",   "backtracks",
                                             "inner_iters", "cpu_ms",   "active_count"};
  return cols;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17e", v);
  return buf;
}

inline void write_trace_csv(std::ostream& os, const RunTrace& trace) {
  const auto& cols = trace_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const IterationRecord& r : trace.records) {
    os << r.k << ',' << format_double(r.f) << ',' << format_double(r.proj_grad_norm) << ','
       << format_double(r.lambda) << ',' << r.step_exponent << ',' << r.backtracks << ','
       << r.inner_iters << ',' << format_double(r.cpu_ms) << ',' << r.active_count << '\n';
  }
}

struct TraceCheck {
  bool ok = true;
  std::size_t rows = 0;
  std::string message;
};

/// Header and column count, finite values, and f nonincreasing row to row.
inline TraceCheck check_trace(std::istream& is) {
  TraceCheck out;
  auto fail = [&out](const std::string& msg) {
    out.ok = false;
    out.message = msg;
    return out;
  };
  std::string line;
  if (!std::getline(is, line)) return fail("empty trace");
  std::string expected;
  for (std::size_t i = 0; i < trace_columns().size(); ++i) {
    expected += (i ? "," : "") + trace_columns()[i];
  }
  if (line != expected) return fail("unexpected header: " + line);
  double f_prev = std::numeric_limits<double>::infinity();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    ++out.rows;
    const std::string where = "row " + std::to_string(out.rows);
    if (fields.size() != trace_columns().size()) return fail(where + ": wrong column count");
    double f = 0.0;
    try {
      f = std::stod(fields[1]);
    } catch (const std::exception&) {
      return fail(where + ": unparsable f");
    }
    if (!std::isfinite(f)) return fail(where + ": non-finite f");
    if (f > f_prev) {
      return fail(where + ": f increased from " + format_double(f_prev) + " to " + format_double(f));
    }
    f_prev = f;
  }
  if (out.rows == 0) return fail("no data rows");
  out.message = "ok";
  return out;
}

inline TraceCheck check_trace_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    TraceCheck out;
    out.ok = false;
    out.message = "cannot open " + path;
    return out;
  }
  return check_trace(is);
}

/// First iteration whose projected-gradient norm is at most pgn_0 / factor,
/// or -1 if the trace never gets there.
inline int iterations_to_reduction(const RunTrace& trace, double factor) {
  if (trace.records.empty()) return -1;
  const double target = trace.records.front().proj_grad_norm / factor;
  for (const IterationRecord& r : trace.records) {
    if (r.proj_grad_norm <= target) return r.k;
  }
  return -1;
}

// ---------------------------------------------------------------------------
// Runs.

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_abs_deviation(const std::vector<double>& v) {
  const double med = median(v);
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double x : v) dev.push_back(std::abs(x - med));
  return median(dev);
}

inline std::vector<double> to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

struct SeedRun {
  std::uint64_t seed = 0;
  RunResult result;
  Vector y_true;
  Vector x_true;
  Index n_y = 0;
  std::string error;  // non-empty when the run threw
};

inline SeedRun run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  SeedRun out;
  out.seed = seed;
  try {
    const ProblemInstance inst = build_instance(spec, seed);
    out.n_y = inst.n_y();
    out.x_true = inst.x_true;
    out.y_true = inst.x_true.head(inst.n_y());
    const OptimizerConfig cfg = build_optimizer_config(spec, &inst);
    out.result = run(*inst.problem(), inst.box, inst.x0, cfg);
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

/// Absolute rate errors |sorted(y) - sorted(y_true)|.
inline Vector rate_errors(const Vector& y, const Vector& y_true) {
  return (sorted_rates(y) - sorted_rates(y_true)).cwiseAbs();
}

inline nlohmann::json seed_summary(const ExperimentSpec& spec, const SeedRun& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  if (!r.error.empty()) {
    j["status"] = "error";
    j["message"] = r.error;
    return j;
  }
  const RunTrace& t = r.result.trace;
  const IterationRecord& last = t.records.back();
  j["status"] = std::string(to_string(t.status));
  if (!t.message.empty()) j["message"] = t.message;
  j["iterations"] = last.k;
  j["f_final"] = last.f;
  j["proj_grad_norm_final"] = last.proj_grad_norm;
  j["tau"] = t.tau;
  j["total_inner_iters"] = t.total_inner_iters;
  j["total_function_evals"] = t.total_function_evals;
  j["cpu_ms"] = last.cpu_ms;
  const Vector y = r.result.x.head(r.n_y);
  j["y_final"] = to_std(y);
  if (spec.problem == "expsum") {
    j["rates_sorted"] = to_std(sorted_rates(y));
    j["rate_abs_error"] = to_std(rate_errors(y, r.y_true));
  } else if (spec.problem == "toy") {
    j["z_final"] = to_std(r.result.x.tail(r.result.x.size() - r.n_y));
    j["error"] = (r.result.x - r.x_true).norm();
  } else {
    j["y_error"] = (y - r.y_true).norm();
  }
  return j;
}

struct ExperimentResult {
  std::vector<SeedRun> runs;
  nlohmann::json summary;
  int failures = 0;
};

/// Runs every seed, writes <out>/trace_seed<k>.csv and <out>/summary.json.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, bool write_files = true) {
  spec.validate();
  ExperimentResult res;
  nlohmann::json runs = nlohmann::json::array();
  if (write_files) std::filesystem::create_directories(spec.out);
  for (std::uint64_t seed : spec.seeds) {
    SeedRun r = run_seed(spec, seed);
    if (!r.error.empty()) ++res.failures;
    if (write_files && r.error.empty()) {
      std::ofstream os(std::filesystem::path(spec.out) / ("trace_seed" + std::to_string(seed) + ".csv"));
      write_trace_csv(os, r.result.trace);
    }
    runs.push_back(seed_summary(spec, r));
    res.runs.push_back(std::move(r));
  }

  nlohmann::json& s = res.summary;
  s["problem"] = spec.problem;
  s["preset"] = spec.preset;
  s["solver"] = std::string(to_string(resolve_solver(spec)));
  s["elimination"] = spec.elimination;
  s["adjust"] = spec.adjust;
  if (spec.problem == "expsum") s["loss"] = spec.loss;
  s["runs"] = runs;
  s["failures"] = res.failures;

  if (spec.problem == "expsum") {
    std::vector<std::vector<double>> rates;
    std::vector<double> errors;
    for (const SeedRun& r : res.runs) {
      if (!r.error.empty()) continue;
      const Vector sr = sorted_rates(r.result.x.head(r.n_y));
      if (rates.empty()) rates.resize(static_cast<std::size_t>(sr.size()));
      for (Index j = 0; j < sr.size(); ++j) rates[static_cast<std::size_t>(j)].push_back(sr[j]);
      const Vector e = rate_errors(r.result.x.head(r.n_y), r.y_true);
      errors.insert(errors.end(), e.data(), e.data() + e.size());
    }
    nlohmann::json stats = nlohmann::json::array();
    for (const auto& v : rates) {
      stats.push_back({{"median", median(v)}, {"mad", median_abs_deviation(v)}});
    }
    s["rate_statistics"] = stats;
    s["median_abs_rate_error"] = median(errors);
  }
  if (write_files) {
    std::ofstream os(std::filesystem::path(spec.out) / "summary.json");
    os << s.dump(2) << '\n';
  }
  return res;
}

// ---------------------------------------------------------------------------
// Variable projection checks.

struct VarproInstance {
  SeparableModel model;
  Vector b;
  Vector y0;
};

/// Single-measurement least-squares fit of c decaying exponentials on m
/// samples in [0, 5) with Gaussian noise of standard deviation `noise`.
inline VarproInstance varpro_instance(Index m = 50, std::uint64_t seed = 7, double noise = 0.05) {
  VarproInstance inst;
  const Vector t = expsum_time_grid(m, 5.0);
  inst.model = exponential_model(t, 2, 1);
  const Vector y_true = (Vector(2) << 1.0, 3.0).finished();
  const Vector z_true = (Vector(2) << 2.0, 1.0).finished();
  Rng rng(seed);
  inst.b = inst.model.apply(y_true, z_true);
  for (Index i = 0; i < inst.b.size(); ++i) inst.b[i] += noise * rng.normal();
  inst.y0 = (Vector(2) << 0.6, 2.2).finished();
  return inst;
}

inline double max_iterate_discrepancy(const std::vector<Vector>& a, const std::vector<Vector>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, relative_error(a[k], b[k]));
  return worst;
}

struct GramCheck {
  double kaufman = 0.0;          // ||J_s^T J_s - G_s|| / ||G_s||
  double golub_pereyra = 0.0;    // ||K_s^T K_s - H_s|| / ||H_s||
  double hs_formula = 0.0;       // ||H_s - (G_s + E_yz G_zz^-1 E_zy)|| / ||H_s||
  double orthogonality = 0.0;    // ||J_s^T M|| / (||J_s|| ||M||)
};

/// Worst-case Gram/Schur identity errors over `points` seeded random (y, z).
inline GramCheck gram_identities(const VarproInstance& inst, int points, std::uint64_t seed) {
  GramCheck worst;
  Rng rng(seed);
  const LossModel loss = LossModel::least_squares(inst.b);
  const Index ny = inst.model.n_y;
  const Index nz = inst.model.n_z;
  for (int p = 0; p < points; ++p) {
    Vector y(ny);
    Vector z(nz);
    for (Index j = 0; j < ny; ++j) y[j] = 0.5 + 2.0 * static_cast<double>(j) + rng.uniform();
    for (Index j = 0; j < nz; ++j) z[j] = 0.5 + 2.0 * rng.uniform();
    const Matrix g = gauss_newton_matrix(inst.model, loss, y, z);
    const Matrix g_s = udu_factor(g, ny).x_s;
    const Matrix js = kaufman_jacobian(inst.model, loss, y, z);
    const Matrix ks = golub_pereyra_jacobian(inst.model, loss, y, z);
    const Matrix h_s = udu_factor(gp_hessian_model(inst.model, loss, y, z), ny).x_s;

    const Vector grad = loss.curvature(inst.model.apply(y, z)).grad;
    const Matrix e_zy = second_order_cross(inst.model, y, grad);
    const Matrix g_zz = g.bottomRightCorner(nz, nz);
    const Matrix hs_direct = g_s + e_zy.transpose() * g_zz.llt().solve(e_zy);
    const Matrix m = ks - js;

    worst.kaufman = std::max(worst.kaufman, relative_error(js.transpose() * js, g_s));
    worst.golub_pereyra = std::max(worst.golub_pereyra, relative_error(ks.transpose() * ks, h_s));
    worst.hs_formula = std::max(worst.hs_formula, relative_error(h_s, hs_direct));
    worst.orthogonality = std::max(
        worst.orthogonality, (js.transpose() * m).norm() / std::max(js.norm() * m.norm(), 1e-300));
  }
  return worst;
}

struct VarproReport {
  double gn_discrepancy = 0.0;
  double gp_discrepancy = 0.0;
  std::size_t gn_iterates = 0;
  std::size_t gp_iterates = 0;
  GramCheck gram;

  double max_discrepancy() const { return std::max(gn_discrepancy, gp_discrepancy); }
  bool ok() const {
    return max_discrepancy() < 1e-8 && gram.kaufman < 1e-9 && gram.golub_pereyra < 1e-9 &&
           gram.hs_formula < 1e-9 && gn_iterates == 11 && gp_iterates == 11;
  }
};

inline VarproReport verify_varpro(int n_iter = 10) {
  const VarproInstance inst = varpro_instance();
  VarproReport rep;
  for (HessianModel h : {HessianModel::GaussNewton, HessianModel::GolubPereyra}) {
    const auto red = equivalence_run(inst.model, inst.b, inst.y0, EquivalenceMode::Reduced, h, n_iter);
    const auto semi = equivalence_run(inst.model, inst.b, inst.y0,
                                      EquivalenceMode::SemiReducedSimplified, h, n_iter);
    const double d = max_iterate_discrepancy(red, semi);
    if (h == HessianModel::GaussNewton) {
      rep.gn_discrepancy = d;
      rep.gn_iterates = std::min(red.size(), semi.size());
    } else {
      rep.gp_discrepancy = d;
      rep.gp_iterates = std::min(red.size(), semi.size());
    }
  }
  rep.gram = gram_identities(inst, 20, 11);
  return rep;
}

inline nlohmann::json to_json(const VarproReport& rep) {
  return {{"gauss_newton_max_rel_discrepancy", rep.gn_discrepancy},
          {"golub_pereyra_max_rel_discrepancy", rep.gp_discrepancy},
          {"max_iterate_discrepancy", rep.max_discrepancy()},
          {"gauss_newton_iterates", rep.gn_iterates},
          {"golub_pereyra_iterates", rep.gp_iterates},
          {"kaufman_gram_rel_error", rep.gram.kaufman},
          {"golub_pereyra_gram_rel_error", rep.gram.golub_pereyra},
          {"hs_formula_rel_error", rep.gram.hs_formula},
          {"js_m_orthogonality", rep.gram.orthogonality},
          {"ok", rep.ok()}};
}

}  // namespace semired
