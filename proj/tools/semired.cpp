// semired: run experiments, the varpro check suite, and trace validation.
#include "semired/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

bool parse_on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw semired::ConfigError("expected on|off, got '" + v + "'");
}

int cmd_run(semired::ExperimentSpec spec) {
  const semired::ExperimentResult res = semired::run_experiment(spec);
  std::cout << res.summary.dump(2) << '\n';
  const auto total = static_cast<int>(res.runs.size());
  if (res.failures == total) {
    std::cerr << "all " << total << " run(s) failed\n";
    return 1;
  }
  return 0;
}

int cmd_verify_varpro(const std::string& out) {
  const semired::VarproReport rep = semired::verify_varpro();
  const nlohmann::json j = semired::to_json(rep);
  std::filesystem::create_directories(out);
  std::ofstream(std::filesystem::path(out) / "varpro.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  return rep.ok() ? 0 : 1;
}

int cmd_check_trace(const std::string& file) {
  const semired::TraceCheck c = semired::check_trace_file(file);
  std::cout << file << ": " << (c.ok ? "ok" : "FAIL") << " (" << c.rows << " rows)";
  if (!c.ok) std::cout << ": " << c.message;
  std::cout << '\n';
  return c.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-reduced Newton-type methods for separable inverse problems"};
  app.require_subcommand(1);

  semired::ExperimentSpec spec;
  std::string config_file;
  std::string elimination;
  std::string adjust;
  std::string seeds;
  double rho = 0.0;
  long side = 0, frames = 0, segments = 0, m = 0, n = 0;
  int k_max = -1, adjust_k_max = -1;
  double lambda0 = 0.0, tau = 0.0;

  CLI::App* run = app.add_subcommand("run", "Run an experiment over one or more seeds");
  run->add_option("--config", config_file, "JSON file with the same keys as the flags")
      ->check(CLI::ExistingFile);
  run->add_option("--problem", spec.problem, "expsum | deconv | toy");
  run->add_option("--preset", spec.preset, "desk | paper");
  run->add_option("--elimination", elimination, "on | off");
  run->add_option("--adjust", adjust, "on | off");
  run->add_option("--solver", spec.solver,
                  "full-qr | block-qr | blockdiag-qr | mixed-cg-direct | full-cg");
  run->add_option("--loss", spec.loss, "expsum loss: poisson | weighted-ls | least-squares");
  run->add_option("--seeds", seeds, "e.g. 1..20 or 1,5,9");
  run->add_option("--out", spec.out, "output directory");
  run->add_option("--rho", rho, "toy support ratio");
  run->add_option("--side", side, "deconv image side");
  run->add_option("--frames", frames, "deconv frame count");
  run->add_option("--segments", segments, "deconv PSF segments");
  run->add_option("--m", m, "expsum samples per curve");
  run->add_option("--n", n, "expsum measurement vectors");
  run->add_option("--k-max", k_max, "outer iteration cap");
  run->add_option("--adjust-k-max", adjust_k_max, "inner adjustment iterations");
  run->add_option("--lambda0", lambda0, "initial damping");
  run->add_option("--tau", tau, "stopping tolerance");

  std::string varpro_out = "out";
  CLI::App* varpro = app.add_subcommand("verify-varpro", "Check the variable projection equivalences");
  varpro->add_option("--out", varpro_out, "output directory");

  std::string trace_file;
  CLI::App* check = app.add_subcommand("check-trace", "Validate a trace CSV");
  check->add_option("file", trace_file, "trace CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (!config_file.empty()) {
        semired::ExperimentSpec from_file;
        semired::apply_json(from_file, nlohmann::json::parse(std::ifstream(config_file)));
        // Flags given on the command line override the file.
        auto given = [run](const char* name) { return run->count(name) > 0; };
        if (!given("--problem")) spec.problem = from_file.problem;
        if (!given("--preset")) spec.preset = from_file.preset;
        if (!given("--solver")) spec.solver = from_file.solver;
        if (!given("--loss")) spec.loss = from_file.loss;
        if (!given("--out")) spec.out = from_file.out;
        spec.elimination = from_file.elimination;
        spec.adjust = from_file.adjust;
        spec.seeds = from_file.seeds;
        spec.rho = from_file.rho;
        spec.side = from_file.side;
        spec.frames = from_file.frames;
        spec.segments = from_file.segments;
        spec.m = from_file.m;
        spec.n = from_file.n;
        spec.k_max = from_file.k_max;
        spec.adjust_k_max = from_file.adjust_k_max;
        spec.lambda0 = from_file.lambda0;
        spec.tau = from_file.tau;
      }
      if (!elimination.empty()) spec.elimination = parse_on_off(elimination);
      if (!adjust.empty()) spec.adjust = parse_on_off(adjust);
      if (!seeds.empty()) spec.seeds = semired::parse_seeds(seeds);
      if (run->count("--rho")) spec.rho = rho;
      if (run->count("--side")) spec.side = side;
      if (run->count("--frames")) spec.frames = frames;
      if (run->count("--segments")) spec.segments = segments;
      if (run->count("--m")) spec.m = m;
      if (run->count("--n")) spec.n = n;
      if (run->count("--k-max")) spec.k_max = k_max;
      if (run->count("--adjust-k-max")) spec.adjust_k_max = adjust_k_max;
      if (run->count("--lambda0")) spec.lambda0 = lambda0;
      if (run->count("--tau")) spec.tau = tau;
      spec.validate();
      return cmd_run(spec);
    }
    if (*varpro) return cmd_verify_varpro(varpro_out);
    if (*check) return cmd_check_trace(trace_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
