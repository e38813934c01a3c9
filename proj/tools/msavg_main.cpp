// Copyright 2026 The msavg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msavg/averaging.hpp"
#include "msavg/cell.hpp"
#include "msavg/config.hpp"
#include "msavg/experiment.hpp"

namespace fs = std::filesystem;
using namespace msavg;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> paths;
  std::string eps;
  std::optional<double> dt;
  std::string out;
  std::string functional;
  std::vector<std::string> rules;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment configuration (INI)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--paths", o.paths, "Number of paths");
  cmd->add_option("--eps", o.eps, "Comma-separated scale separation list");
  cmd->add_option("--dt", o.dt, "Multiscale time step");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--functional", o.functional, "forward, backward, entropy or housekeeping");
  cmd->add_option("--rule", o.rules, "First-exit rule as name=lo,hi (repeatable)");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.paths) c.n_paths = *o.paths;
  if (!o.eps.empty()) c.eps = parse_list(o.eps);
  if (o.dt) c.dt = *o.dt;
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.functional.empty()) c.functional = parse_functional_kind(o.functional);
  for (const auto& r : o.rules) {
    const auto eq = r.find('=');
    const std::vector<double> b = eq == std::string::npos ? std::vector<double>{} : parse_list(r.substr(eq + 1));
    if (b.size() != 2) throw Error("harness", ErrorKind::kConfiguration, "--rule expects name=lo,hi, got '" + r + "'");
    c.rules.push_back(StoppingRule::first_exit(b[0], b[1], r.substr(0, eq)));
  }
  c.validate();
  return c;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("harness", ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

int cell_solve(const Overrides& o, double x, double t) {
  const ExperimentConfig c = resolve(o);
  const MultiscaleModel model = c.make(c.min_eps());
  CellOptions opt;
  opt.backend = c.backend;
  const CellSolution cell = CellSolution::solve(model.coeffs, Vec::Constant(model.coeffs.m, x), t, opt);
  FastGrid grid;
  if (cell.grid()) {
    grid = *cell.grid();
  } else {
    const Vec sd = cell.gaussian_cov().diagonal().cwiseSqrt();
    grid = FastGrid::centered(cell.gaussian_mean(), sd, opt.radius, opt.grid_nodes);
  }
  ensure_dir(c.out_dir);
  const fs::path stem = c.out_dir / ("cell_" + cell_cache_key(model.name, cell.x(), t, grid));
  write_cell(cell, grid, stem);
  std::cout << "backend " << to_string(cell.backend()) << ", " << grid.size() << " fast nodes\n"
            << "wrote " << stem.string() << ".csv and .bin\n";
  return 0;
}

int average(const Overrides& o) {
  const ExperimentConfig c = resolve(o);
  const Pipeline pipe(c, c.min_eps(), true);
  ensure_dir(c.out_dir);
  const fs::path path = c.out_dir / "averaged.csv";
  write_averaged_csv(*pipe.averaged(), pipe.extended(), path);
  for (const auto& r : pipe.residuals()) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.table << " " << r.name << " " << r.value << " <= " << r.threshold
              << "\n";
  }
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int simulate(const Overrides& o) {
  const ExperimentConfig c = resolve(o);
  const Pipeline pipe(c, c.min_eps(), c.limit);
  ensure_dir(c.out_dir);
  const TrajectoryBatch eb = pipe.simulate_epsilon();
  write_ensemble_summary(eb, c.out_dir / "ensemble_eps.csv");
  EnsembleStats stats;
  stats.model = c.model;
  stats.functional = to_string(c.functional);
  stats.flags = pipe.flags();
  stats.residuals = pipe.residuals();
  stats.rows = functional_rows(eb, stats.flags, c.thresholds);
  if (pipe.limit_set()) {
    const TrajectoryBatch lb = pipe.simulate_limit();
    write_ensemble_summary(lb, c.out_dir / "ensemble_limit.csv");
    for (auto& r : functional_rows(lb, stats.flags, c.thresholds)) stats.rows.push_back(std::move(r));
  }
  write_artifacts(stats, c.out_dir);
  std::cout << render_report(stats);
  return 0;
}

int verify(const Overrides& o) {
  const ExperimentConfig c = resolve(o);
  const EnsembleStats stats = run_experiment(c);
  for (const auto& v : stats.verdicts) {
    std::cout << (v.pass ? "PASS" : "FAIL") << (v.gated ? "  " : "  [diagnostic] ") << v.test << " " << v.functional
              << " " << v.rule << " statistic=" << v.statistic << " threshold=" << v.threshold << "\n";
  }
  std::cout << "artifacts in " << c.out_dir.string() << "\n";
  return stats.all_gated_pass() ? 0 : 1;
}

int report(const Overrides& o) {
  const fs::path dir = o.out.empty() ? fs::path("msavg_out") : fs::path(o.out);
  const EnsembleStats stats = read_stats_json(dir / "stats.json");
  const std::string text = render_report(stats);
  std::ofstream(dir / "report.txt") << text;
  std::cout << text;
  return stats.all_gated_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Averaging and fluctuation-theorem checks for slow-fast diffusions"};
  app.require_subcommand(1);
  Overrides o;
  double x = 0.0, t = 0.0;

  auto* c_cell = app.add_subcommand("cell-solve", "Solve the frozen fast problem at one slow state and cache it");
  add_common(c_cell, o);
  c_cell->add_option("--x", x, "Slow state");
  c_cell->add_option("--t", t, "Time");
  auto* c_avg = app.add_subcommand("average", "Tabulate averaged and extended coefficients");
  add_common(c_avg, o);
  auto* c_sim = app.add_subcommand("simulate", "Simulate the multiscale and limit systems");
  add_common(c_sim, o);
  auto* c_ver = app.add_subcommand("verify", "Run the full test battery; exit 0 iff gated verdicts pass");
  add_common(c_ver, o);
  auto* c_rep = app.add_subcommand("report", "Render report.txt from stats.json in --out");
  add_common(c_rep, o);

  CLI11_PARSE(app, argc, argv);
  try {
    if (c_cell->parsed()) return cell_solve(o, x, t);
    if (c_avg->parsed()) return average(o);
    if (c_sim->parsed()) return simulate(o);
    if (c_ver->parsed()) return verify(o);
    if (c_rep->parsed()) return report(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::kConfiguration ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
