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
#include "msavg/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

namespace msavg {
namespace {

namespace fs = std::filesystem;

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return ExperimentConfig::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kNumerical;
}

constexpr const char* kSmall = R"(
[model]
name = ou
noise_corr = 0.5
[run]
eps = 0.5
dt = 2.5e-3
limit_dt = 2.5e-3
T = 0.5
burn_in = 0.5
n_paths = 400
seed = 5
records = 4
[functional]
kind = forward
b_shift = 1
mutations = true
[rules]
exit = -1, 1
[grid]
x_lo = -6
x_hi = 6
nx = 25
)";

TEST(ConfigTest, ParsesSectionsAndLists) {
  const ExperimentConfig c = parse(kSmall);
  EXPECT_EQ(c.model, "ou");
  EXPECT_DOUBLE_EQ(c.params.at("noise_corr"), 0.5);
  ASSERT_EQ(c.eps.size(), 1u);
  EXPECT_DOUBLE_EQ(c.eps[0], 0.5);
  EXPECT_EQ(c.n_paths, 400);
  EXPECT_EQ(c.functional, FunctionalKind::kForward);
  EXPECT_TRUE(c.mutations);
  ASSERT_EQ(c.rules.size(), 1u);
  EXPECT_EQ(c.rules[0].name, "exit");
  EXPECT_DOUBLE_EQ(c.rules[0].hi[0], 1.0);
  EXPECT_EQ(c.grid.nx, 25);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(parse_list(" 0.5, 0.2 ,0.1").size(), 3u);
}

TEST(ConfigTest, ValidationRejectsBadRuns) {
  ExperimentConfig c = parse(kSmall);
  c.dt = 0.1;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfiguration);
  c = parse(kSmall);
  c.n_paths = 99;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfiguration);
  c = parse(kSmall);
  c.eps = {0.1, 0.2};
  c.dt = 1e-4;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfiguration);
  c = parse(kSmall);
  c.model = "nope";
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { parse("[run]\nbogus = 1\n"); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { parse("[run]\ndt = abc\n"); }), ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { parse("[functional]\nkind = sideways\n"); }), ErrorKind::kConfiguration);
}

TEST(ExperimentTest, FormatsSeventeenDigits) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(format_double(NAN), "nan");
}

TEST(ExperimentTest, RunWritesArtifactsDeterministically) {
  ExperimentConfig c = parse(kSmall);
  c.out_dir = fs::temp_directory_path() / "msavg_experiment_test_a";
  fs::remove_all(c.out_dir);
  const EnsembleStats a = run_experiment(c);
  for (const char* f : {"results.csv", "residuals.csv", "verdicts.csv", "stats.json", "report.txt"}) {
    EXPECT_TRUE(fs::exists(c.out_dir / f)) << f;
  }
  const std::string first = slurp(c.out_dir / "results.csv");
  EXPECT_EQ(first.substr(0, first.find('\n')), "functional,rule,estimate,se,n_paths,dt,eps,flags");
  c.workers = 1;
  run_experiment(c);
  EXPECT_EQ(first, slurp(c.out_dir / "results.csv"));

  // Every verdict carries its threshold; mutations are detected.
  int mutations = 0;
  for (const auto& v : a.verdicts) {
    if (v.test == "mutation") {
      ++mutations;
      EXPECT_TRUE(v.pass) << v.functional;
    }
  }
  EXPECT_EQ(mutations, 3);
  EXPECT_FALSE(a.residuals.empty());

  const EnsembleStats b = read_stats_json(c.out_dir / "stats.json");
  EXPECT_EQ(b.verdicts.size(), a.verdicts.size());
  EXPECT_EQ(b.rows.size(), a.rows.size());
  EXPECT_EQ(b.all_gated_pass(), a.all_gated_pass());
  EXPECT_EQ(render_report(b), render_report(a));
}

TEST(ExperimentTest, ExitContractIgnoresDiagnostics) {
  EnsembleStats s;
  Verdict v;
  v.pass = false;
  v.gated = false;
  s.verdicts.push_back(v);
  EXPECT_TRUE(s.all_gated_pass());
  v.gated = true;
  s.verdicts.push_back(v);
  EXPECT_FALSE(s.all_gated_pass());
}

TEST(ExperimentTest, EpsIndependentModelHasNoConvergenceTrend) {
  ExperimentConfig c = parse(kSmall);
  c.model = "eps_independent";
  c.params.clear();
  c.eps = {0.5, 0.25};
  c.dt = 2.5e-3;
  c.n_paths = 2000;
  c.mutations = false;
  c.rules.clear();
  const ConvergenceTable t = convergence_check(c);
  ASSERT_EQ(t.rows.size(), 4u);
  for (const auto& r : t.rows) EXPECT_GT(r.p_value, 1e-3) << r.quantity << " " << r.eps;
}

TEST(ExperimentTest, BackwardPipelineReportsCompatibility) {
  ExperimentConfig c = parse(kSmall);
  c.functional = FunctionalKind::kBackward;
  c.params.erase("noise_corr");
  c.shift = {0.5, 0.0, 0.0, 0.5, -1.0};
  c.mutations = false;
  c.direct = true;
  c.out_dir = fs::temp_directory_path() / "msavg_experiment_test_b";
  const EnsembleStats s = run_experiment(c);
  bool saw_compat = false;
  for (const auto& r : s.residuals) saw_compat = saw_compat || r.table == "compatibility";
  EXPECT_TRUE(saw_compat);
  bool saw_diag = false;
  for (const auto& v : s.verdicts) saw_diag = saw_diag || (!v.gated && v.functional == "G");
  EXPECT_TRUE(saw_diag);
}

}  // namespace
}  // namespace msavg
