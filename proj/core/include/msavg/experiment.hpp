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
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "msavg/config.hpp"
#include "msavg/functionals.hpp"
#include "msavg/stats.hpp"

namespace msavg {

struct FunctionalRow {
  std::string functional;
  std::string rule;
  double estimate = 0.0;  // mean of e^{-value}
  double se = 0.0;
  double trimmed = 0.0;
  double mean_value = 0.0;
  int n_paths = 0;
  int exits = 0;
  double dt = 0.0;
  double eps = 0.0;  // 0 for the limit system
  std::string flags;
};

struct ResidualRow {
  std::string table;
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = true;
};

struct ConvergenceRow {
  double eps = 0.0;
  std::string quantity;
  double ks = 0.0;
  double p_value = 1.0;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  std::vector<Verdict> verdicts;
};

struct EnsembleStats {
  std::string model;
  std::string functional;
  std::vector<FunctionalRow> rows;
  std::vector<Verdict> verdicts;
  std::vector<ResidualRow> residuals;
  std::vector<ConvergenceRow> convergence;
  std::vector<std::string> flags;

  bool all_gated_pass() const;
};

// Model, comparable, averaged coefficients and integrand sets for one scale.
class Pipeline {
 public:
  Pipeline(const ExperimentConfig& config, double epsilon, bool with_limit = true);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const MultiscaleModel& model() const { return *model_; }
  FunctionalSide side() const { return side_; }
  const ComparableSpec& comparable() const { return comparable_; }
  const std::string& epsilon_name() const { return eps_name_; }
  const std::string& limit_name() const { return limit_name_; }
  const IntegrandSet& epsilon_set() const { return *eps_set_; }
  const IntegrandSet* limit_set() const { return limit_set_.get(); }
  const AveragedModel* averaged() const { return avg_.get(); }
  const ExtendedSystem* extended() const { return ext_.get(); }
  const std::vector<std::string>& flags() const { return flags_; }
  const std::vector<ResidualRow>& residuals() const { return residuals_; }

  TrajectoryBatch simulate_epsilon() const;
  TrajectoryBatch simulate_limit() const;

 private:
  const ExperimentConfig& cfg_;
  std::unique_ptr<MultiscaleModel> model_;
  FunctionalSide side_ = FunctionalSide::kForward;
  ComparableSpec comparable_;
  std::string eps_name_, limit_name_;
  std::unique_ptr<AveragedModel> avg_;
  std::unique_ptr<ExtendedSystem> ext_;
  std::unique_ptr<IntegrandSet> eps_set_;
  std::unique_ptr<IntegrandSet> limit_set_;
  std::vector<std::string> flags_;
  std::vector<ResidualRow> residuals_;
};

// KS distances of X_T and of each (epsilon, limit) functional pair at T, one row per (eps, quantity).
// Verdicts require a strictly decreasing distance as eps decreases.
ConvergenceTable convergence_from_batches(const std::vector<double>& eps,
                                          const std::vector<const TrajectoryBatch*>& batches,
                                          const TrajectoryBatch& limit,
                                          const std::vector<std::pair<std::string, std::string>>& functionals);
ConvergenceTable convergence_check(const ExperimentConfig& config);

// Full pipeline at min(eps); writes results.csv, residuals.csv, convergence.csv, stats.json and report.txt.
EnsembleStats run_experiment(const ExperimentConfig& config);

// E[e^{-value}] rows for every functional of a batch at fixed time and each rule.
std::vector<FunctionalRow> functional_rows(const TrajectoryBatch& batch, const std::vector<std::string>& flags,
                                           const StatThresholds& thresholds);

// Per-record ensemble summary: t, mean and variance of X, mean of e^{-value} per functional.
void write_ensemble_summary(const TrajectoryBatch& batch, const std::filesystem::path& path);

void write_artifacts(const EnsembleStats& stats, const std::filesystem::path& dir);
std::string render_report(const EnsembleStats& stats);
EnsembleStats read_stats_json(const std::filesystem::path& path);

// 17 significant digits.
std::string format_double(double v);

}  // namespace msavg
