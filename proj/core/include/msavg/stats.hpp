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

#include <map>
#include <string>
#include <vector>

#include "msavg/common.hpp"
#include "msavg/path.hpp"

namespace msavg {

struct MeanCI {
  double mean = 0.0;
  double se = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int n = 0;
};

// Mean, standard error s / sqrt(n) and normal 95% interval of the finite samples.
MeanCI estimate_mean_ci(const RowVec& samples);

// Outcome of one statistical check. Thresholds used are kept alongside the statistic.
struct Verdict {
  std::string test;
  std::string functional;
  std::string rule;
  bool pass = false;
  bool gated = true;
  double statistic = 0.0;
  double threshold = 0.0;
  std::map<std::string, double> details;
  std::string note;
};

struct StatThresholds {
  double z = 3.0;         // |estimate - target| <= z * SE
  double max_se = 0.05;   // IFT estimates must be at least this precise
  double trim = 1e-3;     // symmetric trimming for the heavy-tail diagnostic
};

// Values of one functional at the stopping time of a rule ("fixed_time" is the last record), over the
// kept paths. NaN entries raise an estimation error.
RowVec stopped_values(const TrajectoryBatch& batch, const std::string& functional, const std::string& rule);

// E[e^{-value}] = 1 check.
Verdict ift_check(const RowVec& values, const std::string& functional, const std::string& rule,
                  const StatThresholds& thresholds = {});
Verdict ift_check(const TrajectoryBatch& batch, const std::string& functional, const std::string& rule,
                  const StatThresholds& thresholds = {});

// Regression of e^{-M_{t_{i+1}}} - e^{-M_{t_i}} on (1, X_{t_i}, X_{t_i}^2) for checkpoints T/4, T/2, 3T/4 and
// T, with heteroscedasticity-robust (HC1) standard errors. Passes iff every coefficient is within z SE of 0.
// With stopped, the process is frozen after the rule's stopping record.
Verdict martingale_check(const TrajectoryBatch& batch, const std::string& functional,
                         const StatThresholds& thresholds = {}, const StoppedValues* stopped = nullptr);

// Realized covariation sum of d e^{-a} d e^{-b} at the checkpoints; passes iff every ensemble mean is
// within z SE of 0.
Verdict covariation_check(const TrajectoryBatch& batch, const std::string& a, const std::string& b,
                          const StatThresholds& thresholds = {});

struct KsResult {
  double distance = 0.0;
  double p_value = 1.0;
};
KsResult ks_two_sample(const RowVec& a, const RowVec& b);

// Record indices closest to T/4, T/2, 3T/4 and T.
std::vector<int> checkpoint_records(const TrajectoryBatch& batch);

// Mean and 0.1% symmetric trimmed mean, and the largest single-sample share of the sum.
struct WeightDiagnostics {
  double trimmed_mean = 0.0;
  double max_share = 0.0;
};
WeightDiagnostics weight_diagnostics(const RowVec& weights, double trim);

}  // namespace msavg
