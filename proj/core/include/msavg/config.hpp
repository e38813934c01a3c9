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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "msavg/averaging.hpp"
#include "msavg/catalog.hpp"
#include "msavg/path.hpp"
#include "msavg/stats.hpp"

namespace msavg {

enum class FunctionalKind { kForward, kBackward, kEntropy, kHousekeeping };
const char* to_string(FunctionalKind kind);
FunctionalKind parse_functional_kind(const std::string& text);

// Experiment description. INI layout:
//   [model]       name plus catalog parameters (k, sigma_x, x0_var, ...)
//   [run]         eps (comma list), dt, limit_dt, T, burn_in, n_paths, seed, records, workers
//   [functional]  kind, b_shift, b_slope, g_shift, g_slope, f_sign, parity, limit, mutations, direct
//   [rules]       <name> = lo, hi    (first exit of the slow variable)
//   [grid]        x_lo, x_hi, nx, nt, backend
//   [stats]       z, max_se, trim
//   [output]      dir
struct ExperimentConfig {
  std::string model = "ou";
  ParamMap params;
  std::vector<double> eps{0.1};
  double dt = 1e-4;
  double limit_dt = 1e-3;
  double T = 1.0;
  std::optional<double> burn_in;
  int n_paths = 1000;
  std::uint64_t seed = 1;
  int records = 100;
  int workers = 0;

  FunctionalKind functional = FunctionalKind::kForward;
  ShiftParams shift;
  std::optional<ParityVector> parity;
  bool limit = true;
  bool mutations = false;
  bool direct = false;

  std::vector<StoppingRule> rules;
  XtGrid grid = XtGrid::uniform(-8.0, 8.0, 33, 1.0, 1);
  CellBackend backend = CellBackend::kAnalyticOu;
  StatThresholds thresholds;
  std::filesystem::path out_dir = "msavg_out";

  static ExperimentConfig parse(std::istream& in);
  static ExperimentConfig load(const std::filesystem::path& path);

  // dt <= 0.1 min(eps)^2, n_paths >= 100, grid and rules well formed.
  void validate() const;

  double min_eps() const;
  // Model at one scale with T, burn_in and eps applied.
  MultiscaleModel make(double epsilon) const;
  SimulationOptions simulation(double step) const;
};

// "a, b, c" -> {a, b, c}.
std::vector<double> parse_list(const std::string& text);

}  // namespace msavg
