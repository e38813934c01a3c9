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

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msavg/averaging.hpp"
#include "msavg/common.hpp"
#include "msavg/model.hpp"

namespace msavg {

struct StoppingRule {
  enum class Kind { kFixedTime, kFirstExit };

  Kind kind = Kind::kFixedTime;
  std::string name = "fixed_time";
  // First exit: stop once some slow coordinate satisfies x <= lo or x >= hi.
  Vec lo, hi;

  static StoppingRule fixed_time();
  static StoppingRule first_exit(Vec lo, Vec hi, std::string name = "first_exit");
  static StoppingRule first_exit(double lo, double hi, std::string name = "first_exit");

  bool should_stop(const double* x, int m) const;
};

// Left-endpoint state and coefficients of one multiscale step. sigma and eta are flattened
// column-major (m*p and n*p rows) and have a single column when the diffusion is constant.
struct MultiscaleStep {
  double t;
  const Mat& x;
  const Mat& y;
  const Mat& b;
  const Mat& f;
  const Mat& g;
  const Mat& c;
  const Mat& sigma;
  const Mat& eta;
};

// Left-endpoint state of one limit step. root holds bar-A^{1/2} entries (0,0), (0,1), (1,0), (1,1).
struct LimitStep {
  double t;
  const Mat& x;
  const Mat& root;
  const AveragedModel& avg;
  const ExtendedSystem* ext;
};

// Integrands of a group of functionals. dw has (names * noise dim) rows with row i * dim + j for
// functional i and noise component j; dt has one row per functional. Both arrive zeroed.
class IntegrandSet {
 public:
  virtual ~IntegrandSet() = default;

  virtual std::vector<std::string> names() const = 0;
  virtual void integrands(const MultiscaleStep& step, Mat& dw, Mat& dt) const;
  virtual void integrands(const LimitStep& step, Mat& dw, Mat& dt) const;

  // Boundary potential U: the recorded value is the integral plus U(Z_0) - U(Z_t).
  virtual bool has_boundary() const { return false; }
  // Functionals whose boundary term can be nonzero (all of them by default when has_boundary()).
  virtual std::vector<bool> boundary_mask() const;
  virtual void boundary(int record, double t, const Mat& x, const Mat& y, Mat& out) const;
};

struct SimulationOptions {
  int n_paths = 1000;
  double dt = 1e-4;
  std::uint64_t seed = 1;
  int records = 100;
  // Each increment is the sum of this many finer increments, so a run at dt/S with S = 1 sees
  // the same Brownian path.
  int noise_substeps = 1;
  int workers = 0;  // 0: MSAVG_WORKERS or hardware concurrency
  bool store_fast = false;
  double max_dt_ratio = 0.1;  // dt <= ratio * eps^2
  std::optional<double> burn_in;
  std::vector<StoppingRule> rules;
  std::vector<std::pair<std::string, std::string>> covariations;
};

struct StoppedValues {
  StoppingRule rule;
  RowVec tau;
  Mat x;       // m x P
  Mat values;  // functionals x P; NaN where a boundary term is needed off the record grid
};

struct TrajectoryBatch {
  int n_paths = 0;
  int m = 1;
  int n = 0;
  int noise_dim = 0;
  double dt = 0.0;
  double T = 0.0;
  double epsilon = 0.0;  // 0 for limit runs
  std::vector<double> times;
  Mat x;  // (records * m) x P, row r * m + i
  Mat y;  // (records * n) x P when stored
  std::vector<std::string> names;
  Mat values;  // (records * F) x P, row r * F + i
  std::vector<std::pair<int, int>> pairs;
  Mat covariation;  // (records * pairs) x P, realized sum of d e^{-M} d e^{-N}
  std::vector<StoppedValues> stopped;
  std::vector<std::uint8_t> exited;
  RowVec exit_time;
  RowVec noise_var;  // per path mean of dW_0^2 / dt

  int records() const { return static_cast<int>(times.size()); }
  int index(const std::string& name) const;
  int pair_index(const std::string& a, const std::string& b) const;
  RowVec value(const std::string& name, int record) const;
  RowVec slow(int record, int i = 0) const;
  const StoppedValues& stopped_by(const std::string& rule) const;
  int exit_count() const;
  double exit_fraction() const { return n_paths ? static_cast<double>(exit_count()) / n_paths : 0.0; }
  bool valid() const { return exit_fraction() <= 0.01; }
  // Indices of paths kept for ensemble averages.
  std::vector<int> kept() const;
};

std::vector<double> record_times(double T, double dt, int records);

int worker_count(int requested);

TrajectoryBatch simulate_multiscale(const MultiscaleModel& model, const std::vector<const IntegrandSet*>& sets,
                                    const SimulationOptions& options);

// Integrates (X, functional) with drift (w, bar_w) and diffusion bar-A^{1/2}. Without an extended
// system the second noise component only drives functionals.
TrajectoryBatch simulate_limit_system(const MultiscaleModel& model, const AveragedModel& avg,
                                      const ExtendedSystem* ext, const std::vector<const IntegrandSet*>& sets,
                                      const SimulationOptions& options);

// Stopping on the record grid.
StoppedValues apply_stopping(const TrajectoryBatch& batch, const StoppingRule& rule);

// Symmetric PSD square root of [[p, q], [q, r]] as (s00, s01, s10, s11).
std::array<double, 4> sqrt_psd2(double p, double q, double r, double tol = 1e-8);

}  // namespace msavg
