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

#include <vector>

#include "msavg/averaging.hpp"
#include "msavg/common.hpp"
#include "msavg/model.hpp"

namespace msavg {

struct GaussianState {
  Vec mean;
  Mat cov;
};

// dz = (M z + k) dt + Sigma dW with D = Sigma Sigma'.
struct LinearSDE {
  Mat M;
  Vec k;
  Mat D;
};

// Exact linear form of the joint (x, y) system at scale epsilon and time t.
LinearSDE linearize(const CoefficientSet& coeffs, double epsilon, double t);

GaussianState evolve_gaussian_moments(const LinearSDE& sde, double t0, double t1, const GaussianState& state,
                                      double max_step = 1e-4);
GaussianState evolve_gaussian_moments(const CoefficientSet& coeffs, double epsilon, double t0, double t1,
                                      const GaussianState& state, double max_step = 1e-4);

// Log-density of N(mean, cov) at the columns of z.
RowVec gaussian_log_density(const GaussianState& state, const Mat& z);

// Gaussian laws at a list of times, for boundary terms along paths.
class GaussianTrack {
 public:
  GaussianTrack() = default;
  GaussianTrack(std::vector<double> times, std::vector<GaussianState> states);

  const std::vector<double>& times() const { return times_; }
  const GaussianState& state(int i) const { return states_[i]; }
  RowVec log_density(int i, const Mat& z) const;

 private:
  std::vector<double> times_;
  std::vector<GaussianState> states_;
  std::vector<Mat> inv_;
  std::vector<double> log_norm_;
};

// Law of (X^eps, Y^eps) at each requested time, from the model's initial law at -burn_in.
GaussianTrack multiscale_track(const MultiscaleModel& model, const std::vector<double>& times);

// Density of the reduced process X at requested times (m = 1).
class ReducedDensity {
 public:
  enum class Kind { kGaussian, kFiniteDifference };

  // Initial law N(x0_mean, x0_var) at time t0; variance may be zero.
  static ReducedDensity build(const AveragedModel& avg, double x0_mean, double x0_var, double t0,
                              const std::vector<double>& times, double x_lo, double x_hi, int nodes = 801,
                              double dt = 1e-3);

  Kind kind() const { return kind_; }
  RowVec log_p(int i, const RowVec& x) const;

 private:
  Kind kind_ = Kind::kGaussian;
  GaussianTrack track_;
  std::vector<double> xs_;
  std::vector<Vec> log_tables_;
};

}  // namespace msavg
