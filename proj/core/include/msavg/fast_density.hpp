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

// Pseudo-stationary Gaussian density rho(x, y, t) tabulated over slow states (m = 1).
// Mean and covariance entries are interpolated with GridTable.
class FrozenDensity {
 public:
  FrozenDensity() = default;
  static FrozenDensity build(const CoefficientSet& coeffs, const XtGrid& grid);

  int n() const { return n_; }
  RowVec log_rho(const RowVec& x, const Mat& y, double t) const;
  Mat grad_y_log_rho(const RowVec& x, const Mat& y, double t) const;  // n x K
  RowVec dx_log_rho(const RowVec& x, const Mat& y, double t) const;
  RowVec dt_log_rho(const RowVec& x, const Mat& y, double t) const;

  double step(double x) const;

 private:
  int n_ = 1;
  bool time_free_ = true;
  std::vector<GridTable> mean_;  // n tables
  std::vector<GridTable> prec_;  // n*n tables of the inverse covariance
  GridTable log_norm_;
  double t_step_ = 1e-4;

  void frozen(const RowVec& x, double t, Mat& mean, Mat& prec, RowVec& log_norm) const;
};

}  // namespace msavg
