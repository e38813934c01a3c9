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
#include "msavg/fast_density.hpp"

#include <cmath>

#include "msavg/cell.hpp"

namespace msavg {

FrozenDensity FrozenDensity::build(const CoefficientSet& coeffs, const XtGrid& grid) {
  if (coeffs.m != 1) {
    throw Error("functionals", ErrorKind::kUnsupportedModel, "frozen density tables need one slow coordinate");
  }
  FrozenDensity out;
  const int n = coeffs.n;
  out.n_ = n;
  out.time_free_ = grid.nt() == 1;
  std::vector<Mat> mean(n, Mat(grid.nx, grid.nt())), prec(n * n, Mat(grid.nx, grid.nt()));
  Mat lnorm(grid.nx, grid.nt());
  for (int j = 0; j < grid.nt(); ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      const FrozenGaussian fg = frozen_gaussian(coeffs, Vec::Constant(1, grid.x(i)), grid.ts[j]);
      const Mat P = fg.cov.inverse();
      for (int a = 0; a < n; ++a) mean[a](i, j) = fg.mean[a];
      for (int a = 0; a < n * n; ++a) prec[a](i, j) = P(a % n, a / n);
      lnorm(i, j) = -0.5 * (n * std::log(2 * M_PI) + std::log(fg.cov.determinant()));
    }
  }
  for (int a = 0; a < n; ++a) out.mean_.emplace_back(grid, mean[a]);
  for (int a = 0; a < n * n; ++a) out.prec_.emplace_back(grid, prec[a]);
  out.log_norm_ = GridTable(grid, lnorm);
  return out;
}

double FrozenDensity::step(double x) const { return 1e-3 * std::max(1.0, std::abs(x)); }

void FrozenDensity::frozen(const RowVec& x, double t, Mat& mean, Mat& prec, RowVec& log_norm) const {
  mean.resize(n_, x.size());
  prec.resize(n_ * n_, x.size());
  for (int a = 0; a < n_; ++a) mean.row(a) = mean_[a].eval(x, t);
  for (int a = 0; a < n_ * n_; ++a) prec.row(a) = prec_[a].eval(x, t);
  log_norm = log_norm_.eval(x, t);
}

RowVec FrozenDensity::log_rho(const RowVec& x, const Mat& y, double t) const {
  Mat mean, prec;
  RowVec out;
  frozen(x, t, mean, prec, out);
  const Mat d = y - mean;
  if (n_ == 1) return out.array() - 0.5 * prec.row(0).array() * d.row(0).array().square();
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const Eigen::Map<const Mat> P(prec.col(k).data(), n_, n_);
    out[k] -= 0.5 * d.col(k).dot(P * d.col(k));
  }
  return out;
}

Mat FrozenDensity::grad_y_log_rho(const RowVec& x, const Mat& y, double t) const {
  Mat mean, prec;
  RowVec ln;
  frozen(x, t, mean, prec, ln);
  const Mat d = y - mean;
  if (n_ == 1) return -(prec.row(0).array() * d.row(0).array()).matrix();
  Mat out(n_, x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const Eigen::Map<const Mat> P(prec.col(k).data(), n_, n_);
    out.col(k) = -P * d.col(k);
  }
  return out;
}

RowVec FrozenDensity::dx_log_rho(const RowVec& x, const Mat& y, double t) const {
  RowVec h(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) h[k] = step(x[k]);
  const RowVec xp = x + h, xm = x - h;
  return (log_rho(xp, y, t) - log_rho(xm, y, t)).cwiseQuotient(2 * h);
}

RowVec FrozenDensity::dt_log_rho(const RowVec& x, const Mat& y, double t) const {
  if (time_free_) return RowVec::Zero(x.size());
  return (log_rho(x, y, t + t_step_) - log_rho(x, y, t - t_step_)) / (2 * t_step_);
}

}  // namespace msavg
