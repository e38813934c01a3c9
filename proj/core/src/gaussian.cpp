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
#include "msavg/gaussian.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SparseLU>

#include "msavg/cell.hpp"

namespace msavg {
namespace {

constexpr const char* kModule = "path_engine";

struct Derivative {
  Vec dmean;
  Mat dcov;
};

Derivative rhs(const LinearSDE& s, const Vec& mean, const Mat& cov) {
  return {s.M * mean + s.k, s.M * cov + cov * s.M.transpose() + s.D};
}

}  // namespace

LinearSDE linearize(const CoefficientSet& coeffs, double epsilon, double t) {
  const int m = coeffs.m, n = coeffs.n, d = m + n;
  auto drift = [&](const Vec& z) {
    return assemble_drift_diffusion(coeffs, epsilon, z.head(m), z.tail(n), t);
  };
  const DriftDiffusion base = drift(Vec::Zero(d));
  LinearSDE out;
  out.k = base.B;
  out.D = base.D;
  out.M.resize(d, d);
  for (int i = 0; i < d; ++i) out.M.col(i) = drift(Vec::Unit(d, i)).B - base.B;
  Vec probe(d);
  for (int i = 0; i < d; ++i) probe[i] = 0.7 - 1.3 * i + 0.37 * i * i;
  const DriftDiffusion check = drift(probe);
  const double scale = 1.0 + check.B.cwiseAbs().maxCoeff();
  if ((check.B - (out.M * probe + out.k)).cwiseAbs().maxCoeff() > 1e-9 * scale ||
      (check.D - out.D).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + out.D.cwiseAbs().maxCoeff())) {
    throw Error(kModule, ErrorKind::kUnsupportedModel,
                "exact Gaussian moments need an affine drift and constant diffusion");
  }
  return out;
}

GaussianState evolve_gaussian_moments(const LinearSDE& sde, double t0, double t1, const GaussianState& state,
                                      double max_step) {
  const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / max_step - 1e-9)));
  const double h = (t1 - t0) / steps;
  Vec m = state.mean;
  Mat c = state.cov;
  for (int s = 0; s < steps; ++s) {
    const Derivative k1 = rhs(sde, m, c);
    const Derivative k2 = rhs(sde, m + 0.5 * h * k1.dmean, c + 0.5 * h * k1.dcov);
    const Derivative k3 = rhs(sde, m + 0.5 * h * k2.dmean, c + 0.5 * h * k2.dcov);
    const Derivative k4 = rhs(sde, m + h * k3.dmean, c + h * k3.dcov);
    m += h / 6 * (k1.dmean + 2 * k2.dmean + 2 * k3.dmean + k4.dmean);
    c += h / 6 * (k1.dcov + 2 * k2.dcov + 2 * k3.dcov + k4.dcov);
    c = 0.5 * (c + c.transpose()).eval();
  }
  return {m, c};
}

GaussianState evolve_gaussian_moments(const CoefficientSet& coeffs, double epsilon, double t0, double t1,
                                      const GaussianState& state, double max_step) {
  if (coeffs.time_homogeneous) {
    return evolve_gaussian_moments(linearize(coeffs, epsilon, t0), t0, t1, state, max_step);
  }
  // Piecewise-frozen coefficients on sub-intervals of length max_step.
  GaussianState s = state;
  const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / max_step - 1e-9)));
  const double h = (t1 - t0) / steps;
  for (int i = 0; i < steps; ++i) {
    const double ta = t0 + i * h;
    s = evolve_gaussian_moments(linearize(coeffs, epsilon, ta + 0.5 * h), ta, ta + h, s, h);
  }
  return s;
}

RowVec gaussian_log_density(const GaussianState& state, const Mat& z) {
  return GaussianTrack({0.0}, {state}).log_density(0, z);
}

GaussianTrack::GaussianTrack(std::vector<double> times, std::vector<GaussianState> states)
    : times_(std::move(times)), states_(std::move(states)) {
  for (const GaussianState& s : states_) {
    const Eigen::LDLT<Mat> ldlt(s.cov);
    const double det = s.cov.determinant();
    if (ldlt.info() != Eigen::Success || !(det > 0)) {
      inv_.emplace_back();
      log_norm_.push_back(NAN);
      continue;
    }
    inv_.push_back(s.cov.inverse());
    log_norm_.push_back(-0.5 * (s.cov.rows() * std::log(2 * M_PI) + std::log(det)));
  }
}

RowVec GaussianTrack::log_density(int i, const Mat& z) const {
  if (std::isnan(log_norm_[i])) {
    throw Error(kModule, ErrorKind::kInvalidDensity, "Gaussian law is degenerate at this time");
  }
  const Mat d = z.colwise() - states_[i].mean;
  return (-0.5 * (d.array() * (inv_[i] * d).array()).colwise().sum()).matrix().array() + log_norm_[i];
}

GaussianTrack multiscale_track(const MultiscaleModel& model, const std::vector<double>& times) {
  GaussianState s{model.init.mean, model.init.cov};
  double t = -model.burn_in;
  std::vector<GaussianState> states;
  for (double tt : times) {
    if (tt > t) s = evolve_gaussian_moments(model.coeffs, model.epsilon, t, tt, s);
    t = std::max(t, tt);
    states.push_back(s);
  }
  return GaussianTrack(times, std::move(states));
}

ReducedDensity ReducedDensity::build(const AveragedModel& avg, double x0_mean, double x0_var, double t0,
                                     const std::vector<double>& times, double x_lo, double x_hi, int nodes,
                                     double dt) {
  ReducedDensity out;
  const MuSolution probe = solve_mu(avg, avg.grid.ts.front(), x_lo, x_hi, 129);
  const bool time_free = avg.grid.nt() == 1;
  if (probe.gaussian && time_free) {
    const double slope = avg.w.dx(0.0, 0.0);
    LinearSDE sde{Mat::Constant(1, 1, slope), Vec::Constant(1, avg.w(0.0, 0.0)), Mat::Constant(1, 1, avg.A(0.0, 0.0))};
    GaussianState s{Vec::Constant(1, x0_mean), Mat::Constant(1, 1, x0_var)};
    double t = t0;
    std::vector<GaussianState> states;
    for (double tt : times) {
      if (tt > t) s = evolve_gaussian_moments(sde, t, tt, s);
      t = std::max(t, tt);
      states.push_back(s);
    }
    out.kind_ = Kind::kGaussian;
    out.track_ = GaussianTrack(times, std::move(states));
    return out;
  }
  // Crank-Nicolson on the conservative reduced Fokker-Planck operator.
  out.kind_ = Kind::kFiniteDifference;
  CoefficientSet reduced;
  reduced.m = reduced.n = reduced.p = 1;
  const Field zero = [](ConstBatch, ConstBatch, double, OutBatch o) { o.setZero(); };
  reduced.b = reduced.f = reduced.g = reduced.sigma = zero;
  const GridTable& w = avg.w;
  const GridTable& A = avg.A;
  reduced.c = [&w](ConstBatch, ConstBatch y, double tt, OutBatch o) { o.row(0) = w.eval(y.row(0), tt); };
  reduced.eta = [&A](ConstBatch, ConstBatch y, double tt, OutBatch o) {
    o.row(0) = A.eval(y.row(0), tt).cwiseMax(0.0).cwiseSqrt();
  };
  const FastGrid grid(Vec::Constant(1, x_lo), Vec::Constant(1, x_hi), {nodes});
  const Mat pts = grid.points();
  out.xs_.assign(pts.data(), pts.data() + pts.size());
  const double spacing = grid.spacing(0);
  const double var0 = std::max(x0_var, 4 * spacing * spacing);
  Vec rho(nodes);
  for (int i = 0; i < nodes; ++i) {
    const double d = out.xs_[i] - x0_mean;
    rho[i] = std::exp(-0.5 * d * d / var0);
  }
  const Vec wts = grid.weights();
  rho /= wts.dot(rho);
  Eigen::SparseMatrix<double> eye(nodes, nodes);
  eye.setIdentity();
  double t = t0;
  auto factor = [&](double tt, Eigen::SparseMatrix<double>& explicit_part,
                    Eigen::SparseLU<Eigen::SparseMatrix<double>>& lu, double h) {
    const FastOperator op(reduced, Vec::Zero(1), tt, grid);
    explicit_part = eye + 0.5 * h * op.fokker_planck();
    const Eigen::SparseMatrix<double> implicit_part = eye - 0.5 * h * op.fokker_planck();
    lu.compute(implicit_part);
  };
  Eigen::SparseMatrix<double> ex;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool factored = false;
  for (double tt : times) {
    while (t < tt - 1e-12) {
      const double h = std::min(dt, tt - t);
      if (!factored || !time_free || std::abs(h - dt) > 1e-15) {
        factor(t + 0.5 * h, ex, lu, h);
        factored = time_free && std::abs(h - dt) <= 1e-15;
      }
      rho = lu.solve(ex * rho);
      t += h;
    }
    out.log_tables_.push_back(rho.cwiseMax(1e-300).array().log());
  }
  return out;
}

RowVec ReducedDensity::log_p(int i, const RowVec& x) const {
  if (kind_ == Kind::kGaussian) return track_.log_density(i, x);
  RowVec out(x.size());
  const double lo = xs_.front(), dx = xs_[1] - xs_[0];
  const Vec& tab = log_tables_[i];
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double s = std::clamp((x[k] - lo) / dx, 0.0, static_cast<double>(xs_.size() - 1));
    const auto j = std::min(static_cast<std::size_t>(s), xs_.size() - 2);
    const double u = s - static_cast<double>(j);
    out[k] = (1 - u) * tab[j] + u * tab[j + 1];
  }
  return out;
}

}  // namespace msavg
