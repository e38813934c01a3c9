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
#include "msavg/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msavg/cell.hpp"

namespace msavg {
namespace {

constexpr const char* kModule = "functionals";
constexpr double kFieldStep = 1e-5;
constexpr double kMinA = 1e-12;

// Sigma0 = [sigma; eta] ((m + n) x p) from flattened column k.
Mat sigma0(const Mat& sigma, const Mat& eta, int m, int n, int p, Eigen::Index k) {
  Mat s(m + n, p);
  for (int j = 0; j < p; ++j) {
    s.block(0, j, m, 1) = sigma.col(k).segment(j * m, m);
    s.block(m, j, n, 1) = eta.col(k).segment(j * n, n);
  }
  return s;
}

// Sigma0' D0^{-1} and D0^{-1}; throws on a singular D0.
void girsanov_factors(const Mat& s0, Mat& g, Mat& dinv, const Mat& x, const Mat& y, Eigen::Index k, double t) {
  const Mat d0 = s0 * s0.transpose();
  if (rcond(d0) < kSingularRcond) {
    throw Error(kModule, ErrorKind::kSingularDiffusion,
                "D0 = Sigma0 Sigma0' is singular at " + describe_point(x.col(k), y.col(k), t));
  }
  dinv = d0.inverse();
  g = s0.transpose() * dinv;
}

RowVec rowdot(const Mat& a, const Mat& b) { return (a.array() * b.array()).colwise().sum(); }

// d/dx of a scalar field at the columns of (x, y), m = 1.
RowVec field_dx(const Field& field, const Mat& x, const Mat& y, double t) {
  Mat xp = x, xm = x;
  RowVec h(x.cols());
  for (Eigen::Index k = 0; k < x.cols(); ++k) h[k] = kFieldStep * std::max(1.0, std::abs(x(0, k)));
  xp.row(0) += h;
  xm.row(0) -= h;
  return (eval_batch(field, 1, xp, y, t) - eval_batch(field, 1, xm, y, t)).row(0).cwiseQuotient(2 * h);
}

// Divergence in y of an n-vector field.
RowVec field_div_y(const Field& field, int n, const Mat& x, const Mat& y, double t) {
  RowVec out = RowVec::Zero(y.cols());
  for (int l = 0; l < n; ++l) {
    Mat yp = y, ym = y;
    yp.row(l).array() += kFieldStep;
    ym.row(l).array() -= kFieldStep;
    out += (eval_batch(field, n, x, yp, t).row(l) - eval_batch(field, n, x, ym, t).row(l)) / (2 * kFieldStep);
  }
  return out;
}

// Noise data for m = 1 at K points: sigma (p x K), eta (n*p x K), a (1 x K), h' (n x K).
struct SlowNoise {
  Mat sigma, eta, ht;
  RowVec a;

  SlowNoise(const Mat& s, const Mat& e, int n, int p, Eigen::Index K)
      : sigma(s.cols() == K ? s : s.replicate(1, K)), eta(e.cols() == K ? e : e.replicate(1, K)) {
    a = sigma.colwise().squaredNorm();
    ht = Mat::Zero(n, K);
    for (int j = 0; j < p; ++j) {
      ht += (eta.middleRows(j * n, n).array().rowwise() * sigma.row(j).array()).matrix();
    }
  }
};

std::string residual_list(const std::map<std::string, double>& res) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, v] : res) {
    os << (first ? "" : ", ") << k << " = " << v;
    first = false;
  }
  return os.str();
}

void require_m1(const CoefficientSet& cs, const char* what) {
  if (cs.m != 1) throw Error(kModule, ErrorKind::kUnsupportedModel, std::string(what) + " needs one slow coordinate");
}

}  // namespace

double forward_two_eps_deviation(const CoefficientSet& cs, const ComparableSpec& cmp, const Mat& x, const Mat& y,
                                 double t) {
  CoefficientSet hat = cs;
  hat.b = cmp.b;
  hat.g = cmp.g;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const Vec xk = x.col(k), yk = y.col(k);
    const DriftDiffusion d1 = assemble_drift_diffusion(cs, 1.0, xk, yk, t);
    const DriftDiffusion h1 = assemble_drift_diffusion(hat, 1.0, xk, yk, t);
    const Vec delta = d1.B - h1.B;  // eps = 1 gives Delta0 directly
    const Mat d0inv = d1.D.inverse();
    const Vec red_w = d1.Sigma.transpose() * d0inv * delta;
    const double red_t = 0.5 * delta.dot(d0inv * delta);
    for (double eps : {0.1, 0.01}) {
      const DriftDiffusion de = assemble_drift_diffusion(cs, eps, xk, yk, t);
      const DriftDiffusion he = assemble_drift_diffusion(hat, eps, xk, yk, t);
      const Vec full = de.B - he.B;
      const Vec sol = de.D.ldlt().solve(full);
      const Vec full_w = de.Sigma.transpose() * sol;
      const double full_t = 0.5 * full.dot(sol);
      worst = std::max(worst, (full_w - red_w).cwiseAbs().maxCoeff() / (1.0 + red_w.norm()));
      worst = std::max(worst, std::abs(full_t - red_t) / (1.0 + std::abs(red_t)));
    }
  }
  return worst;
}

void probe_points(const MultiscaleModel& model, Mat& x, Mat& y) {
  const int m = model.coeffs.m, n = model.coeffs.n, d = m + n;
  Mat z = model.init.mean.replicate(1, 2 * d + 1);
  for (int i = 0; i < d; ++i) {
    const double v = model.init.cov(i, i);
    const double sd = v > 0 ? std::sqrt(v) : 1.0;
    z(i, 1 + 2 * i) += sd;
    z(i, 2 + 2 * i) -= sd;
  }
  x = z.topRows(m);
  y = z.bottomRows(n);
}

// ---------------------------------------------------------------------------------------------
// Forward epsilon level

ForwardEpsilonSet::ForwardEpsilonSet(const MultiscaleModel& model, ComparableSpec comparable, std::string name,
                                     bool mutations)
    : model_(model), cmp_(std::move(comparable)), name_(std::move(name)), mutations_(mutations) {
  if (cmp_.kind != ComparableKind::kForward) {
    throw Error(kModule, ErrorKind::kConfiguration, name_ + " needs a forward comparable");
  }
  cmp_.validate(model_.coeffs);
  Mat x, y;
  probe_points(model_, x, y);
  const double dev = forward_two_eps_deviation(model_.coeffs, cmp_, x, y, 0.0);
  if (!(dev <= kTwoEpsTol)) {
    std::ostringstream os;
    os << name_ << " integrands depend on eps (relative deviation " << dev << ")";
    throw Error(kModule, ErrorKind::kDivergence, os.str());
  }
}

std::vector<std::string> ForwardEpsilonSet::names() const {
  if (!mutations_) return {name_};
  return {name_, name_ + "_flip_xx", name_ + "_flip_xy", name_ + "_flip_yy"};
}

void ForwardEpsilonSet::integrands(const MultiscaleStep& st, Mat& dw, Mat& dt) const {
  const CoefficientSet& cs = model_.coeffs;
  const int m = cs.m, n = cs.n, p = cs.p;
  const Eigen::Index K = st.x.cols();
  Mat delta(m + n, K);
  delta.topRows(m) = st.b - eval_batch(cmp_.b, m, st.x, st.y, st.t);
  delta.bottomRows(n) = st.g - eval_batch(cmp_.g, n, st.x, st.y, st.t);

  Mat sb(p, K);
  RowVec xx(K), xy(K), yy(K);
  Mat g, dinv;
  if (st.sigma.cols() == 1) {
    girsanov_factors(sigma0(st.sigma, st.eta, m, n, p, 0), g, dinv, st.x, st.y, 0, st.t);
    sb.noalias() = g * delta;
    const auto dx = delta.topRows(m);
    const auto dy = delta.bottomRows(n);
    xx = rowdot(dx, dinv.topLeftCorner(m, m) * dx);
    xy = rowdot(dx, dinv.topRightCorner(m, n) * dy);
    yy = rowdot(dy, dinv.bottomRightCorner(n, n) * dy);
  } else {
    for (Eigen::Index k = 0; k < K; ++k) {
      girsanov_factors(sigma0(st.sigma, st.eta, m, n, p, k), g, dinv, st.x, st.y, k, st.t);
      const Vec d = delta.col(k);
      sb.col(k) = g * d;
      xx[k] = d.head(m).dot(dinv.topLeftCorner(m, m) * d.head(m));
      xy[k] = d.head(m).dot(dinv.topRightCorner(m, n) * d.tail(n));
      yy[k] = d.tail(n).dot(dinv.bottomRightCorner(n, n) * d.tail(n));
    }
  }
  const int F = mutations_ ? 4 : 1;
  for (int i = 0; i < F; ++i) dw.middleRows(static_cast<Eigen::Index>(i) * p, p) = sb;
  dt.row(0) = 0.5 * xx + xy + 0.5 * yy;
  if (mutations_) {
    dt.row(1) = -0.5 * xx + xy + 0.5 * yy;
    dt.row(2) = 0.5 * xx - xy + 0.5 * yy;
    dt.row(3) = 0.5 * xx + xy - 0.5 * yy;
  }
}

// ---------------------------------------------------------------------------------------------
// Backward epsilon level

BackwardEpsilonSet::BackwardEpsilonSet(const MultiscaleModel& model, ComparableSpec comparable, FrozenDensity rho,
                                       std::optional<GaussianTrack> exact, std::optional<ReducedDensity> fallback,
                                       std::string name, BackwardEpsilonOptions options)
    : model_(model),
      cmp_(std::move(comparable)),
      rho_(std::move(rho)),
      exact_(std::move(exact)),
      fallback_(std::move(fallback)),
      name_(std::move(name)),
      opt_(options) {
  const CoefficientSet& cs = model_.coeffs;
  require_m1(cs, "the backward epsilon functional");
  if (cmp_.kind != ComparableKind::kBackward) {
    throw Error(kModule, ErrorKind::kConfiguration, name_ + " needs a backward comparable");
  }
  cmp_.validate(cs);
  if (!exact_ && !fallback_) {
    throw Error(kModule, ErrorKind::kConfiguration, name_ + " needs an exact or a reduced boundary density");
  }
  if (opt_.direct && (!cs.constant_diffusion || !exact_)) {
    throw Error(kModule, ErrorKind::kConfiguration,
                "the unsplit backward form needs constant diffusion and an exact density");
  }
  eff_ = effective_backward(cmp_, cs);
  reversed_ = cmp_.parity ? apply_parity(cs, *cmp_.parity) : cs;

  const double x0 = model_.init.mean[0];
  const double sd = std::sqrt(std::max(model_.init.cov(0, 0), 1.0));
  const XtGrid grid = XtGrid::uniform(x0 - 2 * sd, x0 + 2 * sd, 5, model_.T, cs.time_homogeneous ? 1 : 3);
  SpecOptions so;
  so.probe_nodes = 5;
  compatibility_ = compatibility_residuals(cs, cmp_, grid, so);
  for (const auto& [k, v] : compatibility_) {
    if (!(v <= opt_.compatibility_tol)) {
      throw Error(kModule, ErrorKind::kDivergence,
                  name_ + " diverges as eps -> 0: compatible conditions fail (" + residual_list(compatibility_) + ")");
    }
  }
}

std::vector<std::string> BackwardEpsilonSet::names() const {
  std::vector<std::string> out{name_, name_ + "_H", name_ + "_I"};
  if (opt_.direct) out.push_back(name_ + "_direct");
  return out;
}

void BackwardEpsilonSet::split(const MultiscaleStep& st, Mat& sig, RowVec& dt_h) const {
  const CoefficientSet& cs = model_.coeffs;
  const int n = cs.n, p = cs.p;
  const Eigen::Index K = st.x.cols();
  const double t = st.t;
  const RowVec x = st.x.row(0);
  const Mat& y = st.y;
  const bool constant = st.sigma.cols() == 1;

  const RowVec lx = rho_.dx_log_rho(x, y, t);
  const Mat gly = rho_.grad_y_log_rho(x, y, t);
  const RowVec bt = eval_batch(eff_.b, 1, st.x, y, t).row(0);
  const Mat gt = eval_batch(eff_.g, n, st.x, y, t);
  const SlowNoise nz(st.sigma, st.eta, n, p, K);
  RowVec dxa = RowVec::Zero(K);
  Mat dxh = Mat::Zero(n, K);
  if (!cs.constant_diffusion) {
    const DiffusionDivergences div = diffusion_divergences(cs, st.x, y, t);
    dxa = div.div_x_a.row(0);
    dxh = div.div_x_ht;
  }

  Mat delta(1 + n, K);
  delta.row(0) = st.b.row(0) + bt - dxa - nz.a.cwiseProduct(lx);
  delta.bottomRows(n) = st.g + gt - dxh - (nz.ht.array().rowwise() * lx.array()).matrix();
  sig.resize(p, K);
  Mat g, dinv;
  if (constant) {
    girsanov_factors(sigma0(st.sigma, st.eta, 1, n, p, 0), g, dinv, st.x, y, 0, t);
    sig.noalias() = g * delta;
  } else {
    for (Eigen::Index k = 0; k < K; ++k) {
      girsanov_factors(sigma0(st.sigma, st.eta, 1, n, p, k), g, dinv, st.x, y, k, t);
      sig.col(k) = g * delta.col(k);
    }
  }

  // v = b~ - div_x a / 2 - a d_x log rho / 2 and its x-derivative.
  auto v_at = [&](const RowVec& xs) -> RowVec {
    const Mat xm = xs;
    RowVec v = eval_batch(eff_.b, 1, xm, y, t).row(0);
    if (cs.constant_diffusion) return v - 0.5 * nz.a.cwiseProduct(rho_.dx_log_rho(xs, y, t));
    const SlowNoise nj(eval_batch(cs.sigma, p, xm, y, t), eval_batch(cs.eta, n * p, xm, y, t), n, p, K);
    const RowVec da = diffusion_divergences(cs, xm, y, t).div_x_a.row(0);
    return v - 0.5 * da - 0.5 * nj.a.cwiseProduct(rho_.dx_log_rho(xs, y, t));
  };
  RowVec hs(K);
  for (Eigen::Index k = 0; k < K; ++k) hs[k] = rho_.step(x[k]);
  const RowVec v0 = bt - 0.5 * dxa - 0.5 * nz.a.cwiseProduct(lx);
  const RowVec dv = (v_at(x + hs) - v_at(x - hs)).cwiseQuotient(2 * hs);

  const RowVec f = st.f.row(0);
  const RowVec fm1 = field_div_y(eff_.g, n, st.x, y, t) + rowdot(gt, gly) - field_dx(cs.f, st.x, y, t) -
                     f.cwiseProduct(lx);
  dt_h = 0.5 * sig.colwise().squaredNorm() + dv + v0.cwiseProduct(lx) - rho_.dt_log_rho(x, y, t) +
         fm1 / model_.epsilon;
}

void BackwardEpsilonSet::direct(const MultiscaleStep& st, Mat& sig, RowVec& dt_d) const {
  const CoefficientSet& cs = model_.coeffs;
  const int n = cs.n, p = cs.p;
  const double eps = model_.epsilon, t = st.t;
  const Mat& x = st.x;
  const Mat& y = st.y;
  Mat s = sigma0(st.sigma, st.eta, 1, n, p, 0);
  s.bottomRows(n) /= eps;
  Mat g, dinv;
  girsanov_factors(s, g, dinv, x, y, 0, t);

  const RowVec bt = eval_batch(eff_.b, 1, x, y, t).row(0);
  const RowVec ft = eval_batch(eff_.f, 1, x, y, t).row(0);
  const Mat gt = eval_batch(eff_.g, n, x, y, t);
  const Mat ct = eval_batch(reversed_.c, n, x, y, t);
  Mat sum(1 + n, x.cols());
  sum.row(0) = st.b.row(0) + bt + (st.f.row(0) + ft) / eps;
  sum.bottomRows(n) = (st.g + gt) / eps + (st.c + ct) / (eps * eps);
  sig.noalias() = g * sum;
  const RowVec div = field_dx(eff_.b, x, y, t) + field_dx(eff_.f, x, y, t) / eps +
                     field_div_y(eff_.g, n, x, y, t) / eps + field_div_y(reversed_.c, n, x, y, t) / (eps * eps);
  dt_d = 0.5 * rowdot(sum, dinv * sum) + div;
}

void BackwardEpsilonSet::integrands(const MultiscaleStep& st, Mat& dw, Mat& dt) const {
  const int p = model_.coeffs.p;
  Mat sig;
  RowVec dt_h;
  split(st, sig, dt_h);
  dw.topRows(p) = sig;
  dw.middleRows(p, p) = sig;
  dt.row(0) = dt_h;
  dt.row(1) = dt_h;
  if (opt_.direct) {
    Mat sd;
    RowVec dd;
    direct(st, sd, dd);
    dw.middleRows(3 * p, p) = sd;
    dt.row(3) = dd;
  }
}

void BackwardEpsilonSet::boundary(int record, double t, const Mat& x, const Mat& y, Mat& out) const {
  RowVec u;
  RowVec lp;
  if (exact_) {
    if (record >= static_cast<int>(exact_->times().size())) {
      throw Error(kModule, ErrorKind::kDependency, name_ + ": density track is shorter than the record grid");
    }
    Mat z(x.rows() + y.rows(), x.cols());
    z << x, y;
    lp = exact_->log_density(record, z);
    u = lp - rho_.log_rho(x.row(0), y, t);
  } else {
    u = fallback_->log_p(record, x.row(0));
  }
  out.row(0) = u;
  out.row(1).setZero();
  out.row(2) = u;
  if (opt_.direct) out.row(3) = lp;
}

std::vector<bool> BackwardEpsilonSet::boundary_mask() const {
  std::vector<bool> out{true, false, true};
  if (opt_.direct) out.push_back(true);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Limit level

namespace {

struct LimitFields {
  RowVec w, A, other, bar_w;
};

LimitFields limit_fields(const LimitStep& st, const GridTable& other, const GridTable& bar_w) {
  const RowVec x = st.x.row(0);
  LimitFields lf{st.avg.w.eval(x, st.t), st.avg.A.eval(x, st.t), other.eval(x, st.t), bar_w.eval(x, st.t)};
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (!(lf.A[k] > kMinA)) {
      std::ostringstream os;
      os << "averaged diffusion A = " << lf.A[k] << " is singular at x = " << x[k] << ", t = " << st.t;
      throw Error(kModule, ErrorKind::kSingularDiffusion, os.str());
    }
  }
  return lf;
}

// Rows (total, regular, anomalous) with regular = u * root row 0.
void limit_rows(const LimitStep& st, const RowVec& u, const RowVec& total_dt, const RowVec& regular_dt, Mat& dw,
                Mat& dt) {
  const Mat& r = st.root;
  dw.row(0) = r.row(2);
  dw.row(1) = r.row(3);
  dw.row(2) = u.cwiseProduct(r.row(0));
  dw.row(3) = u.cwiseProduct(r.row(1));
  dw.row(4) = dw.row(0) - dw.row(2);
  dw.row(5) = dw.row(1) - dw.row(3);
  dt.row(0) = total_dt;
  dt.row(1) = regular_dt;
  dt.row(2) = total_dt - regular_dt;
}

}  // namespace

LimitForwardSet::LimitForwardSet(const AveragedModel& avg, const ExtendedSystem& ext, std::string name)
    : avg_(avg), ext_(ext), name_(std::move(name)) {
  if (ext_.kind != ComparableKind::kForward || avg_.w_cmp.empty()) {
    throw Error(kModule, ErrorKind::kConfiguration, name_ + " needs a forward extended system");
  }
}

std::vector<std::string> LimitForwardSet::names() const { return {name_, name_ + "_1", name_ + "_2"}; }

void LimitForwardSet::integrands(const LimitStep& st, Mat& dw, Mat& dt) const {
  const LimitFields lf = limit_fields(st, avg_.w_cmp, ext_.bar_w);
  const RowVec diff = lf.w - lf.other;
  const RowVec u = diff.cwiseQuotient(lf.A);
  limit_rows(st, u, lf.bar_w, 0.5 * diff.cwiseProduct(u), dw, dt);
}

LimitBackwardSet::LimitBackwardSet(const AveragedModel& avg, const ExtendedSystem& ext, ReducedDensity density,
                                   std::string name)
    : avg_(avg), ext_(ext), density_(std::move(density)), name_(std::move(name)) {
  if (ext_.kind != ComparableKind::kBackward || avg_.w_cmp.empty()) {
    throw Error(kModule, ErrorKind::kConfiguration, name_ + " needs a backward extended system");
  }
}

std::vector<std::string> LimitBackwardSet::names() const { return {name_, name_ + "_1", name_ + "_2"}; }

void LimitBackwardSet::integrands(const LimitStep& st, Mat& dw, Mat& dt) const {
  const LimitFields lf = limit_fields(st, avg_.w_cmp, ext_.bar_w);
  const RowVec x = st.x.row(0);
  RowVec dA(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) dA[k] = avg_.A.dx(x[k], st.t);
  const RowVec sum = lf.w + lf.other - dA;
  const RowVec u = sum.cwiseQuotient(lf.A);
  limit_rows(st, u, lf.bar_w, 0.5 * sum.cwiseProduct(u) + ext_.div_wt.eval(x, st.t), dw, dt);
}

void LimitBackwardSet::boundary(int record, double, const Mat& x, const Mat&, Mat& out) const {
  const RowVec lp = density_.log_p(record, x.row(0));
  out.row(0) = lp;
  out.row(1) = lp;
  out.row(2).setZero();
}

ReducedDensity reduced_density_for(const MultiscaleModel& model, const AveragedModel& avg,
                                   const std::vector<double>& times, double burn_in) {
  const double lo = model.slow_box.lo.size() ? model.slow_box.lo[0] : avg.grid.x_lo;
  const double hi = model.slow_box.hi.size() ? model.slow_box.hi[0] : avg.grid.x_hi;
  return ReducedDensity::build(avg, model.init.mean[0], model.init.cov(0, 0), -burn_in, times,
                               std::max(lo, -50.0), std::min(hi, 50.0));
}

// ---------------------------------------------------------------------------------------------
// Physical specializations

std::map<std::string, double> compatibility_residuals(const CoefficientSet& cs, const ComparableSpec& cmp,
                                                      const XtGrid& grid, const SpecOptions& opt) {
  require_m1(cs, "the compatibility scan");
  const EffectiveBackward eff = effective_backward(cmp, cs);
  std::map<std::string, double> out{{"f_condition", 0.0}, {"c_condition", 0.0}};
  const int nodes = std::clamp(opt.probe_nodes, 1, grid.nx);
  for (double t : grid.ts) {
    for (int q = 0; q < nodes; ++q) {
      const int i = nodes == 1 ? grid.nx / 2 : q * (grid.nx - 1) / (nodes - 1);
      const CellSolution cell = CellSolution::solve(cs, Vec::Constant(1, grid.x(i)), t, opt.cell);
      const CompatibilityReport r = check_compatible_conditions(cs, eff.f, cell, cell.nodes(), cmp.parity);
      out["f_condition"] = std::max(out["f_condition"], r.a41);
      out["c_condition"] = std::max(out["c_condition"], r.a42);
      const std::pair<const char*, std::optional<double>> parity[] = {
          {"parity_c", r.parity_c}, {"parity_a", r.parity_a}, {"parity_h", r.parity_h}, {"parity_alpha", r.parity_alpha}};
      for (const auto& [k, v] : parity) {
        if (v) out[k] = std::max(out[k], *v);
      }
    }
  }
  return out;
}

namespace {

ComparableSpec reversed_original(const CoefficientSet& cs, const std::optional<ParityVector>& parity) {
  ComparableSpec cmp = identity_comparable(cs, ComparableKind::kBackward);
  cmp.parity = parity;
  return cmp;
}

std::map<std::string, double> require_compatible(const CoefficientSet& cs, const std::optional<ParityVector>& parity,
                                                 const XtGrid& grid, const SpecOptions& opt, const std::string& what) {
  auto res = compatibility_residuals(cs, reversed_original(cs, parity), grid, opt);
  for (const auto& [k, v] : res) {
    if (!(v <= opt.tol)) {
      throw Error(kModule, ErrorKind::kIneligibleModel,
                  what + " is not defined for this model: compatible conditions fail (" + residual_list(res) + ")");
    }
  }
  return res;
}

}  // namespace

FunctionalSpec make_entropy_production_spec(const MultiscaleModel& model, const std::optional<ParityVector>& parity,
                                            const XtGrid& grid, const SpecOptions& options) {
  FunctionalSpec spec;
  spec.name = "S_tot";
  spec.side = FunctionalSide::kBackward;
  spec.comparable = reversed_original(model.coeffs, parity);
  spec.residuals = require_compatible(model.coeffs, parity, grid, options, "entropy production");
  return spec;
}

FunctionalSpec make_housekeeping_spec(const MultiscaleModel& model, const std::optional<ParityVector>& parity,
                                      const AveragedModel& avg, const XtGrid& grid, const SpecOptions& options) {
  const CoefficientSet& cs = model.coeffs;
  require_m1(cs, "housekeeping entropy production");
  if (!cs.time_homogeneous) {
    throw Error(kModule, ErrorKind::kUnsupportedModel, "housekeeping entropy production needs a time-homogeneous model");
  }
  if (parity && parity->delta[0] != 1) {
    throw Error(kModule, ErrorKind::kUnsupportedModel, "housekeeping entropy production needs an even slow variable");
  }
  FunctionalSpec spec;
  spec.name = "S_hk";
  spec.side = FunctionalSide::kForward;
  spec.residuals = require_compatible(cs, parity, grid, options, "housekeeping entropy production");
  spec.flags.push_back("leading_order_adjoint");

  const double lo = model.slow_box.lo.size() ? std::max(model.slow_box.lo[0], -50.0) : avg.grid.x_lo;
  const double hi = model.slow_box.hi.size() ? std::min(model.slow_box.hi[0], 50.0) : avg.grid.x_hi;
  auto mu = std::make_shared<const MuSolution>(solve_mu(avg, 0.0, lo, hi));
  XtGrid frozen_grid = grid;
  frozen_grid.ts = {0.0};
  auto rho = std::make_shared<const FrozenDensity>(FrozenDensity::build(cs, frozen_grid));
  const CoefficientSet rc = parity ? apply_parity(cs, *parity) : cs;
  const int n = cs.n, p = cs.p;

  // grad_x log mu + grad_x log rho, and the diffusion data, at the points.
  struct Local {
    RowVec score, dxa;
    Mat dxh;
    SlowNoise nz;
  };
  auto local = [cs, mu, rho, n, p](ConstBatch x, ConstBatch y, double t) {
    const Mat xm = x, ym = y;
    const Eigen::Index K = xm.cols();
    RowVec score = rho->dx_log_rho(xm.row(0), ym, t);
    for (Eigen::Index k = 0; k < K; ++k) score[k] += mu->grad_log_mu(xm(0, k));
    RowVec dxa = RowVec::Zero(K);
    Mat dxh = Mat::Zero(n, K);
    if (!cs.constant_diffusion) {
      const DiffusionDivergences div = diffusion_divergences(cs, xm, ym, t);
      dxa = div.div_x_a.row(0);
      dxh = div.div_x_ht;
    }
    return Local{score, dxa, dxh,
                 SlowNoise(eval_batch(cs.sigma, p, xm, ym, t), eval_batch(cs.eta, n * p, xm, ym, t), n, p, K)};
  };
  ComparableSpec cmp;
  cmp.kind = ComparableKind::kForward;
  cmp.b = [rc, local](ConstBatch x, ConstBatch y, double t, OutBatch out) {
    const Local l = local(x, y, t);
    out.row(0) = -eval_batch(rc.b, 1, x, y, t).row(0) + l.dxa + l.nz.a.cwiseProduct(l.score);
  };
  cmp.g = [rc, local, n](ConstBatch x, ConstBatch y, double t, OutBatch out) {
    const Local l = local(x, y, t);
    out = -eval_batch(rc.g, n, x, y, t) + l.dxh + (l.nz.ht.array().rowwise() * l.score.array()).matrix();
  };
  spec.comparable = std::move(cmp);
  return spec;
}

}  // namespace msavg
