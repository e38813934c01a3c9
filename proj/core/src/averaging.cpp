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
#include "msavg/averaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace msavg {
namespace {

constexpr const char* kModule = "averaging";
constexpr double kFieldStep = 1e-5;

Mat row_of(double x, Eigen::Index K) { return Mat::Constant(1, K, x); }

// Weighted sum over quadrature nodes.
double integrate(const Vec& w, const RowVec& values) { return values.dot(w); }

// Dot product of the rows of two n x K batches.
RowVec rowdot(const Mat& a, const Mat& b) { return (a.array() * b.array()).colwise().sum(); }

// Field values and x/y-derivatives for m = 1.
struct Fields {
  const CoefficientSet& cs;
  double t;

  Mat at(const Field& field, int dim, double x, const Mat& y) const {
    return eval_batch(field, dim, row_of(x, y.cols()), y, t);
  }
  Mat dx(const Field& field, int dim, double x, const Mat& y) const {
    const double s = kFieldStep * std::max(1.0, std::abs(x));
    return (at(field, dim, x + s, y) - at(field, dim, x - s, y)) / (2 * s);
  }
  // Divergence in y of an n-vector field.
  RowVec div_y(const Field& field, double x, const Mat& y) const {
    RowVec out = RowVec::Zero(y.cols());
    for (int l = 0; l < cs.n; ++l) {
      Mat yp = y, ym = y;
      yp.row(l).array() += kFieldStep;
      ym.row(l).array() -= kFieldStep;
      out += (at(field, cs.n, x, yp).row(l) - at(field, cs.n, x, ym).row(l)) / (2 * kFieldStep);
    }
    return out;
  }
};

// Noise factors at quadrature nodes: sigma (p x K, slow row), eta (n*p x K).
struct Noise {
  Mat sigma, eta;
  int n = 1, p = 1;

  Noise(const Fields& fl, double x, const Mat& y)
      : sigma(fl.at(fl.cs.sigma, fl.cs.p, x, y)), eta(fl.at(fl.cs.eta, fl.cs.n * fl.cs.p, x, y)),
        n(fl.cs.n), p(fl.cs.p) {}

  RowVec a() const { return sigma.colwise().squaredNorm(); }
  // h = sigma eta' (n x K); also used for any p-row vector v in place of sigma.
  Mat times_eta(const Mat& v) const {
    Mat out = Mat::Zero(n, v.cols());
    for (int k = 0; k < p; ++k) out += (eta.middleRows(k * n, n).array().rowwise() * v.row(k).array()).matrix();
    return out;
  }
  Mat h() const { return times_eta(sigma); }
  // D0 = [[a, h], [h', alpha]] at node k and Sigma0 = [sigma; eta].
  Mat sigma0(Eigen::Index k) const {
    Mat s(1 + n, p);
    s.row(0) = sigma.col(k).transpose();
    for (int j = 0; j < p; ++j) s.block(1, j, n, 1) = eta.col(k).segment(j * n, n);
    return s;
  }
};

// sigma-bar = Delta0' D0^{-1} Sigma0 for each node (p x K).
Mat girsanov_row(const Noise& nz, const Mat& delta) {
  const Eigen::Index K = delta.cols();
  Mat out(nz.p, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Mat s0 = nz.sigma0(k);
    const Mat d0 = s0 * s0.transpose();
    if (rcond(d0) < kSingularRcond) {
      throw Error(kModule, ErrorKind::kSingularDiffusion,
                  "D0 = Sigma0 Sigma0' is singular; the functional needs non-degenerate noise");
    }
    out.col(k) = s0.transpose() * d0.ldlt().solve(delta.col(k));
  }
  return out;
}

struct StencilCell {
  double x = 0.0;
  std::unique_ptr<CellSolution> cell;
};

// Cells at x + j h for |j| <= radius with phi and (optionally) phi-tilde.
class Stencil {
 public:
  Stencil(const CoefficientSet& cs, const Field* f_tilde, double x, double t, int radius,
          const AveragingOptions& opt)
      : radius_(radius), h_(opt.x_step_rel * std::max(1.0, std::abs(x))) {
    for (int j = -radius; j <= radius; ++j) {
      StencilCell sc;
      sc.x = x + j * h_;
      sc.cell = std::make_unique<CellSolution>(CellSolution::solve(cs, Vec::Constant(1, sc.x), t, opt.cell));
      if (f_tilde) {
        const Field& ft = *f_tilde;
        const double xj = sc.x;
        sc.cell->add_corrector(
            Corrector::kPhiTilde,
            [&ft, xj, t](const Mat& y) { return eval_batch(ft, 1, row_of(xj, y.cols()), y, t); },
            opt.cell.centering_tol);
      }
      cells_.push_back(std::move(sc));
    }
  }

  CellSolution& cell(int j) { return *cells_[j + radius_].cell; }
  const CellSolution& cell(int j) const { return *cells_[j + radius_].cell; }
  double x(int j) const { return cells_[j + radius_].x; }
  double h() const { return h_; }
  bool contains(int j) const { return j >= -radius_ && j <= radius_; }

  // d/dx of a cell quantity evaluated on the nodes of cell j.
  template <class Fn>
  Mat ddx(int j, const Mat& y, Fn&& quantity) const {
    return (quantity(cell(j + 1), y) - quantity(cell(j - 1), y)) / (2 * h_);
  }

 private:
  int radius_;
  double h_;
  std::vector<StencilCell> cells_;
};

struct FirstOrder {
  double w = 0.0, A = 0.0;
};

// w and A integrals at stencil index j for corrector  and drift fields (b, g, f).
FirstOrder lemma_integrals(const Stencil& st, const Fields& fl, int j, Corrector which, const Field& b,
                           const Field& g, const Field& f) {
  const CoefficientSet& cs = fl.cs;
  const CellSolution& c0 = st.cell(j);
  const Mat& y = c0.nodes();
  const Vec& W = c0.weights();
  const double x = st.x(j);
  const Noise nz(fl, x, y);
  const Mat hh = nz.h();
  const RowVec phi = c0.corrector(which, y).row(0);
  const Mat grad = c0.corrector_grad(which, y);  // n x K
  const RowVec fv = fl.at(f, 1, x, y).row(0);
  const Mat gv = fl.at(g, cs.n, x, y);
  FirstOrder out;
  if (st.contains(j - 1) && st.contains(j + 1)) {
    const Mat dphi = st.ddx(j, y, [which](const CellSolution& c, const Mat& yy) { return c.corrector(which, yy); });
    const Mat dgrad =
        st.ddx(j, y, [which](const CellSolution& c, const Mat& yy) { return c.corrector_grad(which, yy); });
    const RowVec integrand = fl.at(b, 1, x, y).row(0) + dphi.row(0).cwiseProduct(fv) + rowdot(grad, gv) +
                             rowdot(dgrad, hh);
    out.w = integrate(W, integrand);
  }
  out.A = integrate(W, nz.a() + 2.0 * phi.cwiseProduct(fv) + 2.0 * rowdot(grad, hh));
  return out;
}

}  // namespace

XtGrid XtGrid::uniform(double x_lo, double x_hi, int nx, double T, int nt) {
  if (nx < 3 || !(x_hi > x_lo) || nt < 1) {
    throw Error(kModule, ErrorKind::kConfiguration, "x-grid needs at least 3 nodes over a non-empty interval");
  }
  XtGrid g;
  g.x_lo = x_lo;
  g.x_hi = x_hi;
  g.nx = nx;
  g.ts.resize(nt);
  for (int j = 0; j < nt; ++j) g.ts[j] = nt == 1 ? 0.0 : T * j / (nt - 1);
  return g;
}

GridTable::GridTable(XtGrid grid, Mat values) : grid_(std::move(grid)), values_(std::move(values)) {
  const int nx = grid_.nx;
  if (values_.rows() != nx || values_.cols() != grid_.nt()) {
    throw Error(kModule, ErrorKind::kDependency, "table shape does not match its grid");
  }
  const double dx = grid_.dx();
  slopes_.resize(nx, values_.cols());
  for (Eigen::Index j = 0; j < values_.cols(); ++j) {
    const auto v = values_.col(j);
    slopes_(0, j) = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * dx);
    slopes_(nx - 1, j) = (3 * v[nx - 1] - 4 * v[nx - 2] + v[nx - 3]) / (2 * dx);
    for (int i = 1; i < nx - 1; ++i) slopes_(i, j) = (v[i + 1] - v[i - 1]) / (2 * dx);
  }
}

void GridTable::bracket_t(double t, int& j0, int& j1, double& wt) const {
  const auto& ts = grid_.ts;
  if (ts.size() == 1 || t <= ts.front()) {
    j0 = j1 = 0;
    wt = 0.0;
    return;
  }
  if (t >= ts.back()) {
    j0 = j1 = static_cast<int>(ts.size()) - 1;
    wt = 0.0;
    return;
  }
  j1 = static_cast<int>(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
  j0 = j1 - 1;
  wt = (t - ts[j0]) / (ts[j1] - ts[j0]);
}

double GridTable::eval_column(int j, double x, double* derivative) const {
  const int nx = grid_.nx;
  const double dx = grid_.dx();
  const double s = (x - grid_.x_lo) / dx;
  if (s <= 0.0 || s >= nx - 1) {
    const int i = s <= 0.0 ? 0 : nx - 1;
    const double slope = slopes_(i, j);
    if (derivative) *derivative = slope;
    return values_(i, j) + slope * (x - grid_.x(i));
  }
  const int i = std::min(static_cast<int>(s), nx - 2);
  const double u = s - i;
  const double p0 = values_(i, j), p1 = values_(i + 1, j);
  const double m0 = slopes_(i, j) * dx, m1 = slopes_(i + 1, j) * dx;
  const double u2 = u * u, u3 = u2 * u;
  if (derivative) {
    *derivative = ((6 * u2 - 6 * u) * p0 + (3 * u2 - 4 * u + 1) * m0 + (-6 * u2 + 6 * u) * p1 + (3 * u2 - 2 * u) * m1) / dx;
  }
  return (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 + (-2 * u3 + 3 * u2) * p1 + (u3 - u2) * m1;
}

double GridTable::operator()(double x, double t) const {
  int j0, j1;
  double wt;
  bracket_t(t, j0, j1, wt);
  const double v0 = eval_column(j0, x, nullptr);
  return j0 == j1 ? v0 : (1 - wt) * v0 + wt * eval_column(j1, x, nullptr);
}

double GridTable::dx(double x, double t) const {
  int j0, j1;
  double wt, d0, d1;
  bracket_t(t, j0, j1, wt);
  eval_column(j0, x, &d0);
  if (j0 == j1) return d0;
  eval_column(j1, x, &d1);
  return (1 - wt) * d0 + wt * d1;
}

RowVec GridTable::eval(const RowVec& x, double t) const {
  RowVec out(x.size());
  int j0, j1;
  double wt;
  bracket_t(t, j0, j1, wt);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double v0 = eval_column(j0, x[k], nullptr);
    out[k] = j0 == j1 ? v0 : (1 - wt) * v0 + wt * eval_column(j1, x[k], nullptr);
  }
  return out;
}

double ExtendedSystem::max_residual(const std::string& name) const {
  const auto it = residuals.find(name);
  if (it == residuals.end()) throw Error(kModule, ErrorKind::kDependency, "no residual named " + name);
  return it->second.cwiseAbs().maxCoeff();
}

NodeAverages average_node(const CoefficientSet& cs, const ComparableSpec* cmp, double x, double t,
                          const AveragingOptions& opt, bool extended) {
  if (cs.m != 1) {
    throw Error(kModule, ErrorKind::kUnsupportedModel, "averaging is implemented for one slow coordinate");
  }
  const Fields fl{cs, t};
  const bool backward = cmp && cmp->kind == ComparableKind::kBackward;
  EffectiveBackward eff;
  if (backward) eff = effective_backward(*cmp, cs);
  const int radius = backward && extended ? 2 : 1;
  Stencil st(cs, backward ? &eff.f : nullptr, x, t, radius, opt);
  NodeAverages out;

  const FirstOrder base = lemma_integrals(st, fl, 0, Corrector::kPhi, cs.b, cs.g, cs.f);
  out.w = base.w;
  out.A = base.A;
  if (!(out.A >= -1e-12)) {
    std::ostringstream os;
    os << "averaged diffusion A = " << out.A << " is not PSD at x = " << x << ", t = " << t;
    throw Error(kModule, ErrorKind::kAveraging, os.str());
  }
  if (cmp && !backward) {
    out.w_cmp = lemma_integrals(st, fl, 0, Corrector::kPhi, cmp->b, cmp->g, cs.f).w;
  }
  if (backward) {
    const FirstOrder tl = lemma_integrals(st, fl, 0, Corrector::kPhiTilde, eff.b, eff.g, eff.f);
    out.w_cmp = tl.w;
    out.A_tilde = tl.A;
  }
  if (!extended || !cmp) return out;

  const CellSolution& c0 = st.cell(0);
  const Mat& y = c0.nodes();
  const Vec& W = c0.weights();
  const Eigen::Index K = y.cols();
  const Noise nz(fl, x, y);
  const Mat hh = nz.h();
  const Mat grad_phi = c0.corrector_grad(Corrector::kPhi, y);

  if (!backward) {
    Mat delta(1 + cs.n, K);
    delta.row(0) = fl.at(cs.b, 1, x, y) - fl.at(cmp->b, 1, x, y);
    delta.bottomRows(cs.n) = fl.at(cs.g, cs.n, x, y) - fl.at(cmp->g, cs.n, x, y);
    const Mat sbar = girsanov_row(nz, delta);
    out.bar_w = 0.5 * integrate(W, sbar.colwise().squaredNorm());
    out.bar_A_mm = integrate(W, sbar.colwise().squaredNorm());
    out.bar_A_mx = integrate(W, rowdot(sbar, nz.sigma) + rowdot(grad_phi, nz.times_eta(sbar)));
    return out;
  }

  // Backward extended system.
  const Field& bt = eff.b;
  const Field& gt = eff.g;
  const Field& ft = eff.f;
  auto dlogrho = [&st](int j, const Mat& yy) -> RowVec {
    return st.ddx(j, yy, [](const CellSolution& c, const Mat& q) { return Mat(c.log_rho(q)); }).row(0);
  };
  auto div_x_a = [&](double xj, const Mat& yy) -> RowVec {
    return diffusion_divergences(cs, row_of(xj, yy.cols()), yy, t).div_x_a.row(0);
  };
  // v = b~ - div_x a / 2 - a d_x log rho / 2 at stencil j.
  auto v_at = [&](int j, const Mat& yy) -> RowVec {
    const double xj = st.x(j);
    const Noise nj(fl, xj, yy);
    return fl.at(bt, 1, xj, yy).row(0) - 0.5 * div_x_a(xj, yy) - 0.5 * nj.a().cwiseProduct(dlogrho(j, yy));
  };
  auto fm1_at = [&](int j, const Mat& yy) -> RowVec {
    const double xj = st.x(j);
    const CellSolution& cj = st.cell(j);
    const RowVec fv = fl.at(cs.f, 1, xj, yy).row(0);
    return fl.div_y(gt, xj, yy) + rowdot(fl.at(gt, cs.n, xj, yy), cj.grad_y_log_rho(yy)) -
           fl.dx(cs.f, 1, xj, yy).row(0) - fv.cwiseProduct(dlogrho(j, yy));
  };
  const double fm1_tol = opt.cell.backend == CellBackend::kAnalyticOu ? 1e-6 : 1e-3;
  for (int j = -1; j <= 1; ++j) {
    st.cell(j).add_corrector(
        Corrector::kPhiM1, [&fm1_at, j](const Mat& yy) { return Mat(fm1_at(j, yy)); }, fm1_tol);
  }

  // sigma^{m+1} and b^{m+1} at the centre.
  const RowVec dl0 = dlogrho(0, y);
  const DiffusionDivergences div = diffusion_divergences(cs, row_of(x, K), y, t);
  Mat delta(1 + cs.n, K);
  delta.row(0) = fl.at(cs.b, 1, x, y).row(0) + fl.at(bt, 1, x, y).row(0) - div.div_x_a.row(0) -
                 nz.a().cwiseProduct(dl0);
  delta.bottomRows(cs.n) = fl.at(cs.g, cs.n, x, y) + fl.at(gt, cs.n, x, y) - div.div_x_ht -
                           (hh.array().rowwise() * dl0.array()).matrix();
  const Mat sm1 = girsanov_row(nz, delta);
  const RowVec s2 = sm1.colwise().squaredNorm();
  const RowVec v0 = v_at(0, y);
  const RowVec dv = (v_at(1, y) - v_at(-1, y)) / (2 * st.h());
  RowVec dt_log = RowVec::Zero(K);
  if (!cs.time_homogeneous) {
    const double ht = 1e-4;
    const CellSolution cp = CellSolution::solve(cs, Vec::Constant(1, x), t + ht, opt.cell);
    const CellSolution cm = CellSolution::solve(cs, Vec::Constant(1, x), t - ht, opt.cell);
    dt_log = (cp.log_rho(y) - cm.log_rho(y)) / (2 * ht);
  }
  const RowVec bm1 = 0.5 * s2 + dv + v0.cwiseProduct(dl0) - dt_log;
  const RowVec fm1 = fm1_at(0, y);
  const RowVec fv = fl.at(cs.f, 1, x, y).row(0);
  const Mat gv = fl.at(cs.g, cs.n, x, y);
  const RowVec phi = c0.corrector(Corrector::kPhi, y).row(0);
  const RowVec phim1 = c0.corrector(Corrector::kPhiM1, y).row(0);
  const Mat grad_m1 = c0.corrector_grad(Corrector::kPhiM1, y);
  const Mat dphim1 = st.ddx(0, y, [](const CellSolution& c, const Mat& q) { return c.corrector(Corrector::kPhiM1, q); });
  const Mat dgrad_m1 =
      st.ddx(0, y, [](const CellSolution& c, const Mat& q) { return c.corrector_grad(Corrector::kPhiM1, q); });
  const Mat hbar = nz.times_eta(sm1);

  out.bar_w = integrate(W, bm1 + dphim1.row(0).cwiseProduct(fv) + rowdot(grad_m1, gv) + rowdot(dgrad_m1, hh));
  out.bar_A_mm = integrate(W, s2 + 2.0 * phim1.cwiseProduct(fm1) + 2.0 * rowdot(grad_m1, hbar));
  out.bar_A_mx = integrate(W, rowdot(sm1, nz.sigma) + phim1.cwiseProduct(fv) + phi.cwiseProduct(fm1) +
                                  rowdot(grad_m1, hh) + rowdot(grad_phi, hbar));

  // Q = int (v - phi^{m+1} f~) rho at j = +-1.
  auto q_at = [&](int j) {
    const CellSolution& cj = st.cell(j);
    const Mat& yj = cj.nodes();
    const RowVec fm = cj.corrector(Corrector::kPhiM1, yj).row(0);
    return integrate(cj.weights(), v_at(j, yj) - fm.cwiseProduct(fl.at(ft, 1, st.x(j), yj).row(0)));
  };
  out.dQ = (q_at(1) - q_at(-1)) / (2 * st.h());

  // d/dx (w~ - A'/2) from the five-point stencil.
  std::array<double, 5> a_vals{};
  for (int j = -2; j <= 2; ++j) a_vals[j + 2] = lemma_integrals(st, fl, j, Corrector::kPhi, cs.b, cs.g, cs.f).A;
  auto dA_at = [&](int j) { return (a_vals[j + 3] - a_vals[j + 1]) / (2 * st.h()); };
  auto wt_at = [&](int j) { return lemma_integrals(st, fl, j, Corrector::kPhiTilde, bt, gt, ft).w; };
  out.dA = dA_at(0);
  out.div_wt = ((wt_at(1) - 0.5 * dA_at(1)) - (wt_at(-1) - 0.5 * dA_at(-1))) / (2 * st.h());

  // Full-form check: the epsilon-scaled integrand must reduce to sigma^{m+1}.
  if (opt.cell.backend == CellBackend::kAnalyticOu) {
    CoefficientSet reversed = cs;
    if (cmp->parity) reversed = apply_parity(cs, *cmp->parity);
    const Mat cv = fl.at(cs.c, cs.n, x, y);
    const Mat ctv = fl.at(reversed.c, cs.n, x, y);
    const Mat gly = c0.grad_y_log_rho(y);
    const Mat fdelta_f = fl.at(cs.f, 1, x, y) + fl.at(ft, 1, x, y) - div.div_y_h -
                         rowdot(hh, gly);
    Mat r_c(cs.n, K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Mat sk = nz.sigma0(k);
      const Mat alpha = sk.bottomRows(cs.n) * sk.bottomRows(cs.n).transpose();
      r_c.col(k) = cv.col(k) + ctv.col(k) - div.div_y_alpha.col(k) - alpha * gly.col(k);
    }
    double worst = 0.0;
    for (double eps : {0.1, 0.01}) {
      Mat full(1 + cs.n, K);
      full.row(0) = delta.row(0) + fdelta_f.row(0) / eps;
      full.bottomRows(cs.n) = delta.bottomRows(cs.n) / eps + r_c / (eps * eps);
      for (Eigen::Index k = 0; k < K; ++k) {
        Mat s = nz.sigma0(k);
        s.bottomRows(cs.n) /= eps;
        const Mat d = s * s.transpose();
        const Vec full_k = s.transpose() * d.ldlt().solve(full.col(k));
        worst = std::max(worst, (full_k - sm1.col(k)).cwiseAbs().maxCoeff() / (1.0 + sm1.col(k).norm()));
      }
    }
    out.two_eps = worst;
  }
  return out;
}

AveragedModel compute_averaged_coefficients(const CoefficientSet& coeffs, const ComparableSpec* comparable,
                                            const XtGrid& grid, const AveragingOptions& options) {
  if (comparable) comparable->validate(coeffs);
  const int nx = grid.nx, nt = grid.nt();
  Mat w(nx, nt), A(nx, nt), wc(nx, nt), At(nx, nt);
  for (int j = 0; j < nt; ++j) {
    for (int i = 0; i < nx; ++i) {
      const NodeAverages na = average_node(coeffs, comparable, grid.x(i), grid.ts[j], options, false);
      w(i, j) = na.w;
      A(i, j) = na.A;
      wc(i, j) = na.w_cmp;
      At(i, j) = na.A_tilde;
    }
  }
  AveragedModel avg;
  avg.grid = grid;
  avg.w = GridTable(grid, w);
  avg.A = GridTable(grid, A);
  avg.backend = options.cell.backend;
  if (comparable) {
    avg.comparable = comparable->kind;
    avg.w_cmp = GridTable(grid, wc);
    if (comparable->kind == ComparableKind::kBackward) avg.A_tilde = GridTable(grid, At);
  }
  return avg;
}

namespace {

ExtendedSystem extended(const CoefficientSet& coeffs, const ComparableSpec& cmp, const AveragedModel& avg,
                        const AveragingOptions& options, ComparableKind kind) {
  if (cmp.kind != kind) throw Error(kModule, ErrorKind::kConfiguration, "comparable kind does not match");
  cmp.validate(coeffs);
  const XtGrid& grid = avg.grid;
  const int nx = grid.nx, nt = grid.nt();
  Mat bw(nx, nt), amm(nx, nt), amx(nx, nt), dwt = Mat::Zero(nx, nt);
  ExtendedSystem ext;
  ext.kind = kind;
  const bool analytic = options.cell.backend == CellBackend::kAnalyticOu;
  const std::vector<std::string> names =
      kind == ComparableKind::kForward
          ? std::vector<std::string>{"forward_mm_vs_2w", "forward_mx_vs_w_minus_what"}
          : std::vector<std::string>{"backward_mx", "backward_w_vs_Q", "backward_divw_vs_Q", "backward_mm_combined",
                                     "A_vs_A_tilde", "two_eps"};
  for (const auto& nm : names) ext.residuals[nm] = Mat::Zero(nx, nt);
  for (int j = 0; j < nt; ++j) {
    for (int i = 0; i < nx; ++i) {
      const NodeAverages na = average_node(coeffs, &cmp, grid.x(i), grid.ts[j], options, true);
      bw(i, j) = na.bar_w;
      amm(i, j) = na.bar_A_mm;
      amx(i, j) = na.bar_A_mx;
      if (kind == ComparableKind::kForward) {
        ext.residuals["forward_mm_vs_2w"](i, j) = na.bar_A_mm - 2 * na.bar_w;
        ext.residuals["forward_mx_vs_w_minus_what"](i, j) = na.bar_A_mx - (na.w - na.w_cmp);
      } else {
        dwt(i, j) = na.div_wt;
        ext.residuals["backward_mx"](i, j) = na.bar_A_mx - (na.w + na.w_cmp - na.dA);
        ext.residuals["backward_w_vs_Q"](i, j) = na.bar_w - 0.5 * na.bar_A_mm - na.dQ;
        ext.residuals["backward_divw_vs_Q"](i, j) = na.div_wt - na.dQ;
        ext.residuals["backward_mm_combined"](i, j) = na.bar_A_mm - 2 * (na.bar_w - na.div_wt);
        ext.residuals["A_vs_A_tilde"](i, j) = na.A - na.A_tilde;
        ext.residuals["two_eps"](i, j) = na.two_eps;
      }
    }
  }
  const double tol = analytic ? options.identity_tol : 1e-3;
  for (const auto& nm : names) ext.thresholds[nm] = nm == "two_eps" ? 1e-8 : tol;
  if (kind == ComparableKind::kForward) {
    for (const auto& nm : names) ext.thresholds[nm] = analytic ? 1e-8 : 1e-3;
  }
  ext.bar_w = GridTable(grid, bw);
  ext.bar_A_mm = GridTable(grid, amm);
  ext.bar_A_mx = GridTable(grid, amx);
  if (kind == ComparableKind::kBackward) ext.div_wt = GridTable(grid, dwt);
  return ext;
}

}  // namespace

ExtendedSystem compute_extended_forward(const CoefficientSet& coeffs, const ComparableSpec& comparable,
                                        const AveragedModel& avg, const AveragingOptions& options) {
  return extended(coeffs, comparable, avg, options, ComparableKind::kForward);
}

ExtendedSystem compute_extended_backward(const CoefficientSet& coeffs, const ComparableSpec& comparable,
                                         const AveragedModel& avg, const AveragingOptions& options) {
  return extended(coeffs, comparable, avg, options, ComparableKind::kBackward);
}

double MuSolution::log_mu(double x) const {
  if (gaussian) return -0.5 * (x - mean) * (x - mean) / var - 0.5 * std::log(2 * M_PI * var);
  const double dx = xs[1] - xs[0];
  const double s = std::clamp((x - xs.front()) / dx, 0.0, static_cast<double>(xs.size() - 1));
  const auto i = std::min(static_cast<std::size_t>(s), xs.size() - 2);
  const double u = s - static_cast<double>(i);
  return (1 - u) * log_density[i] + u * log_density[i + 1];
}

double MuSolution::grad_log_mu(double x) const {
  if (gaussian) return -(x - mean) / var;
  const double dx = xs[1] - xs[0];
  return (log_mu(x + 0.5 * dx) - log_mu(x - 0.5 * dx)) / dx;
}

MuSolution solve_mu(const AveragedModel& avg, double t, double x_lo, double x_hi, int nodes) {
  MuSolution mu;
  // Affine drift with constant diffusion has a Gaussian law.
  const XtGrid& g = avg.grid;
  RowVec xs(g.nx), ws(g.nx), as(g.nx);
  for (int i = 0; i < g.nx; ++i) {
    xs[i] = g.x(i);
    ws[i] = avg.w(xs[i], t);
    as[i] = avg.A(xs[i], t);
  }
  const double slope = (ws[g.nx - 1] - ws[0]) / (xs[g.nx - 1] - xs[0]);
  const double icpt = ws[0] - slope * xs[0];
  const double scale = 1.0 + ws.cwiseAbs().maxCoeff();
  const bool affine = ((ws.array() - (icpt + slope * xs.array())).abs() < 1e-9 * scale).all();
  const bool flat = (as.array() - as[0]).abs().maxCoeff() < 1e-9 * (1.0 + std::abs(as[0]));
  if (affine && flat && slope < 0 && as[0] > 0) {
    mu.gaussian = true;
    mu.mean = -icpt / slope;
    mu.var = as[0] / (-2 * slope);
    return mu;
  }
  CoefficientSet reduced;
  reduced.m = 1;
  reduced.n = 1;
  reduced.p = 1;
  const Field zero = [](ConstBatch, ConstBatch, double, OutBatch out) { out.setZero(); };
  reduced.b = reduced.f = reduced.g = reduced.sigma = zero;
  const GridTable& w = avg.w;
  const GridTable& A = avg.A;
  reduced.c = [&w](ConstBatch, ConstBatch y, double tt, OutBatch out) {
    out.row(0) = w.eval(y.row(0), tt);
  };
  reduced.eta = [&A](ConstBatch, ConstBatch y, double tt, OutBatch out) {
    out.row(0) = A.eval(y.row(0), tt).cwiseMax(0.0).cwiseSqrt();
  };
  const FastGrid grid(Vec::Constant(1, x_lo), Vec::Constant(1, x_hi), {nodes});
  const PseudoStationary ps = solve_pseudo_stationary(reduced, Vec::Zero(1), t, grid);
  const Mat pts = grid.points();
  mu.xs.assign(pts.data(), pts.data() + pts.size());
  mu.log_density = ps.rho.array().log();
  return mu;
}

void write_averaged_csv(const AveragedModel& avg, const ExtendedSystem* ext, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(kModule, ErrorKind::kIo, "cannot write " + path.string());
  out << std::setprecision(17);
  out << "x,t,w,A,w_cmp,A_tilde";
  if (ext) {
    out << ",bar_w,bar_A_mm,bar_A_mx";
    for (const auto& [name, _] : ext->residuals) out << "," << name;
  }
  out << "\n";
  const XtGrid& g = avg.grid;
  for (int j = 0; j < g.nt(); ++j) {
    for (int i = 0; i < g.nx; ++i) {
      out << g.x(i) << "," << g.ts[j] << "," << avg.w.values()(i, j) << "," << avg.A.values()(i, j) << ","
          << (avg.w_cmp.empty() ? 0.0 : avg.w_cmp.values()(i, j)) << ","
          << (avg.A_tilde.empty() ? 0.0 : avg.A_tilde.values()(i, j));
      if (ext) {
        out << "," << ext->bar_w.values()(i, j) << "," << ext->bar_A_mm.values()(i, j) << ","
            << ext->bar_A_mx.values()(i, j);
        for (const auto& [name, table] : ext->residuals) out << "," << table(i, j);
      }
      out << "\n";
    }
  }
}

}  // namespace msavg
