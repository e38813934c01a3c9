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
#include "msavg/model.hpp"

#include <cmath>
#include <sstream>

#include "msavg/cell.hpp"

namespace msavg {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kModelEvaluation: return "model-evaluation error";
    case ErrorKind::kSingularDiffusion: return "singular-diffusion error";
    case ErrorKind::kInvalidDensity: return "invalid-density error";
    case ErrorKind::kCellSolver: return "cell-solver error";
    case ErrorKind::kCentering: return "centering error";
    case ErrorKind::kDependency: return "dependency error";
    case ErrorKind::kAveraging: return "averaging error";
    case ErrorKind::kDivergence: return "divergence error";
    case ErrorKind::kNumerical: return "numerical error";
    case ErrorKind::kUnsupportedModel: return "unsupported-model error";
    case ErrorKind::kIneligibleModel: return "ineligible-model error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kEstimation: return "estimation error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

std::string describe_point(const Vec& x, const Vec& y, double t) {
  std::ostringstream os;
  os.precision(6);
  os << "(x=[" << x.transpose() << "], y=[" << y.transpose() << "], t=" << t << ")";
  return os.str();
}

void CoefficientSet::validate() const {
  if (m < 1 || n < 1 || p < 1) {
    throw Error("model_core", ErrorKind::kConfiguration, "dimensions must be positive");
  }
  if (!b || !f || !g || !c || !sigma || !eta) {
    throw Error("model_core", ErrorKind::kConfiguration, "coefficient set has an empty field");
  }
}

Mat eval_batch(const Field& field, int dim, const Mat& x, const Mat& y, double t) {
  Mat out = Mat::Zero(dim, x.cols());
  field(x, y, t, out);
  return out;
}

Vec eval_vector(const Field& field, int dim, const Vec& x, const Vec& y, double t) {
  return eval_batch(field, dim, x, y, t).col(0);
}

Mat eval_matrix(const Field& field, int rows, int cols, const Vec& x, const Vec& y, double t) {
  const Vec flat = eval_batch(field, rows * cols, x, y, t).col(0);
  return Eigen::Map<const Mat>(flat.data(), rows, cols);
}

DiffusionBlocks diffusion_blocks(const CoefficientSet& coeffs, const Vec& x, const Vec& y, double t) {
  const Mat s = eval_matrix(coeffs.sigma, coeffs.m, coeffs.p, x, y, t);
  const Mat e = eval_matrix(coeffs.eta, coeffs.n, coeffs.p, x, y, t);
  return {s * s.transpose(), s * e.transpose(), e * e.transpose()};
}

namespace {

// Per-column products of flattened sigma/eta batches.
Mat outer_batch(const Mat& left, int lrows, const Mat& right, int rrows, int p) {
  Mat out(lrows * rrows, left.cols());
  for (Eigen::Index k = 0; k < left.cols(); ++k) {
    Eigen::Map<const Mat> l(left.col(k).data(), lrows, p);
    Eigen::Map<const Mat> r(right.col(k).data(), rrows, p);
    Eigen::Map<Mat>(out.col(k).data(), lrows, rrows) = l * r.transpose();
  }
  return out;
}

}  // namespace

DiffusionDivergences diffusion_divergences(const CoefficientSet& coeffs, const Mat& x, const Mat& y,
                                           double t, double step) {
  const int m = coeffs.m, n = coeffs.n, p = coeffs.p;
  const Eigen::Index K = x.cols();
  DiffusionDivergences out{Mat::Zero(m, K), Mat::Zero(m, K), Mat::Zero(n, K), Mat::Zero(n, K)};
  if (coeffs.constant_diffusion) return out;
  auto blocks = [&](const Mat& xs, const Mat& ys) {
    const Mat s = eval_batch(coeffs.sigma, m * p, xs, ys, t);
    const Mat e = eval_batch(coeffs.eta, n * p, xs, ys, t);
    return std::tuple{outer_batch(s, m, s, m, p), outer_batch(s, m, e, n, p), outer_batch(e, n, e, n, p)};
  };
  for (int j = 0; j < m; ++j) {
    Mat xp = x, xm = x;
    xp.row(j).array() += step;
    xm.row(j).array() -= step;
    const auto [ap, hp, alp] = blocks(xp, y);
    const auto [am, hm, alm] = blocks(xm, y);
    const Mat da = (ap - am) / (2 * step);
    const Mat dh = (hp - hm) / (2 * step);
    for (int i = 0; i < m; ++i) out.div_x_a.row(i) += da.row(i + m * j);
    for (int i = 0; i < n; ++i) out.div_x_ht.row(i) += dh.row(j + m * i);
  }
  for (int j = 0; j < n; ++j) {
    Mat yp = y, ym = y;
    yp.row(j).array() += step;
    ym.row(j).array() -= step;
    const auto [ap, hp, alp] = blocks(x, yp);
    const auto [am, hm, alm] = blocks(x, ym);
    const Mat dh = (hp - hm) / (2 * step);
    const Mat dal = (alp - alm) / (2 * step);
    for (int i = 0; i < m; ++i) out.div_y_h.row(i) += dh.row(i + m * j);
    for (int i = 0; i < n; ++i) out.div_y_alpha.row(i) += dal.row(i + n * j);
  }
  return out;
}

InitialDistribution InitialDistribution::point(const Vec& x0, const Vec& y0) {
  Vec mean(x0.size() + y0.size());
  mean << x0, y0;
  return {mean, Mat::Zero(mean.size(), mean.size())};
}

InitialDistribution InitialDistribution::gaussian(const Vec& mean, const Mat& cov) {
  return {mean, cov};
}

Mat InitialDistribution::factor() const {
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const Vec root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

bool Box::contains(const Eigen::Ref<const Vec>& z) const {
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (!(z[i] > lo[i] && z[i] < hi[i])) return false;
  }
  return true;
}

void MultiscaleModel::validate() const {
  coeffs.validate();
  if (!(epsilon > 0)) throw Error("model_core", ErrorKind::kConfiguration, "epsilon must be positive");
  if (!(T > 0)) throw Error("model_core", ErrorKind::kConfiguration, "T must be positive");
  if (burn_in < 0) throw Error("model_core", ErrorKind::kConfiguration, "burn_in must be nonnegative");
  if (init.mean.size() != coeffs.m + coeffs.n) {
    throw Error("model_core", ErrorKind::kConfiguration, "initial mean has wrong dimension");
  }
  if (slow_box.lo.size() != coeffs.m || fast_box.lo.size() != coeffs.n) {
    throw Error("model_core", ErrorKind::kConfiguration, "truncated domain has wrong dimension");
  }
  if (!slow_box.contains(init.mean.head(coeffs.m)) || !fast_box.contains(init.mean.tail(coeffs.n))) {
    throw Error("model_core", ErrorKind::kConfiguration, "initial mean outside the truncated domain");
  }
}

double rcond(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec& s = svd.singularValues();
  if (s.size() == 0 || s[0] == 0.0) return 0.0;
  return s[s.size() - 1] / s[0];
}

DriftDiffusion assemble_drift_diffusion(const CoefficientSet& coeffs, double epsilon, const Vec& x,
                                        const Vec& y, double t) {
  const int m = coeffs.m, n = coeffs.n;
  const Vec b = eval_vector(coeffs.b, m, x, y, t);
  const Vec f = eval_vector(coeffs.f, m, x, y, t);
  const Vec g = eval_vector(coeffs.g, n, x, y, t);
  const Vec c = eval_vector(coeffs.c, n, x, y, t);
  const Mat s = eval_matrix(coeffs.sigma, m, coeffs.p, x, y, t);
  const Mat e = eval_matrix(coeffs.eta, n, coeffs.p, x, y, t);
  DriftDiffusion out;
  out.B.resize(m + n);
  out.B << b + f / epsilon, g / epsilon + c / (epsilon * epsilon);
  out.Sigma.resize(m + n, coeffs.p);
  out.Sigma << s, e / epsilon;
  out.D = out.Sigma * out.Sigma.transpose();
  if (!out.B.allFinite() || !out.Sigma.allFinite()) {
    throw Error("model_core", ErrorKind::kModelEvaluation, "non-finite coefficient at " + describe_point(x, y, t));
  }
  const double rc = rcond(out.D);
  if (rc < kSingularRcond) {
    std::ostringstream os;
    os << "rcond(D) = " << rc << " at " << describe_point(x, y, t);
    throw Error("model_core", ErrorKind::kSingularDiffusion, os.str());
  }
  return out;
}

DriftDiffusion assemble_drift_diffusion(const MultiscaleModel& model, const Vec& x, const Vec& y, double t) {
  return assemble_drift_diffusion(model.coeffs, model.epsilon, x, y, t);
}

ParityVector ParityVector::even(int m, int n) { return {std::vector<int>(m + n, 1)}; }

ParityVector ParityVector::parse(const std::string& text) {
  ParityVector out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const int v = std::stoi(item.substr(first));
    if (v != 1 && v != -1) {
      throw Error("model_core", ErrorKind::kConfiguration, "parity entries must be +1 or -1");
    }
    out.delta.push_back(v);
  }
  return out;
}

void ParityVector::validate(int m, int n) const {
  if (static_cast<int>(delta.size()) != m + n) {
    throw Error("model_core", ErrorKind::kConfiguration, "parity vector must have length m + n");
  }
  for (int d : delta) {
    if (d != 1 && d != -1) throw Error("model_core", ErrorKind::kConfiguration, "parity entries must be +1 or -1");
  }
}

Vec ParityVector::slow(int m) const {
  Vec out(m);
  for (int i = 0; i < m; ++i) out[i] = delta[i];
  return out;
}

Vec ParityVector::fast(int m, int n) const {
  Vec out(n);
  for (int i = 0; i < n; ++i) out[i] = delta[m + i];
  return out;
}

bool ParityVector::all_even() const {
  for (int d : delta) {
    if (d != 1) return false;
  }
  return true;
}

namespace {

// out(i, k) = scale_i * field(dx x, dy y)(i, k); for matrix fields the row
// scale applies to the leading dimension.
Field reflect(const Field& field, const Vec& dx, const Vec& dy, const Vec& row_scale) {
  return [=](ConstBatch x, ConstBatch y, double t, OutBatch out) {
    const Mat rx = dx.asDiagonal() * x;
    const Mat ry = dy.asDiagonal() * y;
    field(rx, ry, t, out);
    const Eigen::Index rows = row_scale.size();
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) *= row_scale[r % rows];
  };
}

}  // namespace

CoefficientSet apply_parity(const CoefficientSet& coeffs, const ParityVector& delta) {
  delta.validate(coeffs.m, coeffs.n);
  const Vec dx = delta.slow(coeffs.m);
  const Vec dy = delta.fast(coeffs.m, coeffs.n);
  CoefficientSet out = coeffs;
  out.b = reflect(coeffs.b, dx, dy, dx);
  out.f = reflect(coeffs.f, dx, dy, dx);
  out.g = reflect(coeffs.g, dx, dy, dy);
  out.c = reflect(coeffs.c, dx, dy, dy);
  out.sigma = reflect(coeffs.sigma, dx, dy, dx);
  out.eta = reflect(coeffs.eta, dx, dy, dy);
  return out;
}

void ComparableSpec::validate(const CoefficientSet& coeffs) const {
  if (!b || !g) throw Error("model_core", ErrorKind::kConfiguration, "comparable drift missing");
  if (kind == ComparableKind::kForward) {
    if (f || parity) {
      throw Error("model_core", ErrorKind::kConfiguration, "forward comparable shares f and carries no parity");
    }
  } else {
    if (!f) throw Error("model_core", ErrorKind::kConfiguration, "backward comparable requires f_tilde");
    if (parity) parity->validate(coeffs.m, coeffs.n);
  }
}

EffectiveBackward effective_backward(const ComparableSpec& spec, const CoefficientSet& coeffs) {
  if (!spec.parity || spec.parity->all_even()) return {spec.b, spec.f, spec.g};
  const Vec dx = spec.parity->slow(coeffs.m);
  const Vec dy = spec.parity->fast(coeffs.m, coeffs.n);
  return {reflect(spec.b, dx, dy, dx), reflect(spec.f, dx, dy, dx), reflect(spec.g, dx, dy, dy)};
}

ComparableSpec identity_comparable(const CoefficientSet& coeffs, ComparableKind kind) {
  ComparableSpec spec;
  spec.kind = kind;
  spec.b = coeffs.b;
  spec.g = coeffs.g;
  if (kind == ComparableKind::kBackward) spec.f = coeffs.f;
  return spec;
}

CompatibilityReport check_compatible_conditions(const CoefficientSet& coeffs, const Field& f_tilde,
                                                const CellSolution& rho, const Mat& ys,
                                                const std::optional<ParityVector>& parity) {
  const int m = coeffs.m, n = coeffs.n, p = coeffs.p;
  const Eigen::Index K = ys.cols();
  const Mat xs = rho.x().replicate(1, K);
  const double t = rho.t();
  const RowVec logr = rho.log_rho(ys);
  if (!logr.allFinite()) {
    throw Error("model_core", ErrorKind::kInvalidDensity, "rho is not strictly positive on the check grid");
  }
  const Mat grad = rho.grad_y_log_rho(ys);
  const Mat f = eval_batch(coeffs.f, m, xs, ys, t);
  const Mat ft = eval_batch(f_tilde, m, xs, ys, t);
  const Mat c = eval_batch(coeffs.c, n, xs, ys, t);
  const Mat s = eval_batch(coeffs.sigma, m * p, xs, ys, t);
  const Mat e = eval_batch(coeffs.eta, n * p, xs, ys, t);
  const Mat h = outer_batch(s, m, e, n, p);
  const Mat al = outer_batch(e, n, e, n, p);
  const DiffusionDivergences div = diffusion_divergences(coeffs, xs, ys, t);

  CompatibilityReport report;
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::Map<const Mat> hk(h.col(k).data(), m, n);
    Eigen::Map<const Mat> ak(al.col(k).data(), n, n);
    const Vec r41 = f.col(k) + ft.col(k) - div.div_y_h.col(k) - hk * grad.col(k);
    const Vec r42 = 2.0 * c.col(k) - div.div_y_alpha.col(k) - ak * grad.col(k);
    report.a41 = std::max(report.a41, r41.cwiseAbs().maxCoeff());
    report.a42 = std::max(report.a42, r42.cwiseAbs().maxCoeff());
  }
  if (parity) {
    const CoefficientSet reflected = apply_parity(coeffs, *parity);
    const Mat cd = eval_batch(reflected.c, n, xs, ys, t);
    const Mat sd = eval_batch(reflected.sigma, m * p, xs, ys, t);
    const Mat ed = eval_batch(reflected.eta, n * p, xs, ys, t);
    const Mat a = outer_batch(s, m, s, m, p);
    report.parity_c = (cd - c).cwiseAbs().maxCoeff();
    report.parity_a = (outer_batch(sd, m, sd, m, p) - a).cwiseAbs().maxCoeff();
    report.parity_h = (outer_batch(sd, m, ed, n, p) - h).cwiseAbs().maxCoeff();
    report.parity_alpha = (outer_batch(ed, n, ed, n, p) - al).cwiseAbs().maxCoeff();
  }
  return report;
}

}  // namespace msavg
