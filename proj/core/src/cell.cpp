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
#include "msavg/cell.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/SparseLU>
#include <unsupported/Eigen/KroneckerProduct>

namespace msavg {

namespace {

constexpr const char* kModule = "cell_solver";

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// d/dy_axis of grid columns: central inside, second-order one-sided at the ends.
Mat grid_derivative(const FastGrid& grid, const Mat& values, int axis) {
  Mat out(values.rows(), values.cols());
  const int n0 = grid.nodes(0);
  const int n1 = grid.n() > 1 ? grid.nodes(1) : 1;
  const int len = grid.nodes(axis);
  const double d = grid.spacing(axis);
  for (int i1 = 0; i1 < n1; ++i1) {
    for (int i0 = 0; i0 < n0; ++i0) {
      const int pos = axis == 0 ? i0 : i1;
      auto at = [&](int shift) {
        return axis == 0 ? grid.index(i0 + shift, i1) : grid.index(i0, i1 + shift);
      };
      const int k = at(0);
      if (pos == 0) {
        out.row(k) = (-3.0 * values.row(at(0)) + 4.0 * values.row(at(1)) - values.row(at(2))) / (2 * d);
      } else if (pos == len - 1) {
        out.row(k) = (3.0 * values.row(at(0)) - 4.0 * values.row(at(-1)) + values.row(at(-2))) / (2 * d);
      } else {
        out.row(k) = (values.row(at(1)) - values.row(at(-1))) / (2 * d);
      }
    }
  }
  return out;
}

// Gradient table N x (c*n), column i*n + l = d values_i / d y_l.
Mat grid_gradient(const FastGrid& grid, const Mat& values) {
  const int n = grid.n();
  Mat out(values.rows(), values.cols() * n);
  for (int l = 0; l < n; ++l) {
    const Mat d = grid_derivative(grid, values, l);
    for (Eigen::Index i = 0; i < values.cols(); ++i) out.col(i * n + l) = d.col(i);
  }
  return out;
}

double second_difference(const Vec& u, int k, int step, int pos, int len, double d) {
  if (pos == 0) return (2 * u[k] - 5 * u[k + step] + 4 * u[k + 2 * step] - u[k + 3 * step]) / (d * d);
  if (pos == len - 1) return (2 * u[k] - 5 * u[k - step] + 4 * u[k - 2 * step] - u[k - 3 * step]) / (d * d);
  return (u[k + step] - 2 * u[k] + u[k - step]) / (d * d);
}

}  // namespace

const char* to_string(CellBackend backend) {
  return backend == CellBackend::kNumericFd ? "numeric_fd" : "analytic_ou";
}

FastGrid::FastGrid(Vec lo, Vec hi, std::vector<int> nodes)
    : lo_(std::move(lo)), hi_(std::move(hi)), nodes_(std::move(nodes)) {
  if (nodes_.empty() || nodes_.size() > 2) {
    throw Error(kModule, ErrorKind::kUnsupportedModel, "numeric grids support n = 1 or 2");
  }
  for (std::size_t d = 0; d < nodes_.size(); ++d) {
    if (nodes_[d] < kMinGridNodes) {
      throw Error(kModule, ErrorKind::kConfiguration, "fast grid needs at least 129 nodes per axis");
    }
    if (!(hi_[d] > lo_[d])) throw Error(kModule, ErrorKind::kConfiguration, "empty fast box");
  }
}

FastGrid FastGrid::centered(const Vec& mean, const Vec& sd, double radius, int nodes) {
  return FastGrid(mean - radius * sd, mean + radius * sd, std::vector<int>(mean.size(), nodes));
}

int FastGrid::size() const {
  int s = 1;
  for (int v : nodes_) s *= v;
  return s;
}

Mat FastGrid::points() const {
  Mat out(n(), size());
  const int n1 = n() > 1 ? nodes_[1] : 1;
  for (int i1 = 0; i1 < n1; ++i1) {
    for (int i0 = 0; i0 < nodes_[0]; ++i0) {
      const int k = index(i0, i1);
      out(0, k) = lo_[0] + i0 * spacing(0);
      if (n() > 1) out(1, k) = lo_[1] + i1 * spacing(1);
    }
  }
  return out;
}

Vec FastGrid::weights() const {
  Vec out(size());
  const int n1 = n() > 1 ? nodes_[1] : 1;
  for (int i1 = 0; i1 < n1; ++i1) {
    for (int i0 = 0; i0 < nodes_[0]; ++i0) {
      double w = spacing(0) * ((i0 == 0 || i0 == nodes_[0] - 1) ? 0.5 : 1.0);
      if (n() > 1) w *= spacing(1) * ((i1 == 0 || i1 == nodes_[1] - 1) ? 0.5 : 1.0);
      out[index(i0, i1)] = w;
    }
  }
  return out;
}

std::uint64_t FastGrid::hash() const {
  std::uint64_t h = fnv1a(nodes_.data(), nodes_.size() * sizeof(int));
  h = fnv1a(lo_.data(), lo_.size() * sizeof(double), h);
  return fnv1a(hi_.data(), hi_.size() * sizeof(double), h);
}

void FastGrid::locate(const Eigen::Ref<const Vec>& y, std::array<int, 4>& idx, std::array<double, 4>& w) const {
  std::array<int, 2> base{0, 0};
  std::array<double, 2> frac{0.0, 0.0};
  for (int d = 0; d < n(); ++d) {
    const double s = std::clamp((y[d] - lo_[d]) / spacing(d), 0.0, static_cast<double>(nodes_[d] - 1));
    base[d] = std::min(static_cast<int>(s), nodes_[d] - 2);
    frac[d] = s - base[d];
  }
  if (n() == 1) {
    idx = {base[0], base[0] + 1, base[0], base[0]};
    w = {1 - frac[0], frac[0], 0.0, 0.0};
  } else {
    idx = {index(base[0], base[1]), index(base[0] + 1, base[1]), index(base[0], base[1] + 1),
           index(base[0] + 1, base[1] + 1)};
    w = {(1 - frac[0]) * (1 - frac[1]), frac[0] * (1 - frac[1]), (1 - frac[0]) * frac[1], frac[0] * frac[1]};
  }
}

Vec apply_L0(const CoefficientSet& coeffs, const Vec& x, double t, const FastGrid& grid, const Vec& u) {
  const int n = grid.n();
  const Mat ys = grid.points();
  const Mat xs = x.replicate(1, ys.cols());
  const Mat c = eval_batch(coeffs.c, n, xs, ys, t);
  const Mat e = eval_batch(coeffs.eta, n * coeffs.p, xs, ys, t);
  const Mat du = grid_gradient(grid, u);
  Mat second(u.size(), n * n);
  const int n0 = grid.nodes(0);
  const int n1 = n > 1 ? grid.nodes(1) : 1;
  for (int i1 = 0; i1 < n1; ++i1) {
    for (int i0 = 0; i0 < n0; ++i0) {
      const int k = grid.index(i0, i1);
      second(k, 0) = second_difference(u, k, 1, i0, n0, grid.spacing(0));
      if (n > 1) second(k, 3) = second_difference(u, k, n0, i1, n1, grid.spacing(1));
    }
  }
  if (n > 1) {
    const Mat mixed = grid_derivative(grid, du.col(0), 1);
    second.col(1) = mixed.col(0);
    second.col(2) = mixed.col(0);
  }
  Vec out(u.size());
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    Eigen::Map<const Mat> ek(e.col(k).data(), n, coeffs.p);
    const Mat alpha = ek * ek.transpose();
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      v += c(i, k) * du(k, i);
      for (int j = 0; j < n; ++j) v += 0.5 * alpha(i, j) * second(k, i * n + j);
    }
    out[k] = v;
  }
  return out;
}

FastOperator::FastOperator(const CoefficientSet& coeffs, const Vec& x, double t, const FastGrid& grid)
    : grid_(grid), weights_(grid.weights()) {
  const int n = grid.n();
  const int N = grid.size();
  const Mat ys = grid.points();
  const Mat xs = x.replicate(1, N);
  const Mat c = eval_batch(coeffs.c, n, xs, ys, t);
  const Mat e = eval_batch(coeffs.eta, n * coeffs.p, xs, ys, t);
  Mat alpha(n * n, N);
  for (int k = 0; k < N; ++k) {
    Eigen::Map<const Mat> ek(e.col(k).data(), n, coeffs.p);
    Eigen::Map<Mat>(alpha.col(k).data(), n, n) = ek * ek.transpose();
  }
  if (!c.allFinite() || !alpha.allFinite()) {
    throw Error(kModule, ErrorKind::kModelEvaluation, "non-finite fast coefficients at x=" + std::to_string(x[0]));
  }
  for (int k = 0; k < N; ++k) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(Eigen::Map<const Mat>(alpha.col(k).data(), n, n));
    if (eig.eigenvalues().minCoeff() <= 0) {
      throw Error(kModule, ErrorKind::kCellSolver, "alpha is not elliptic on the fast grid");
    }
  }

  std::vector<Eigen::Triplet<double>> trips;
  const int n0 = grid.nodes(0);
  const int n1 = n > 1 ? grid.nodes(1) : 1;
  auto coord = [&](int k, int axis) { return axis == 0 ? k % n0 : k / n0; };
  auto shifted = [&](int k, int axis, int s) { return axis == 0 ? k + s : k + s * n0; };
  auto half = [&](int k, int axis) {
    const int pos = coord(k, axis);
    const int len = grid.nodes(axis);
    return (pos == 0 || pos == len - 1) ? 0.5 : 1.0;
  };
  // Linear functional d/dy_axis (alpha_{ab} rho) at node k, as (index, coef) pairs.
  auto derivative_terms = [&](int k, int axis, int ab, std::vector<std::pair<int, double>>& out) {
    const int pos = coord(k, axis);
    const int len = grid.nodes(axis);
    const double d = grid.spacing(axis);
    auto push = [&](int s, double coef) {
      const int kk = shifted(k, axis, s);
      out.emplace_back(kk, coef * alpha(ab, kk));
    };
    if (pos == 0) {
      push(0, -1.5 / d); push(1, 2.0 / d); push(2, -0.5 / d);
    } else if (pos == len - 1) {
      push(0, 1.5 / d); push(-1, -2.0 / d); push(-2, 0.5 / d);
    } else {
      push(1, 0.5 / d); push(-1, -0.5 / d);
    }
  };

  for (int axis = 0; axis < n; ++axis) {
    const int other = 1 - axis;
    const double d = grid.spacing(axis);
    for (int k = 0; k < N; ++k) {
      if (coord(k, axis) == grid.nodes(axis) - 1) continue;
      const int q = shifted(k, axis, 1);
      double area = 1.0;
      if (n > 1) area = grid.spacing(other) * half(k, other);
      // Flux J = cbar (rho_k + rho_q)/2 - (alpha_aa rho_q - alpha_aa rho_k)/(2d) - cross/2.
      std::vector<std::pair<int, double>> flux;
      const double cbar = 0.5 * (c(axis, k) + c(axis, q));
      const int aa = axis * n + axis;
      flux.emplace_back(k, 0.5 * cbar + 0.5 * alpha(aa, k) / d);
      flux.emplace_back(q, 0.5 * cbar - 0.5 * alpha(aa, q) / d);
      if (n > 1) {
        std::vector<std::pair<int, double>> cross;
        const int ab = axis * n + other;
        derivative_terms(k, other, ab, cross);
        derivative_terms(q, other, ab, cross);
        for (const auto& [idx, coef] : cross) flux.emplace_back(idx, -0.25 * coef);
      }
      for (const auto& [idx, coef] : flux) {
        trips.emplace_back(k, idx, -area * coef / weights_[k]);
        trips.emplace_back(q, idx, area * coef / weights_[q]);
      }
    }
  }
  (void)n1;
  fp_.resize(N, N);
  fp_.setFromTriplets(trips.begin(), trips.end());
  fp_.makeCompressed();
}

FastOperator FastOperator::empty(const FastGrid& grid) {
  FastOperator op;
  op.grid_ = grid;
  op.weights_ = grid.weights();
  return op;
}

Eigen::SparseMatrix<double> FastOperator::generator() const {
  const Eigen::SparseMatrix<double> t = fp_.transpose();
  Eigen::SparseMatrix<double> out = weights_.cwiseInverse().asDiagonal() * t * weights_.asDiagonal();
  out.makeCompressed();
  return out;
}

namespace {

Eigen::SparseMatrix<double> bordered(const Eigen::SparseMatrix<double>& a, const Vec& col, const Vec& row) {
  const int N = static_cast<int>(a.rows());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(a.nonZeros() + 2 * N);
  for (int k = 0; k < a.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) {
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
    }
  }
  for (int i = 0; i < N; ++i) {
    trips.emplace_back(i, N, col[i]);
    trips.emplace_back(N, i, row[i]);
  }
  Eigen::SparseMatrix<double> out(N + 1, N + 1);
  out.setFromTriplets(trips.begin(), trips.end());
  out.makeCompressed();
  return out;
}

double condition_probe(Eigen::SparseLU<Eigen::SparseMatrix<double>>& lu, const Eigen::SparseMatrix<double>& a) {
  double norm_a = 0.0;
  for (int r = 0; r < a.rows(); ++r) norm_a = std::max(norm_a, Vec(a.row(r).cwiseAbs().transpose()).sum());
  Vec probe = Vec::Ones(a.rows());
  for (Eigen::Index i = 1; i < probe.size(); i += 2) probe[i] = -1.0;
  const Vec sol = lu.solve(probe);
  return norm_a * sol.cwiseAbs().maxCoeff();
}

}  // namespace

// Tail values below this fraction of the peak are roundoff and get floored.
constexpr double kRoundoffFloor = 1e-14;

PseudoStationary solve_pseudo_stationary(const FastOperator& op) {
  const int N = static_cast<int>(op.fokker_planck().rows());
  const Eigen::SparseMatrix<double> sys = bordered(op.fokker_planck(), Vec::Ones(N), op.weights());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(sys);
  if (lu.info() != Eigen::Success) {
    throw Error(kModule, ErrorKind::kCellSolver, "pseudo-stationary system is singular: " + lu.lastErrorMessage());
  }
  Vec rhs = Vec::Zero(N + 1);
  rhs[N] = 1.0;
  const Vec sol = lu.solve(rhs);
  PseudoStationary out;
  out.rho = sol.head(N);
  out.condition_estimate = condition_probe(lu, sys);
  out.mass = op.weights().dot(out.rho);
  const double scale = out.rho.cwiseAbs().maxCoeff();
  out.residual = (op.fokker_planck() * out.rho).cwiseAbs().maxCoeff() / scale;
  if (!out.rho.allFinite() || out.residual > 1e-8) {
    std::ostringstream os;
    os << "pseudo-stationary residual " << out.residual << " (condition estimate " << out.condition_estimate << ")";
    throw Error(kModule, ErrorKind::kCellSolver, os.str());
  }
  if (out.rho.minCoeff() < -kRoundoffFloor * scale || out.rho.maxCoeff() <= 0.0) {
    std::ostringstream os;
    os << "discrete density is not positive (min " << out.rho.minCoeff() << ", condition estimate "
       << out.condition_estimate << ")";
    throw Error(kModule, ErrorKind::kCellSolver, os.str());
  }
  out.rho = out.rho.cwiseMax(kRoundoffFloor * scale);
  return out;
}

PseudoStationary solve_pseudo_stationary(const CoefficientSet& coeffs, const Vec& x, double t, const FastGrid& grid) {
  return solve_pseudo_stationary(FastOperator(coeffs, x, t, grid));
}

PoissonResult solve_poisson(const FastOperator& op, const Vec& rho, const Mat& rhs, double centering_tol) {
  const int N = static_cast<int>(rho.size());
  const Vec u = op.weights().cwiseProduct(rho);
  PoissonResult out;
  out.centering = rhs.transpose() * u;
  for (Eigen::Index j = 0; j < out.centering.size(); ++j) {
    if (std::abs(out.centering[j]) > centering_tol) {
      std::ostringstream os;
      os << "integral of rhs*rho = " << out.centering[j] << " in column " << j << " exceeds " << centering_tol;
      throw Error(kModule, ErrorKind::kCentering, os.str());
    }
  }
  const Eigen::SparseMatrix<double> lap = op.generator();
  const Eigen::SparseMatrix<double> sys = bordered(-lap, u, u);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(sys);
  if (lu.info() != Eigen::Success) {
    throw Error(kModule, ErrorKind::kCellSolver, "Poisson system is singular: " + lu.lastErrorMessage());
  }
  out.phi.resize(N, rhs.cols());
  for (Eigen::Index j = 0; j < rhs.cols(); ++j) {
    Vec b = Vec::Zero(N + 1);
    b.head(N) = rhs.col(j);
    const Vec sol = lu.solve(b);
    out.phi.col(j) = sol.head(N);
    const Vec r = -(lap * out.phi.col(j)) + sol[N] * u - rhs.col(j);
    const double scale = std::max(1.0, rhs.col(j).cwiseAbs().maxCoeff());
    out.residual = std::max(out.residual, r.cwiseAbs().maxCoeff() / scale);
  }
  if (!out.phi.allFinite() || out.residual > 1e-8) {
    std::ostringstream os;
    os << "Poisson residual " << out.residual << " (condition estimate " << condition_probe(lu, sys) << ")";
    throw Error(kModule, ErrorKind::kCellSolver, os.str());
  }
  return out;
}

FrozenGaussian frozen_gaussian(const CoefficientSet& coeffs, const Vec& x, double t) {
  const int n = coeffs.n;
  Mat probes = Mat::Zero(n, 2 * n + 2);
  for (int j = 0; j < n; ++j) {
    probes(j, 1 + j) = 1.0;
    probes(j, 1 + n + j) = -1.5;
  }
  probes.col(2 * n + 1).setConstant(2.0);
  const Mat xs = x.replicate(1, probes.cols());
  const Mat c = eval_batch(coeffs.c, n, xs, probes, t);
  const Mat e = eval_batch(coeffs.eta, n * coeffs.p, xs, probes, t);
  const Vec c0 = c.col(0);
  Mat C(n, n);
  for (int j = 0; j < n; ++j) C.col(j) = c.col(1 + j) - c0;
  const double scale = 1.0 + c.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 1 + n; k < probes.cols(); ++k) {
    if ((c.col(k) - (c0 + C * probes.col(k))).cwiseAbs().maxCoeff() > 1e-9 * scale) {
      throw Error(kModule, ErrorKind::kUnsupportedModel, "analytic backend requires c affine in y");
    }
  }
  for (Eigen::Index k = 1; k < probes.cols(); ++k) {
    if ((e.col(k) - e.col(0)).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + e.col(0).cwiseAbs().maxCoeff())) {
      throw Error(kModule, ErrorKind::kUnsupportedModel, "analytic backend requires alpha constant in y");
    }
  }
  Eigen::EigenSolver<Mat> es(C);
  if (es.eigenvalues().real().maxCoeff() >= 0.0) {
    throw Error(kModule, ErrorKind::kCellSolver, "frozen fast drift is not contracting");
  }
  Eigen::Map<const Mat> eta(e.col(0).data(), n, coeffs.p);
  const Mat alpha = eta * eta.transpose();
  FrozenGaussian out;
  out.drift = C;
  out.mean = -C.fullPivLu().solve(c0);
  const Mat I = Mat::Identity(n, n);
  const Mat lyap = Eigen::kroneckerProduct(I, C) + Eigen::kroneckerProduct(C, I);
  const Vec rhs = -Eigen::Map<const Vec>(alpha.data(), n * n);
  const Vec s = lyap.fullPivLu().solve(rhs);
  out.cov = Eigen::Map<const Mat>(s.data(), n, n);
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

namespace {

// Probabilists' Gauss-Hermite rule by Golub-Welsch; weights sum to one.
std::pair<Vec, Vec> gauss_hermite(int count) {
  Mat J = Mat::Zero(count, count);
  for (int k = 1; k < count; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Mat> eig(J);
  Vec w = eig.eigenvectors().row(0).transpose().array().square();
  return {eig.eigenvalues(), w / w.sum()};
}

}  // namespace

CellSolution CellSolution::solve(const CoefficientSet& coeffs, const Vec& x, double t, const CellOptions& options) {
  CellSolution cell;
  cell.backend_ = options.backend;
  cell.x_ = x;
  cell.t_ = t;
  cell.n_ = coeffs.n;
  const Mat x_rep1 = x;
  if (options.backend == CellBackend::kAnalyticOu) {
    const FrozenGaussian fg = frozen_gaussian(coeffs, x, t);
    cell.mean_ = fg.mean;
    cell.cov_ = fg.cov;
    cell.cov_inv_ = fg.cov.inverse();
    cell.drift_matrix_ = fg.drift;
    const int n = coeffs.n;
    cell.log_norm_ = -0.5 * (n * std::log(2 * M_PI) + std::log(fg.cov.determinant()));
    const auto [z, w] = gauss_hermite(options.hermite_nodes);
    const int q = static_cast<int>(z.size());
    int total = 1;
    for (int d = 0; d < n; ++d) total *= q;
    Mat zs(n, total);
    cell.weights_.resize(total);
    for (int k = 0; k < total; ++k) {
      int rem = k;
      double wk = 1.0;
      for (int d = 0; d < n; ++d) {
        zs(d, k) = z[rem % q];
        wk *= w[rem % q];
        rem /= q;
      }
      cell.weights_[k] = wk;
    }
    const Mat L = fg.cov.llt().matrixL();
    cell.nodes_ = (L * zs).colwise() + fg.mean;
  } else {
    FastGrid grid;
    {
      Vec mean, sd;
      try {
        const FrozenGaussian fg = frozen_gaussian(coeffs, x, t);
        mean = fg.mean;
        sd = fg.cov.diagonal().cwiseSqrt();
      } catch (const Error&) {
        if (!options.box) {
          throw Error(kModule, ErrorKind::kConfiguration,
                      "numeric backend needs an explicit fast box for nonlinear fast drift");
        }
      }
      if (options.box) {
        grid = FastGrid(options.box->lo, options.box->hi, std::vector<int>(coeffs.n, options.grid_nodes));
      } else {
        grid = FastGrid::centered(mean, sd, options.radius, options.grid_nodes);
      }
    }
    auto op = std::make_shared<FastOperator>(coeffs, x, t, grid);
    const PseudoStationary ps = solve_pseudo_stationary(*op);
    cell.op_ = op;
    cell.rho_ = ps.rho;
    cell.log_rho_ = ps.rho.array().log();
    cell.grad_log_rho_ = grid_gradient(grid, cell.log_rho_);
    cell.nodes_ = grid.points();
    cell.weights_ = grid.weights().cwiseProduct(ps.rho);
  }
  const Field& f = coeffs.f;
  const int m = coeffs.m;
  cell.add_corrector(
      Corrector::kPhi,
      [&f, m, x, t](const Mat& y) { return eval_batch(f, m, x.replicate(1, y.cols()), y, t); },
      options.centering_tol);
  return cell;
}

CellSolution CellSolution::from_grid(const FastGrid& grid, const Vec& x, double t, const Vec& rho,
                                     const std::map<Corrector, Mat>& correctors) {
  if (rho.minCoeff() <= 0.0) throw Error(kModule, ErrorKind::kInvalidDensity, "stored density is not positive");
  CellSolution cell;
  cell.backend_ = CellBackend::kNumericFd;
  cell.x_ = x;
  cell.t_ = t;
  cell.n_ = grid.n();
  cell.op_ = std::make_shared<FastOperator>(FastOperator::empty(grid));
  cell.rho_ = rho;
  cell.log_rho_ = rho.array().log();
  cell.grad_log_rho_ = grid_gradient(grid, cell.log_rho_);
  cell.nodes_ = grid.points();
  cell.weights_ = grid.weights().cwiseProduct(rho);
  for (const auto& [which, values] : correctors) {
    cell.correctors_[which] = {values, grid_gradient(grid, values), Mat()};
  }
  return cell;
}

const FastGrid* CellSolution::grid() const { return op_ ? &op_->grid() : nullptr; }

Vec CellSolution::rho_on_grid() const {
  if (!op_) throw Error(kModule, ErrorKind::kDependency, "analytic cell has no grid");
  return rho_;
}

Mat CellSolution::corrector_on_grid(Corrector which) const {
  if (!op_) throw Error(kModule, ErrorKind::kDependency, "analytic cell has no grid");
  return correctors_.at(which).values;
}

Mat CellSolution::interpolate(const Mat& table, const Mat& y) const {
  const FastGrid& g = op_->grid();
  Mat out(table.cols(), y.cols());
  std::array<int, 4> idx;
  std::array<double, 4> w;
  const int corners = g.n() == 1 ? 2 : 4;
  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    g.locate(y.col(k), idx, w);
    out.col(k).setZero();
    for (int c = 0; c < corners; ++c) out.col(k) += w[c] * table.row(idx[c]).transpose();
  }
  return out;
}

RowVec CellSolution::log_rho(const Mat& y) const {
  if (backend_ == CellBackend::kAnalyticOu) {
    const Mat d = y.colwise() - mean_;
    return (-0.5 * (d.array() * (cov_inv_ * d).array()).colwise().sum()).matrix() .array() + log_norm_;
  }
  return interpolate(log_rho_, y).row(0);
}

Mat CellSolution::grad_y_log_rho(const Mat& y) const {
  if (backend_ == CellBackend::kAnalyticOu) return -cov_inv_ * (y.colwise() - mean_);
  return interpolate(grad_log_rho_, y);
}

void CellSolution::add_corrector(Corrector which, const PointFunction& rhs, double centering_tol) {
  if (backend_ == CellBackend::kAnalyticOu) {
    const int n = n_;
    const Mat L = cov_.llt().matrixL();
    Mat probes(n, 2 * n + 2);
    probes.col(0) = mean_;
    for (int j = 0; j < n; ++j) {
      probes.col(1 + j) = mean_ + L.col(j);
      probes.col(1 + n + j) = mean_ - 1.7 * L.col(j);
    }
    probes.col(2 * n + 1) = mean_ + 2.3 * L * Vec::Ones(n);
    const Mat r = rhs(probes);
    const Vec r0 = r.col(0);
    Mat KL(r.rows(), n);
    for (int j = 0; j < n; ++j) KL.col(j) = r.col(1 + j) - r0;
    const Mat K = KL * L.inverse();
    const double scale = 1.0 + r.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 1 + n; k < probes.cols(); ++k) {
      if ((r.col(k) - (r0 + K * (probes.col(k) - mean_))).cwiseAbs().maxCoeff() > 1e-7 * scale) {
        throw Error(kModule, ErrorKind::kUnsupportedModel, "analytic backend requires a right-hand side affine in y");
      }
    }
    for (Eigen::Index i = 0; i < r0.size(); ++i) {
      if (std::abs(r0[i]) > centering_tol) {
        std::ostringstream os;
        os << "integral of rhs*rho = " << r0[i] << " in column " << i << " exceeds " << centering_tol;
        throw Error(kModule, ErrorKind::kCentering, os.str());
      }
    }
    correctors_[which] = {Mat(), Mat(), -K * drift_matrix_.inverse()};
    return;
  }
  if (!op_ || op_->fokker_planck().rows() == 0) {
    throw Error(kModule, ErrorKind::kDependency, "stored cell cannot solve new correctors");
  }
  const Mat values = rhs(nodes_).transpose();
  const PoissonResult res = solve_poisson(*op_, rho_, values, centering_tol);
  correctors_[which] = {res.phi, grid_gradient(op_->grid(), res.phi), Mat()};
}

int CellSolution::corrector_dim(Corrector which) const {
  const auto it = correctors_.find(which);
  if (it == correctors_.end()) throw Error(kModule, ErrorKind::kDependency, "corrector not solved");
  return static_cast<int>(backend_ == CellBackend::kAnalyticOu ? it->second.slope.rows() : it->second.values.cols());
}

Mat CellSolution::corrector(Corrector which, const Mat& y) const {
  const auto it = correctors_.find(which);
  if (it == correctors_.end()) throw Error(kModule, ErrorKind::kDependency, "corrector not solved");
  if (backend_ == CellBackend::kAnalyticOu) return it->second.slope * (y.colwise() - mean_);
  return interpolate(it->second.values, y);
}

Mat CellSolution::corrector_grad(Corrector which, const Mat& y) const {
  const auto it = correctors_.find(which);
  if (it == correctors_.end()) throw Error(kModule, ErrorKind::kDependency, "corrector not solved");
  if (backend_ == CellBackend::kAnalyticOu) {
    const Mat& s = it->second.slope;
    Vec flat(s.size());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      for (Eigen::Index l = 0; l < s.cols(); ++l) flat[i * s.cols() + l] = s(i, l);
    }
    return flat.replicate(1, y.cols());
  }
  return interpolate(it->second.grad, y);
}

std::string cell_cache_key(const std::string& model, const Vec& x, double t, const FastGrid& grid) {
  std::uint64_t h = fnv1a(model.data(), model.size());
  h = fnv1a(x.data(), x.size() * sizeof(double), h);
  h = fnv1a(&t, sizeof(double), h);
  const std::uint64_t gh = grid.hash();
  h = fnv1a(&gh, sizeof(gh), h);
  std::ostringstream os;
  os << model << "-" << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'A', 'V', 'G', 'C', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    value = std::bit_cast<T>(bytes);
  }
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw Error(kModule, ErrorKind::kIo, "truncated cell file");
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    value = std::bit_cast<T>(bytes);
  }
  return value;
}

const char* corrector_name(Corrector c) {
  switch (c) {
    case Corrector::kPhi: return "phi";
    case Corrector::kPhiTilde: return "phi_tilde";
    case Corrector::kPhiM1: return "phi_m1";
  }
  return "phi";
}

}  // namespace

void write_cell(const CellSolution& cell, const FastGrid& grid, const std::filesystem::path& stem) {
  const Mat ys = grid.points();
  const bool native = cell.grid() != nullptr && cell.grid()->hash() == grid.hash();
  const Vec rho = native ? cell.rho_on_grid() : Vec(cell.log_rho(ys).transpose().array().exp());
  std::vector<std::pair<Corrector, Mat>> cols;
  for (Corrector c : {Corrector::kPhi, Corrector::kPhiTilde, Corrector::kPhiM1}) {
    if (!cell.has(c)) continue;
    cols.emplace_back(c, native ? cell.corrector_on_grid(c) : Mat(cell.corrector(c, ys).transpose()));
  }
  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  std::ofstream csv(stem.string() + ".csv");
  if (!bin || !csv) throw Error(kModule, ErrorKind::kIo, "cannot write cell cache at " + stem.string());
  bin.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(bin, kVersion);
  put<std::uint32_t>(bin, static_cast<std::uint32_t>(grid.n()));
  for (int d = 0; d < grid.n(); ++d) {
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(grid.nodes(d)));
    put<double>(bin, grid.lo(d));
    put<double>(bin, grid.hi(d));
  }
  put<std::uint32_t>(bin, static_cast<std::uint32_t>(cell.x().size()));
  for (Eigen::Index i = 0; i < cell.x().size(); ++i) put<double>(bin, cell.x()[i]);
  put<double>(bin, cell.t());
  put<std::uint32_t>(bin, static_cast<std::uint32_t>(cols.size()));
  for (const auto& [which, values] : cols) {
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(which));
    put<std::uint32_t>(bin, static_cast<std::uint32_t>(values.cols()));
  }
  for (Eigen::Index k = 0; k < rho.size(); ++k) put<double>(bin, rho[k]);
  for (const auto& [which, values] : cols) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      for (Eigen::Index k = 0; k < values.rows(); ++k) put<double>(bin, values(k, j));
    }
  }

  csv << std::setprecision(17);
  csv << "# x=" << cell.x().transpose() << " t=" << cell.t() << " backend=" << to_string(cell.backend()) << "\n";
  for (int d = 0; d < grid.n(); ++d) csv << "y" << d << ",";
  csv << "rho";
  for (const auto& [which, values] : cols) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) csv << "," << corrector_name(which) << "_" << j;
  }
  csv << "\n";
  for (Eigen::Index k = 0; k < rho.size(); ++k) {
    for (int d = 0; d < grid.n(); ++d) csv << ys(d, k) << ",";
    csv << rho[k];
    for (const auto& [which, values] : cols) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) csv << "," << values(k, j);
    }
    csv << "\n";
  }
}

CellSolution read_cell(const std::filesystem::path& stem) {
  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw Error(kModule, ErrorKind::kIo, "cannot open " + stem.string() + ".bin");
  char magic[8];
  bin.read(magic, sizeof(magic));
  if (!bin || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(kModule, ErrorKind::kIo, "not a cell cache file");
  }
  if (get<std::uint32_t>(bin) != kVersion) throw Error(kModule, ErrorKind::kIo, "unsupported cell cache version");
  const int n = static_cast<int>(get<std::uint32_t>(bin));
  Vec lo(n), hi(n);
  std::vector<int> nodes(n);
  for (int d = 0; d < n; ++d) {
    nodes[d] = static_cast<int>(get<std::uint32_t>(bin));
    lo[d] = get<double>(bin);
    hi[d] = get<double>(bin);
  }
  const FastGrid grid(lo, hi, nodes);
  Vec x(get<std::uint32_t>(bin));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = get<double>(bin);
  const double t = get<double>(bin);
  const std::uint32_t ncols = get<std::uint32_t>(bin);
  std::vector<std::pair<Corrector, std::uint32_t>> layout;
  for (std::uint32_t c = 0; c < ncols; ++c) {
    const auto which = static_cast<Corrector>(get<std::uint32_t>(bin));
    layout.emplace_back(which, get<std::uint32_t>(bin));
  }
  Vec rho(grid.size());
  for (Eigen::Index k = 0; k < rho.size(); ++k) rho[k] = get<double>(bin);
  std::map<Corrector, Mat> correctors;
  for (const auto& [which, width] : layout) {
    Mat values(grid.size(), width);
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      for (Eigen::Index k = 0; k < values.rows(); ++k) values(k, j) = get<double>(bin);
    }
    correctors[which] = values;
  }
  return CellSolution::from_grid(grid, x, t, rho, correctors);
}

}  // namespace msavg
