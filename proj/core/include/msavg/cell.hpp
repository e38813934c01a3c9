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
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "msavg/common.hpp"
#include "msavg/model.hpp"

namespace msavg {

// Uniform tensor grid over the truncated fast box.
class FastGrid {
 public:
  FastGrid() = default;
  FastGrid(Vec lo, Vec hi, std::vector<int> nodes);

  // Box mean +- radius * sd per axis.
  static FastGrid centered(const Vec& mean, const Vec& sd, double radius, int nodes);

  int n() const { return static_cast<int>(nodes_.size()); }
  int size() const;
  int nodes(int axis) const { return nodes_[axis]; }
  double lo(int axis) const { return lo_[axis]; }
  double hi(int axis) const { return hi_[axis]; }
  double spacing(int axis) const { return (hi_[axis] - lo_[axis]) / (nodes_[axis] - 1); }
  // Flat index with axis 0 fastest.
  int index(int i0, int i1 = 0) const { return i0 + nodes_[0] * i1; }
  Mat points() const;
  Vec weights() const;  // trapezoid
  std::uint64_t hash() const;

  // Multilinear interpolation weights for an arbitrary point (clamped).
  void locate(const Eigen::Ref<const Vec>& y, std::array<int, 4>& idx,
              std::array<double, 4>& w) const;

 private:
  Vec lo_, hi_;
  std::vector<int> nodes_;
};

inline constexpr int kMinGridNodes = 129;

// Plain central-difference stencil of L0 = c.grad + (1/2) alpha : grad grad,
// one-sided second-order at boundary nodes.
Vec apply_L0(const CoefficientSet& coeffs, const Vec& x, double t, const FastGrid& grid, const Vec& u);

// Conservative finite-volume discretisation of the frozen fast
// Fokker-Planck operator with zero-flux boundaries. The discrete generator is
// its exact adjoint in the trapezoid inner product.
class FastOperator {
 public:
  FastOperator(const CoefficientSet& coeffs, const Vec& x, double t, const FastGrid& grid);
  // Grid-only operator with no stencil (for cells restored from storage).
  static FastOperator empty(const FastGrid& grid);

  const FastGrid& grid() const { return grid_; }
  const Eigen::SparseMatrix<double>& fokker_planck() const { return fp_; }
  Eigen::SparseMatrix<double> generator() const;
  const Vec& weights() const { return weights_; }

 private:
  FastOperator() = default;

  FastGrid grid_;
  Vec weights_;
  Eigen::SparseMatrix<double> fp_;
};

struct PseudoStationary {
  Vec rho;
  double residual = 0.0;  // ||L0* rho||_inf / ||rho||_inf
  double mass = 0.0;
  double condition_estimate = 0.0;
};

PseudoStationary solve_pseudo_stationary(const FastOperator& op);
PseudoStationary solve_pseudo_stationary(const CoefficientSet& coeffs, const Vec& x, double t,
                                         const FastGrid& grid);

struct PoissonResult {
  Mat phi;  // N x r
  double residual = 0.0;
  Vec centering;  // integral of rhs * rho per column
};

// Bordered solve of -L0 phi = rhs with zero rho-mean.
PoissonResult solve_poisson(const FastOperator& op, const Vec& rho, const Mat& rhs,
                            double centering_tol = 1e-8);

enum class CellBackend { kNumericFd, kAnalyticOu };
const char* to_string(CellBackend backend);

enum class Corrector { kPhi, kPhiTilde, kPhiM1 };

// Right-hand side callable: y (n x K) -> values (r x K).
using PointFunction = std::function<Mat(const Mat& y)>;

struct CellOptions {
  CellBackend backend = CellBackend::kAnalyticOu;
  int grid_nodes = 257;
  double radius = 8.0;       // box half-width in stationary sd
  int hermite_nodes = 24;    // per axis
  double centering_tol = 1e-8;
  std::optional<Box> box;    // explicit fast box (required for nonlinear c)
};

// Solution of the cell problem at a frozen (x, t): rho and correctors.
// Quadrature: integral F rho dy ~ sum_k weights()[k] F(nodes().col(k)).
class CellSolution {
 public:
  static CellSolution solve(const CoefficientSet& coeffs, const Vec& x, double t,
                            const CellOptions& options);
  // Numeric cell from stored grid data (used by the cache).
  static CellSolution from_grid(const FastGrid& grid, const Vec& x, double t, const Vec& rho,
                                const std::map<Corrector, Mat>& correctors);

  CellBackend backend() const { return backend_; }
  const Vec& x() const { return x_; }
  double t() const { return t_; }
  int n() const { return n_; }

  const Mat& nodes() const { return nodes_; }
  const Vec& weights() const { return weights_; }

  RowVec log_rho(const Mat& y) const;
  Mat grad_y_log_rho(const Mat& y) const;  // n x K

  void add_corrector(Corrector which, const PointFunction& rhs, double centering_tol);
  bool has(Corrector which) const { return correctors_.count(which) > 0; }
  int corrector_dim(Corrector which) const;
  Mat corrector(Corrector which, const Mat& y) const;       // r x K
  Mat corrector_grad(Corrector which, const Mat& y) const;  // (r*n) x K, row i*n+l = d phi_i / d y_l

  // Numeric cells expose the grid representation.
  const FastGrid* grid() const;
  Vec rho_on_grid() const;
  Mat corrector_on_grid(Corrector which) const;
  // Gaussian cells expose mean and covariance.
  const Vec& gaussian_mean() const { return mean_; }
  const Mat& gaussian_cov() const { return cov_; }

 private:
  struct CorrectorData {
    Mat values;  // numeric: N x r on grid
    Mat grad;    // numeric: N x (r*n)
    Mat slope;   // analytic: r x n, phi(y) = slope (y - mean)
  };

  CellBackend backend_ = CellBackend::kAnalyticOu;
  Vec x_;
  double t_ = 0.0;
  int n_ = 1;
  Mat nodes_;
  Vec weights_;
  std::map<Corrector, CorrectorData> correctors_;

  // numeric
  std::shared_ptr<const FastOperator> op_;
  Vec rho_, log_rho_;
  Mat grad_log_rho_;  // N x n
  // analytic
  Vec mean_;
  Mat cov_, cov_inv_, drift_matrix_;
  double log_norm_ = 0.0;

  Mat interpolate(const Mat& table, const Mat& y) const;
};

// Gaussian law of the frozen fast process when c is affine in y and alpha is
// constant in y. Throws kUnsupportedModel otherwise.
struct FrozenGaussian {
  Vec mean;
  Mat cov;
  Mat drift;  // C in c = C (y - mean)
};
FrozenGaussian frozen_gaussian(const CoefficientSet& coeffs, const Vec& x, double t);

// Portable cache: <stem>.csv (grid + columns) and <stem>.bin (little-endian).
std::string cell_cache_key(const std::string& model, const Vec& x, double t, const FastGrid& grid);
void write_cell(const CellSolution& cell, const FastGrid& grid, const std::filesystem::path& stem);
CellSolution read_cell(const std::filesystem::path& stem);

}  // namespace msavg
