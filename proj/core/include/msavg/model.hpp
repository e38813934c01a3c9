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

#include <optional>
#include <string>
#include <vector>

#include "msavg/common.hpp"

namespace msavg {

class CellSolution;

// Drift and diffusion fields of a slow-fast diffusion
//   dX = (b + f/eps) dt + sigma dW,   dY = (g/eps + c/eps^2) dt + (eta/eps) dW.
struct CoefficientSet {
  int m = 1;
  int n = 1;
  int p = 2;
  Field b, f, g, c;
  Field sigma, eta;
  // sigma and eta do not depend on (x, y, t); enables precomputation.
  bool constant_diffusion = false;
  bool time_homogeneous = true;

  void validate() const;
};

// Pointwise helpers. Inputs are single points.
Vec eval_vector(const Field& field, int dim, const Vec& x, const Vec& y, double t);
Mat eval_matrix(const Field& field, int rows, int cols, const Vec& x, const Vec& y, double t);

struct DiffusionBlocks {
  Mat a;      // m x m
  Mat h;      // m x n
  Mat alpha;  // n x n
};
DiffusionBlocks diffusion_blocks(const CoefficientSet& coeffs, const Vec& x, const Vec& y, double t);

// Batched evaluation of a vector field at K points.
Mat eval_batch(const Field& field, int dim, const Mat& x, const Mat& y, double t);

// Divergences by central differences (zero for constant diffusion).
// div_x_a: (d/dx_j) a^{ij}, m x K.  div_y_h: (d/dy_j) h^{ij}, m x K.
// div_x_ht: (d/dx_j) h^{ji}, n x K. div_y_alpha: (d/dy_j) alpha^{ij}, n x K.
struct DiffusionDivergences {
  Mat div_x_a, div_y_h, div_x_ht, div_y_alpha;
};
DiffusionDivergences diffusion_divergences(const CoefficientSet& coeffs, const Mat& x, const Mat& y,
                                           double t, double step = 1e-4);

// Initial law of (X, Y): Gaussian with the given mean and (possibly singular)
// covariance; a zero covariance is a point mass.
struct InitialDistribution {
  Vec mean;
  Mat cov;

  static InitialDistribution point(const Vec& x0, const Vec& y0);
  static InitialDistribution gaussian(const Vec& mean, const Mat& cov);
  // Square-root factor L with L L' = cov.
  Mat factor() const;
};

struct Box {
  Vec lo;
  Vec hi;
  bool contains(const Eigen::Ref<const Vec>& z) const;
};

struct MultiscaleModel {
  std::string name;
  CoefficientSet coeffs;
  double epsilon = 0.1;
  double T = 1.0;
  InitialDistribution init;
  double burn_in = 1.0;
  Box slow_box;
  Box fast_box;

  void validate() const;
};

struct DriftDiffusion {
  Vec B;      // m + n
  Mat D;      // (m + n) x (m + n)
  Mat Sigma;  // (m + n) x p
};

inline constexpr double kSingularRcond = 1e-12;

DriftDiffusion assemble_drift_diffusion(const CoefficientSet& coeffs, double epsilon, const Vec& x,
                                        const Vec& y, double t);
DriftDiffusion assemble_drift_diffusion(const MultiscaleModel& model, const Vec& x, const Vec& y,
                                        double t);

// Reciprocal condition number estimate (ratio of extreme singular values).
double rcond(const Mat& m);

struct ParityVector {
  std::vector<int> delta;  // slow entries first

  static ParityVector even(int m, int n);
  static ParityVector parse(const std::string& text);
  void validate(int m, int n) const;
  Vec slow(int m) const;
  Vec fast(int m, int n) const;
  bool all_even() const;
};

CoefficientSet apply_parity(const CoefficientSet& coeffs, const ParityVector& delta);

enum class ComparableKind { kForward, kBackward };

// Comparable process. Forward: b and g are the hat-drifts (f, c, sigma, eta
// shared with the original). Backward: b, g, f are the tilde-drifts of the
// reversed comparable, optionally composed with a parity transform.
struct ComparableSpec {
  ComparableKind kind = ComparableKind::kForward;
  Field b;
  Field g;
  Field f;
  std::optional<ParityVector> parity;

  void validate(const CoefficientSet& coeffs) const;
};

// Backward drifts after applying the parity transform (identity without one).
struct EffectiveBackward {
  Field b, f, g;
};
EffectiveBackward effective_backward(const ComparableSpec& spec, const CoefficientSet& coeffs);

ComparableSpec identity_comparable(const CoefficientSet& coeffs, ComparableKind kind);

struct CompatibilityReport {
  double a41 = 0.0;  // f + f~ - div_y h - h grad_y log rho
  double a42 = 0.0;  // 2c - div_y alpha - alpha grad_y log rho
  std::optional<double> parity_c, parity_a, parity_h, parity_alpha;
};

// Max-norm residuals at the points ys (n x K) for the frozen cell (x, t).
CompatibilityReport check_compatible_conditions(const CoefficientSet& coeffs, const Field& f_tilde,
                                                const CellSolution& rho, const Mat& ys,
                                                const std::optional<ParityVector>& parity = std::nullopt);

}  // namespace msavg
