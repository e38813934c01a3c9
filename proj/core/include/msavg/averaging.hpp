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

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msavg/cell.hpp"
#include "msavg/common.hpp"
#include "msavg/model.hpp"

namespace msavg {

// Uniform grid over one slow coordinate and time.
struct XtGrid {
  double x_lo = -1.0;
  double x_hi = 1.0;
  int nx = 41;
  std::vector<double> ts{0.0};

  static XtGrid uniform(double x_lo, double x_hi, int nx, double T, int nt);
  double x(int i) const { return x_lo + (x_hi - x_lo) * i / (nx - 1); }
  double dx() const { return (x_hi - x_lo) / (nx - 1); }
  int nt() const { return static_cast<int>(ts.size()); }
};

// Scalar table on an XtGrid: cubic Hermite in x (linear extrapolation outside), linear in t.
class GridTable {
 public:
  GridTable() = default;
  GridTable(XtGrid grid, Mat values);  // values: nx x nt

  double operator()(double x, double t) const;
  double dx(double x, double t) const;
  RowVec eval(const RowVec& x, double t) const;
  const Mat& values() const { return values_; }
  bool empty() const { return values_.size() == 0; }

 private:
  XtGrid grid_;
  Mat values_;
  Mat slopes_;
  void bracket_t(double t, int& j0, int& j1, double& wt) const;
  double eval_column(int j, double x, double* derivative) const;
};

struct AveragingOptions {
  CellOptions cell = fine_cells();
  double x_step_rel = 1e-2;   // stencil spacing for x-derivatives
  double identity_tol = 1e-6;
  double centering_tol = 1e-8;

  static CellOptions fine_cells() {
    CellOptions c;
    c.grid_nodes = 513;
    return c;
  }
};

struct AveragedModel {
  XtGrid grid;
  GridTable w, A;
  GridTable w_cmp;    // w-hat (forward) or w-tilde (backward)
  GridTable A_tilde;  // backward only
  std::optional<ComparableKind> comparable;
  CellBackend backend = CellBackend::kAnalyticOu;
};

struct ExtendedSystem {
  ComparableKind kind = ComparableKind::kForward;
  GridTable bar_w;     // drift of the functional component
  GridTable bar_A_mm;  // functional-functional entry
  GridTable bar_A_mx;  // functional-slow entry
  GridTable div_wt;    // backward: d/dx (w~ - dA/dx / 2)
  // Residual tables keyed by identity name, nx x nt.
  std::map<std::string, Mat> residuals;
  std::map<std::string, double> thresholds;

  double max_residual(const std::string& name) const;
};

AveragedModel compute_averaged_coefficients(const CoefficientSet& coeffs, const ComparableSpec* comparable,
                                            const XtGrid& grid, const AveragingOptions& options = {});
ExtendedSystem compute_extended_forward(const CoefficientSet& coeffs, const ComparableSpec& comparable,
                                        const AveragedModel& avg, const AveragingOptions& options = {});
ExtendedSystem compute_extended_backward(const CoefficientSet& coeffs, const ComparableSpec& comparable,
                                         const AveragedModel& avg, const AveragingOptions& options = {});

// Cell-quadrature values of one (x, t) node, exposed for tests and diagnostics.
struct NodeAverages {
  double w = 0, A = 0, w_cmp = 0, A_tilde = 0;
  double bar_w = 0, bar_A_mm = 0, bar_A_mx = 0, div_wt = 0, dQ = 0, dA = 0;
  double two_eps = 0;
};
NodeAverages average_node(const CoefficientSet& coeffs, const ComparableSpec* comparable, double x, double t,
                          const AveragingOptions& options, bool extended);

// Reduced stationary density at frozen t (m = 1).
struct MuSolution {
  bool gaussian = false;
  double mean = 0.0, var = 0.0;
  std::vector<double> xs;
  Vec log_density;

  double log_mu(double x) const;
  double grad_log_mu(double x) const;
};
MuSolution solve_mu(const AveragedModel& avg, double t, double x_lo, double x_hi, int nodes = 401);

void write_averaged_csv(const AveragedModel& avg, const ExtendedSystem* ext, const std::filesystem::path& path);

}  // namespace msavg
