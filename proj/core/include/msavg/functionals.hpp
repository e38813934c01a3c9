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

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "msavg/averaging.hpp"
#include "msavg/fast_density.hpp"
#include "msavg/gaussian.hpp"
#include "msavg/model.hpp"
#include "msavg/path.hpp"

namespace msavg {

enum class FunctionalSide { kForward, kBackward };
enum class FunctionalRole { kEpsilonLevel, kLimitTotal, kLimitRegular, kLimitAnomalous };

struct FunctionalSpec {
  std::string name;
  FunctionalSide side = FunctionalSide::kForward;
  ComparableSpec comparable;
  FunctionalRole role = FunctionalRole::kEpsilonLevel;
  std::vector<std::string> flags;
  std::map<std::string, double> residuals;  // compatibility residuals from the builder
};

// Worst relative deviation between the full epsilon-scaled forward integrands at eps = 0.1 and 0.01 and
// the reduced form, over the columns of (x, y).
double forward_two_eps_deviation(const CoefficientSet& coeffs, const ComparableSpec& comparable, const Mat& x,
                                 const Mat& y, double t);

// Sample points from the initial law for the two-eps check: the mean and +-1 sd along each axis.
void probe_points(const MultiscaleModel& model, Mat& x, Mat& y);

// F^eps with dW-integrand Delta0' D0^{-1} Sigma0 and dt-integrand (1/2) Delta0' D0^{-1} Delta0, where
// Delta0 = (b - b^, g - g^). With mutations the set also carries copies of F^eps whose dt-integrand
// has one block term (slow-slow, cross, fast-fast) negated.
class ForwardEpsilonSet final : public IntegrandSet {
 public:
  ForwardEpsilonSet(const MultiscaleModel& model, ComparableSpec comparable, std::string name = "F_eps",
                    bool mutations = false);

  std::vector<std::string> names() const override;
  void integrands(const MultiscaleStep& step, Mat& dw, Mat& dt) const override;

  static constexpr double kTwoEpsTol = 1e-8;

 private:
  const MultiscaleModel& model_;
  ComparableSpec cmp_;
  std::string name_;
  bool mutations_;
};

struct BackwardEpsilonOptions {
  // Also accumulate the unsplit form with boundary log p^eps (constant diffusion only).
  bool direct = false;
  double compatibility_tol = 1e-6;
};

// G^eps = I^eps + H^eps for m = 1. H^eps is the reduced Girsanov part, I^eps the boundary
// log[p^eps / rho] at the endpoints. Without an exact p^eps the boundary falls back to the reduced
// density log p(x, t) and approximate_boundary() is set.
class BackwardEpsilonSet final : public IntegrandSet {
 public:
  BackwardEpsilonSet(const MultiscaleModel& model, ComparableSpec comparable, FrozenDensity rho,
                     std::optional<GaussianTrack> exact, std::optional<ReducedDensity> fallback,
                     std::string name = "G_eps", BackwardEpsilonOptions options = {});

  std::vector<std::string> names() const override;
  void integrands(const MultiscaleStep& step, Mat& dw, Mat& dt) const override;
  bool has_boundary() const override { return true; }
  void boundary(int record, double t, const Mat& x, const Mat& y, Mat& out) const override;
  std::vector<bool> boundary_mask() const override;

  bool approximate_boundary() const { return !exact_.has_value(); }
  const std::map<std::string, double>& compatibility() const { return compatibility_; }

 private:
  const MultiscaleModel& model_;
  ComparableSpec cmp_;
  EffectiveBackward eff_;
  CoefficientSet reversed_;
  FrozenDensity rho_;
  std::optional<GaussianTrack> exact_;
  std::optional<ReducedDensity> fallback_;
  std::string name_;
  BackwardEpsilonOptions opt_;
  std::map<std::string, double> compatibility_;

  void split(const MultiscaleStep& step, Mat& sigma_h, RowVec& dt_h) const;
  void direct(const MultiscaleStep& step, Mat& sigma_d, RowVec& dt_d) const;
};

// F, F^(1) and F^(2) = F - F^(1) against the limit-system noise.
class LimitForwardSet final : public IntegrandSet {
 public:
  LimitForwardSet(const AveragedModel& avg, const ExtendedSystem& ext, std::string name = "F");

  std::vector<std::string> names() const override;
  void integrands(const LimitStep& step, Mat& dw, Mat& dt) const override;

 private:
  const AveragedModel& avg_;
  const ExtendedSystem& ext_;
  std::string name_;
};

// G, G^(1) and G^(2) = G - G^(1). G and G^(1) carry the boundary log p(x, t) of the reduced process.
class LimitBackwardSet final : public IntegrandSet {
 public:
  LimitBackwardSet(const AveragedModel& avg, const ExtendedSystem& ext, ReducedDensity density,
                   std::string name = "G");

  std::vector<std::string> names() const override;
  void integrands(const LimitStep& step, Mat& dw, Mat& dt) const override;
  bool has_boundary() const override { return true; }
  void boundary(int record, double t, const Mat& x, const Mat& y, Mat& out) const override;
  std::vector<bool> boundary_mask() const override { return {true, true, false}; }

 private:
  const AveragedModel& avg_;
  const ExtendedSystem& ext_;
  ReducedDensity density_;
  std::string name_;
};

// Law of the reduced process at the record times, started from the slow marginal of the model's
// initial law at -burn_in.
ReducedDensity reduced_density_for(const MultiscaleModel& model, const AveragedModel& avg,
                                   const std::vector<double>& times, double burn_in);

struct SpecOptions {
  double tol = 1e-6;
  int probe_nodes = 9;  // slow nodes used for the residual scan
  CellOptions cell;
};

// Residuals of the backward compatible conditions for the comparable over the slow nodes of grid.
std::map<std::string, double> compatibility_residuals(const CoefficientSet& coeffs, const ComparableSpec& comparable,
                                                      const XtGrid& grid, const SpecOptions& options = {});

// Entropy production S_tot: backward comparable equal to the original drifts, reversed through parity.
FunctionalSpec make_entropy_production_spec(const MultiscaleModel& model, const std::optional<ParityVector>& parity,
                                            const XtGrid& grid, const SpecOptions& options = {});

// Housekeeping entropy production S_hk: forward comparable with the leading-order adjoint drifts built
// from mu (reduced stationary density of avg) and the frozen fast density. Time-homogeneous models only.
FunctionalSpec make_housekeeping_spec(const MultiscaleModel& model, const std::optional<ParityVector>& parity,
                                      const AveragedModel& avg, const XtGrid& grid,
                                      const SpecOptions& options = {});

}  // namespace msavg
