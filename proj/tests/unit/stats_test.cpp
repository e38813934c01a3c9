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
#include "msavg/stats.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "msavg/catalog.hpp"
#include "msavg/functionals.hpp"
#include "msavg/rng.hpp"

namespace msavg {
namespace {

RowVec normals(std::uint64_t seed, int n, double shift = 0.0) {
  RowVec out(n);
  for (int i = 0; i < n; ++i) {
    NormalSequence s(seed, static_cast<std::uint64_t>(i), Stream::kInitial);
    out[i] = s.next() + shift;
  }
  return out;
}

// Hand-built batch: X = B, functional M = s B + drift * t on a grid of 8 records over [0, 1].
TrajectoryBatch synthetic(double s, double drift, double x_coupling, int paths) {
  const int R = 9;
  TrajectoryBatch b;
  b.n_paths = paths;
  b.T = 1.0;
  for (int r = 0; r < R; ++r) b.times.push_back(r / 8.0);
  b.names = {"M"};
  b.x = Mat::Zero(R, paths);
  b.values = Mat::Zero(R, paths);
  b.exited.assign(paths, 0);
  for (int k = 0; k < paths; ++k) {
    NormalSequence z(7, static_cast<std::uint64_t>(k), Stream::kInitial);
    double bm = 0.0, m = 0.0;
    for (int r = 1; r < R; ++r) {
      const double dB = std::sqrt(1.0 / 8.0) * z.next();
      m += s * dB + (0.5 * s * s + drift + x_coupling * bm) / 8.0;
      bm += dB;
      b.x(r, k) = bm;
      b.values(r, k) = m;
    }
  }
  return b;
}

TEST(EstimateMeanCiTest, ClosedFormCases) {
  RowVec ones = RowVec::Ones(4);
  MeanCI c = estimate_mean_ci(ones);
  EXPECT_EQ(c.mean, 1.0);
  EXPECT_EQ(c.se, 0.0);
  EXPECT_EQ(c.lo, 1.0);
  EXPECT_EQ(c.hi, 1.0);
  RowVec two(2);
  two << 0.0, 2.0;
  c = estimate_mean_ci(two);
  EXPECT_DOUBLE_EQ(c.mean, 1.0);
  EXPECT_DOUBLE_EQ(c.se, 1.0);
  EXPECT_NEAR(c.lo, -0.96, 1e-3);
  EXPECT_NEAR(c.hi, 2.96, 1e-3);
}

TEST(EstimateMeanCiTest, SeededNormalsAndErrors) {
  const MeanCI c = estimate_mean_ci(normals(3, 10000));
  EXPECT_LE(std::abs(c.mean), 3.0 / 100.0);
  EXPECT_NEAR(c.se, 0.01, 5e-4);
  RowVec bad = RowVec::Constant(3, NAN);
  try {
    estimate_mean_ci(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEstimation);
  }
  bad[1] = 1.0;
  EXPECT_THROW(estimate_mean_ci(bad), Error);
}

TEST(IftCheckTest, ZeroFunctionalPassesExactly) {
  const Verdict v = ift_check(RowVec::Zero(100), "F", "fixed_time");
  EXPECT_TRUE(v.pass);
  EXPECT_EQ(v.details.at("mean"), 1.0);
}

TEST(IftCheckTest, HeavyTailDiagnostics) {
  RowVec vals = RowVec::Zero(1000);
  vals[0] = -std::log(1000.0);
  const Verdict v = ift_check(vals, "G", "fixed_time");
  EXPECT_NEAR(v.details.at("max_weight_share"), 1000.0 / 1999.0, 1e-12);
  EXPECT_EQ(v.details.at("trimmed_mean"), 1.0);
}

TEST(MartingaleCheckTest, ExponentialMartingalePasses) {
  const TrajectoryBatch b = synthetic(0.8, 0.0, 0.0, 4000);
  EXPECT_TRUE(martingale_check(b, "M").pass);
  const TrajectoryBatch constant = synthetic(0.0, 0.0, 0.0, 200);
  const Verdict v = martingale_check(constant, "M");
  EXPECT_TRUE(v.pass);
  EXPECT_EQ(v.statistic, 0.0);
}

TEST(MartingaleCheckTest, DriftAndStateDependenceFail) {
  EXPECT_FALSE(martingale_check(synthetic(0.8, 0.5, 0.0, 4000), "M").pass);
  EXPECT_FALSE(martingale_check(synthetic(0.8, 0.0, 1.0, 4000), "M").pass);
}

TEST(KsTest, IdenticalAndShiftedSamples) {
  const RowVec a = normals(1, 2000);
  const KsResult same = ks_two_sample(a, a);
  EXPECT_EQ(same.distance, 0.0);
  EXPECT_EQ(same.p_value, 1.0);
  const KsResult null = ks_two_sample(a, normals(2, 2000));
  EXPECT_GT(null.p_value, 0.001);
  const KsResult shifted = ks_two_sample(a, normals(2, 2000, 0.3));
  EXPECT_LT(shifted.p_value, 1e-6);
  EXPECT_NEAR(shifted.distance, 0.119, 0.03);  // 2 Phi(0.15) - 1
}

// Limit OU with w^ = w + 1 and A = 3: e^{-F1} is geometric Brownian motion with squared volatility 1/3, so
// E [e^{-F1}, e^{-F1}]_T = e^{T/3} - 1.
TEST(CovariationCheckTest, SelfCovariationMatchesClosedForm) {
  const MultiscaleModel model = make_model("ou", {{"burn_in", 0.0}, {"x0_var", 1.5}});
  const XtGrid grid = XtGrid::uniform(-10, 10, 41, 1.0, 1);
  AveragingOptions ao;
  ao.cell.grid_nodes = 257;
  const ComparableSpec cmp = shifted_comparable(model.coeffs, ComparableKind::kForward, {1.0, 0, 0, 0});
  const AveragedModel avg = compute_averaged_coefficients(model.coeffs, &cmp, grid, ao);
  const ExtendedSystem ext = compute_extended_forward(model.coeffs, cmp, avg, ao);
  const LimitForwardSet set(avg, ext);
  SimulationOptions opt;
  opt.n_paths = 10000;
  opt.dt = 1e-3;
  opt.records = 8;
  opt.covariations = {{"F_1", "F_1"}, {"F_1", "F_2"}};
  const TrajectoryBatch batch = simulate_limit_system(model, avg, &ext, {&set}, opt);
  const double expected = std::exp(1.0 / 3.0) - 1.0;
  const RowVec self = batch.covariation.row(8 * 2 + batch.pair_index("F_1", "F_1"));
  EXPECT_NEAR(self.mean(), expected, 0.1 * expected);
  const Verdict v = covariation_check(batch, "F_1", "F_2");
  EXPECT_TRUE(v.pass) << v.statistic;
}

TEST(CovariationCheckTest, VanishingPartGivesExactZero) {
  const MultiscaleModel model = make_model("ou", {{"burn_in", 0.0}, {"x0_var", 1.5}});
  const XtGrid grid = XtGrid::uniform(-10, 10, 41, 1.0, 1);
  AveragingOptions ao;
  ao.cell.grid_nodes = 257;
  const ComparableSpec cmp = identity_comparable(model.coeffs, ComparableKind::kForward);
  const AveragedModel avg = compute_averaged_coefficients(model.coeffs, &cmp, grid, ao);
  const ExtendedSystem ext = compute_extended_forward(model.coeffs, cmp, avg, ao);
  const LimitForwardSet set(avg, ext);
  SimulationOptions opt;
  opt.n_paths = 200;
  opt.dt = 1e-3;
  opt.records = 4;
  opt.covariations = {{"F_1", "F_2"}};
  const TrajectoryBatch batch = simulate_limit_system(model, avg, &ext, {&set}, opt);
  EXPECT_EQ(batch.covariation.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE(covariation_check(batch, "F_1", "F_2").pass);
}

}  // namespace
}  // namespace msavg
