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
#include "msavg/path.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "msavg/catalog.hpp"
#include "msavg/gaussian.hpp"

namespace msavg {
namespace {

double mean(const RowVec& v) { return v.mean(); }
double variance(const RowVec& v) { return (v.array() - v.mean()).square().sum() / (v.size() - 1); }
double stderr_of(const RowVec& v) { return std::sqrt(variance(v) / v.size()); }

// clock = t, noise = W_0 (multiscale) or B_0 (limit).
class ClockAndNoise : public IntegrandSet {
 public:
  std::vector<std::string> names() const override { return {"clock", "noise"}; }
  void integrands(const MultiscaleStep& s, Mat& dw, Mat& dt) const override { fill(s.x.cols(), dw, dt); }
  void integrands(const LimitStep& s, Mat& dw, Mat& dt) const override { fill(s.x.cols(), dw, dt); }

 private:
  static void fill(Eigen::Index K, Mat& dw, Mat& dt) {
    const Eigen::Index p = dw.rows() / 2;
    dt.row(0).setOnes();
    dw.row(p).setOnes();
    (void)K;
  }
};

AveragedModel reduced_ou() {
  AveragedModel avg;
  avg.grid = XtGrid::uniform(-12, 12, 49, 1.0, 1);
  Mat w(49, 1), A(49, 1);
  for (int i = 0; i < 49; ++i) {
    w(i, 0) = -avg.grid.x(i);
    A(i, 0) = 3.0;
  }
  avg.w = GridTable(avg.grid, w);
  avg.A = GridTable(avg.grid, A);
  return avg;
}

TEST(StoppingRuleTest, ExitBounds) {
  const StoppingRule r = StoppingRule::first_exit(-1.0, 1.0);
  const double in = 0.5, lo = -1.0, out = 2.0;
  EXPECT_FALSE(r.should_stop(&in, 1));
  EXPECT_TRUE(r.should_stop(&lo, 1));
  EXPECT_TRUE(r.should_stop(&out, 1));
  EXPECT_FALSE(StoppingRule::fixed_time().should_stop(&out, 1));
}

TEST(SqrtPsd, SquaresBackAndRejectsIndefinite) {
  const auto s = sqrt_psd2(3.0, 1.0, 2.0);
  Eigen::Matrix2d S;
  S << s[0], s[1], s[2], s[3];
  Eigen::Matrix2d M;
  M << 3.0, 1.0, 1.0, 2.0;
  EXPECT_LE((S * S - M).cwiseAbs().maxCoeff(), 1e-12);
  const auto z = sqrt_psd2(0.0, 0.0, 0.0);
  EXPECT_EQ(z[0] + z[1] + z[2] + z[3], 0.0);
  const auto rank1 = sqrt_psd2(1.0, 2.0, 4.0);
  Eigen::Matrix2d R;
  R << rank1[0], rank1[1], rank1[2], rank1[3];
  Eigen::Matrix2d N;
  N << 1.0, 2.0, 2.0, 4.0;
  EXPECT_LE((R * R - N).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(sqrt_psd2(1.0, 0.0, -1e-3), Error);
}

TEST(PathEngine, ConfigurationErrors) {
  MultiscaleModel model = make_model("ou");
  SimulationOptions o;
  o.dt = 2e-3;  // > 0.1 eps^2
  EXPECT_THROW(simulate_multiscale(model, {}, o), Error);
  o.dt = 1e-3;
  o.records = 7;
  model.epsilon = 0.5;
  EXPECT_THROW(simulate_multiscale(model, {}, o), Error);
  const auto times = record_times(1.0, 1e-2, 4);
  ASSERT_EQ(times.size(), 5u);
  EXPECT_DOUBLE_EQ(times[2], 0.5);
}

TEST(PathEngine, BrownianMoments) {
  MultiscaleModel model = make_model("brownian", {{"eps", 1.0}, {"burn_in", 0.0}});
  SimulationOptions o;
  o.n_paths = 10000;
  o.dt = 0.01;
  o.records = 4;
  ClockAndNoise set;
  const TrajectoryBatch b = simulate_multiscale(model, {&set}, o);
  const RowVec xT = b.slow(4);
  EXPECT_LE(std::abs(mean(xT)), 3 * stderr_of(xT));
  EXPECT_NEAR(variance(xT), 1.0, 0.05);
  EXPECT_NEAR(b.noise_var.mean(), 1.0, 0.1);
  // W_0 drives X directly, so the noise functional reproduces X.
  EXPECT_LE((b.value("noise", 4) - xT).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((b.value("clock", 2).array() - 0.5).abs().maxCoeff(), 1e-12);
  EXPECT_EQ(b.exit_count(), 0);
}

TEST(PathEngine, BitIdenticalAcrossWorkerCounts) {
  MultiscaleModel model = make_model("ou", {{"eps", 0.3}, {"burn_in", 0.1}, {"x0_var", 1.0}});
  SimulationOptions o;
  o.n_paths = 700;
  o.dt = 5e-3;
  o.records = 10;
  o.rules = {StoppingRule::first_exit(-0.5, 0.5)};
  ClockAndNoise set;
  o.workers = 1;
  const TrajectoryBatch one = simulate_multiscale(model, {&set}, o);
  o.workers = 3;
  const TrajectoryBatch three = simulate_multiscale(model, {&set}, o);
  EXPECT_TRUE(one.x == three.x);
  EXPECT_TRUE(one.values == three.values);
  EXPECT_TRUE(one.stopped[0].tau == three.stopped[0].tau);
  o.seed = 2;
  const TrajectoryBatch other = simulate_multiscale(model, {&set}, o);
  EXPECT_FALSE(one.x == other.x);
}

TEST(PathEngine, OuFastMarginalIsStationary) {
  MultiscaleModel model = make_model("ou");
  SimulationOptions o;
  o.n_paths = 2000;
  o.dt = 1e-4;
  o.records = 4;
  o.store_fast = true;
  o.rules = {StoppingRule::first_exit(-10.0, 10.0, "box10")};
  const TrajectoryBatch b = simulate_multiscale(model, {}, o);
  const RowVec yT = b.y.row(4);
  EXPECT_NEAR(variance(yT), 1.0, 0.05);
  int exits = 0;
  for (int k = 0; k < b.n_paths; ++k) exits += b.stopped[0].tau(k) < model.T;
  EXPECT_LT(static_cast<double>(exits) / b.n_paths, 1e-3);
  EXPECT_TRUE(b.valid());
}

TEST(PathEngine, MatchesGaussianMomentsAtLargeEpsilon) {
  MultiscaleModel model = make_model("ou", {{"eps", 0.5}, {"burn_in", 0.0}, {"x0", 1.0}, {"y0", -0.5}});
  SimulationOptions o;
  o.n_paths = 20000;
  o.dt = 2.5e-4;
  o.records = 1;
  o.store_fast = true;
  const TrajectoryBatch b = simulate_multiscale(model, {}, o);
  GaussianState start{model.init.mean, Mat::Zero(2, 2)};
  const GaussianState exact = evolve_gaussian_moments(model.coeffs, model.epsilon, 0.0, 1.0, start);
  const RowVec x = b.slow(1), y = b.y.row(1);
  const double n = b.n_paths;
  EXPECT_LE(std::abs(mean(x) - exact.mean[0]), 3 * stderr_of(x));
  EXPECT_LE(std::abs(mean(y) - exact.mean[1]), 3 * stderr_of(y));
  const RowVec xc = x.array() - mean(x), yc = y.array() - mean(y);
  const RowVec entries[3] = {xc.array().square(), (xc.array() * yc.array()).matrix(), yc.array().square()};
  const double targets[3] = {exact.cov(0, 0), exact.cov(0, 1), exact.cov(1, 1)};
  for (int i = 0; i < 3; ++i) {
    const double est = entries[i].sum() / (n - 1);
    EXPECT_LE(std::abs(est - targets[i]), 3 * stderr_of(entries[i])) << "entry " << i;
  }
}

TEST(LimitSystem, ReducedOuMatchesTransitionLaw) {
  const MultiscaleModel model = make_model("ou", {{"burn_in", 0.0}, {"x0", 1.0}});
  const AveragedModel avg = reduced_ou();
  SimulationOptions o;
  o.n_paths = 10000;
  o.dt = 1e-3;
  o.records = 4;
  const TrajectoryBatch b = simulate_limit_system(model, avg, nullptr, {}, o);
  const RowVec xT = b.slow(4);
  EXPECT_LE(std::abs(mean(xT) - std::exp(-1.0)), 3 * stderr_of(xT));
  EXPECT_NEAR(variance(xT) / (1.5 * (1 - std::exp(-2.0))), 1.0, 0.05);
}

TEST(LimitSystem, IndefiniteMatrixNamesThePoint) {
  const MultiscaleModel model = make_model("ou", {{"burn_in", 0.0}});
  const AveragedModel avg = reduced_ou();
  ExtendedSystem ext;
  const Mat zeros = Mat::Zero(49, 1), ones = Mat::Constant(49, 1, 10.0);
  ext.bar_w = GridTable(avg.grid, zeros);
  ext.bar_A_mm = GridTable(avg.grid, zeros);
  ext.bar_A_mx = GridTable(avg.grid, ones);
  SimulationOptions o;
  o.n_paths = 10;
  o.dt = 1e-2;
  o.records = 1;
  try {
    simulate_limit_system(model, avg, &ext, {}, o);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumerical);
    EXPECT_NE(std::string(e.what()).find("x = "), std::string::npos);
  }
}

TEST(Stopping, FixedTimeAndImmediateExit) {
  const MultiscaleModel model = make_model("ou", {{"burn_in", 0.0}});
  const AveragedModel avg = reduced_ou();
  SimulationOptions o;
  o.n_paths = 300;
  o.dt = 1e-2;
  o.records = 10;
  o.rules = {StoppingRule::fixed_time(), StoppingRule::first_exit(0.0, 0.0, "now")};
  ClockAndNoise set;
  const TrajectoryBatch b = simulate_limit_system(model, avg, nullptr, {&set}, o);
  EXPECT_TRUE((b.stopped_by("fixed_time").tau.array() == model.T).all());
  const StoppedValues& now = b.stopped_by("now");
  EXPECT_TRUE((now.tau.array() == 0.0).all());
  EXPECT_TRUE((now.values.array() == 0.0).all());
  const StoppedValues post = apply_stopping(b, StoppingRule::first_exit(0.0, 0.0, "now"));
  EXPECT_TRUE((post.tau.array() == 0.0).all());
  const StoppedValues fixed = apply_stopping(b, StoppingRule::fixed_time());
  EXPECT_TRUE((fixed.values.row(0).array() - model.T).abs().maxCoeff() < 1e-12);
}

TEST(Stopping, ExitTimeStableUnderGridRefinement) {
  const MultiscaleModel model = make_model("ou", {{"burn_in", 0.0}, {"T", 0.5}});
  const AveragedModel avg = reduced_ou();
  SimulationOptions o;
  o.n_paths = 2000;
  o.records = 1;
  o.rules = {StoppingRule::first_exit(-1.0, 1.0)};
  ClockAndNoise set;
  o.dt = 1e-4;
  o.noise_substeps = 10;
  const TrajectoryBatch coarse = simulate_limit_system(model, avg, nullptr, {&set}, o);
  o.dt = 1e-5;
  o.noise_substeps = 1;
  const TrajectoryBatch fine = simulate_limit_system(model, avg, nullptr, {&set}, o);
  const double tc = coarse.stopped[0].tau.mean(), tf = fine.stopped[0].tau.mean();
  EXPECT_GT(tc, 0.0);
  EXPECT_LE(tc, model.T);
  EXPECT_NEAR(tc / tf, 1.0, 0.05);
  // The clock functional equals tau along each path.
  EXPECT_LE((coarse.stopped[0].values.row(0) - coarse.stopped[0].tau).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Covariation, RealizedSelfCovariationOfExponentialMartingale) {
  // M = exp(-B_0): [M, M]_T has mean (e^{2T} - 1) / 2.
  const MultiscaleModel model = make_model("ou", {{"burn_in", 0.0}});
  const AveragedModel avg = reduced_ou();
  SimulationOptions o;
  o.n_paths = 10000;
  o.dt = 1e-3;
  o.records = 4;
  o.covariations = {{"noise", "noise"}, {"clock", "noise"}};
  ClockAndNoise set;
  const TrajectoryBatch b = simulate_limit_system(model, avg, nullptr, {&set}, o);
  const RowVec qv = b.covariation.row(4 * 2 + b.pair_index("noise", "noise"));
  EXPECT_LE(std::abs(mean(qv) - 0.5 * (std::exp(2.0) - 1.0)), 3 * stderr_of(qv) + 0.01);
  const RowVec cross = b.covariation.row(4 * 2 + b.pair_index("clock", "noise"));
  EXPECT_LE(std::abs(mean(cross)), 3 * stderr_of(cross) + 1e-3);
}

}  // namespace
}  // namespace msavg
