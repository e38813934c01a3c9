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

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msavg {
namespace {

constexpr const char* kModule = "stats";
constexpr double kZ95 = 1.959963984540054;

RowVec gather(const RowVec& v, const std::vector<int>& idx) {
  RowVec out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

// Kolmogorov limiting tail P(K > lambda).
double kolmogorov_tail(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace

MeanCI estimate_mean_ci(const RowVec& samples) {
  std::vector<double> v;
  v.reserve(samples.size());
  for (Eigen::Index i = 0; i < samples.size(); ++i) {
    if (std::isfinite(samples[i])) v.push_back(samples[i]);
  }
  if (v.empty()) throw Error(kModule, ErrorKind::kEstimation, "no finite samples");
  if (v.size() < 2) throw Error(kModule, ErrorKind::kEstimation, "need at least two finite samples");
  const Eigen::Map<const Vec> x(v.data(), static_cast<Eigen::Index>(v.size()));
  MeanCI out;
  out.n = static_cast<int>(v.size());
  out.mean = x.mean();
  const double var = (x.array() - out.mean).square().sum() / (out.n - 1);
  out.se = std::sqrt(var / out.n);
  out.lo = out.mean - kZ95 * out.se;
  out.hi = out.mean + kZ95 * out.se;
  return out;
}

WeightDiagnostics weight_diagnostics(const RowVec& weights, double trim) {
  std::vector<double> v(weights.data(), weights.data() + weights.size());
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  const auto cut = static_cast<std::size_t>(std::floor(trim * static_cast<double>(n)));
  double sum = 0.0;
  for (std::size_t i = cut; i < n - cut; ++i) sum += v[i];
  WeightDiagnostics out;
  out.trimmed_mean = sum / static_cast<double>(n - 2 * cut);
  const double total = weights.cwiseAbs().sum();
  out.max_share = total > 0 ? weights.cwiseAbs().maxCoeff() / total : 0.0;
  return out;
}

RowVec stopped_values(const TrajectoryBatch& batch, const std::string& functional, const std::string& rule) {
  const std::vector<int> kept = batch.kept();
  RowVec v;
  if (rule == "fixed_time") {
    v = gather(batch.value(functional, batch.records() - 1), kept);
  } else {
    const StoppedValues& sv = batch.stopped_by(rule);
    v = gather(sv.values.row(batch.index(functional)), kept);
  }
  if (!v.allFinite()) {
    throw Error(kModule, ErrorKind::kEstimation,
                functional + " is undefined at some '" + rule + "' stopping times; stop it on the record grid");
  }
  return v;
}

Verdict ift_check(const RowVec& values, const std::string& functional, const std::string& rule,
                  const StatThresholds& th) {
  const RowVec e = (-values).array().exp();
  Verdict v;
  v.test = "ift";
  v.functional = functional;
  v.rule = rule;
  const MeanCI ci = estimate_mean_ci(e);
  const WeightDiagnostics wd = weight_diagnostics(e, th.trim);
  v.statistic = std::abs(ci.mean - 1.0);
  v.threshold = th.z * ci.se;
  v.pass = v.statistic <= v.threshold && ci.se <= th.max_se;
  v.details = {{"mean", ci.mean},           {"se", ci.se},
               {"n", ci.n},                 {"max_weight_share", wd.max_share},
               {"trimmed_mean", wd.trimmed_mean}, {"z", th.z},
               {"max_se", th.max_se}};
  if (ci.se > th.max_se) v.note = "standard error above the precision floor";
  return v;
}

Verdict ift_check(const TrajectoryBatch& batch, const std::string& functional, const std::string& rule,
                  const StatThresholds& th) {
  Verdict v = ift_check(stopped_values(batch, functional, rule), functional, rule, th);
  v.details["exits"] = batch.exit_count();
  if (!batch.valid()) {
    v.pass = false;
    v.note = "more than 1% of paths left the truncation box";
  }
  return v;
}

std::vector<int> checkpoint_records(const TrajectoryBatch& batch) {
  const int last = batch.records() - 1;
  std::vector<int> out;
  for (double q : {0.25, 0.5, 0.75, 1.0}) {
    const int r = static_cast<int>(std::lround(q * last));
    if (r > 0 && (out.empty() || r > out.back())) out.push_back(r);
  }
  return out;
}

Verdict martingale_check(const TrajectoryBatch& batch, const std::string& functional, const StatThresholds& th,
                         const StoppedValues* stopped) {
  Verdict v;
  v.test = "martingale";
  v.functional = functional;
  v.rule = stopped ? stopped->rule.name : "fixed_time";
  v.threshold = th.z;
  v.pass = true;
  const std::vector<int> kept = batch.kept();
  const auto P = static_cast<Eigen::Index>(kept.size());
  const int fi = batch.index(functional);
  const int F = static_cast<int>(batch.names.size());

  // Record index at which each kept path is frozen.
  std::vector<int> stop_rec(kept.size(), batch.records() - 1);
  if (stopped) {
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const double tau = stopped->tau[kept[i]];
      const auto it = std::lower_bound(batch.times.begin(), batch.times.end(), tau - 1e-12);
      stop_rec[i] = std::min(static_cast<int>(it - batch.times.begin()), batch.records() - 1);
    }
  }
  auto value_at = [&](int r, std::size_t i) {
    return std::exp(-batch.values(static_cast<Eigen::Index>(std::min(r, stop_rec[i])) * F + fi, kept[i]));
  };
  auto slow_at = [&](int r, std::size_t i) {
    return batch.x(static_cast<Eigen::Index>(std::min(r, stop_rec[i])) * batch.m, kept[i]);
  };

  const std::vector<int> cps = checkpoint_records(batch);
  double worst = 0.0;
  for (std::size_t c = 0; c + 1 < cps.size(); ++c) {
    Mat X(P, 3);
    Vec yv(P);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const double x = slow_at(cps[c], i);
      X.row(static_cast<Eigen::Index>(i)) << 1.0, x, x * x;
      yv[static_cast<Eigen::Index>(i)] = value_at(cps[c + 1], i) - value_at(cps[c], i);
    }
    if (!yv.allFinite()) throw Error(kModule, ErrorKind::kEstimation, functional + " increments are not finite");
    // Scale the basis for conditioning; coefficients are tested through t-ratios, which are scale free.
    const RowVec scale = X.cwiseAbs().colwise().maxCoeff().cwiseMax(1e-300);
    const Mat Xs = X.array().rowwise() / scale.array();
    const Mat xtx = Xs.transpose() * Xs;
    const Eigen::CompleteOrthogonalDecomposition<Mat> cod(xtx);
    const Mat xtx_inv = cod.pseudoInverse();
    const Vec beta = xtx_inv * (Xs.transpose() * yv);
    const Vec resid = yv - Xs * beta;
    const Mat meat = Xs.transpose() * (Xs.array().colwise() * resid.array().square()).matrix();
    const double dof = static_cast<double>(P) / std::max<double>(1.0, static_cast<double>(P - cod.rank()));
    const Mat cov = dof * xtx_inv * meat * xtx_inv;
    for (int j = 0; j < 3; ++j) {
      const double se = std::sqrt(std::max(cov(j, j), 0.0));
      const double t = se > 0 ? std::abs(beta[j]) / se : (std::abs(beta[j]) > 1e-14 ? INFINITY : 0.0);
      worst = std::max(worst, t);
      std::ostringstream key;
      key << "t_" << c << "_" << j;
      v.details[key.str()] = t;
    }
  }
  v.statistic = worst;
  v.pass = worst <= th.z;
  return v;
}

Verdict covariation_check(const TrajectoryBatch& batch, const std::string& a, const std::string& b,
                          const StatThresholds& th) {
  Verdict v;
  v.test = "covariation";
  v.functional = a + "," + b;
  v.rule = "fixed_time";
  v.pass = true;
  const int q = batch.pair_index(a, b);
  const auto npairs = static_cast<Eigen::Index>(batch.pairs.size());
  const std::vector<int> kept = batch.kept();
  double worst = 0.0;
  for (int r : checkpoint_records(batch)) {
    const RowVec c = gather(batch.covariation.row(static_cast<Eigen::Index>(r) * npairs + q), kept);
    const MeanCI ci = estimate_mean_ci(c);
    const double ratio = ci.se > 0 ? std::abs(ci.mean) / ci.se : (ci.mean == 0.0 ? 0.0 : INFINITY);
    worst = std::max(worst, ratio);
    v.details["mean_r" + std::to_string(r)] = ci.mean;
    v.details["se_r" + std::to_string(r)] = ci.se;
  }
  v.statistic = worst;
  v.threshold = th.z;
  v.pass = worst <= th.z;
  return v;
}

KsResult ks_two_sample(const RowVec& a, const RowVec& b) {
  std::vector<double> x(a.data(), a.data() + a.size()), y(b.data(), b.data() + b.size());
  if (x.empty() || y.empty()) throw Error(kModule, ErrorKind::kEstimation, "KS test needs two non-empty samples");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double t = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= t) ++i;
    while (j < y.size() && y[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  const double ne = n * m / (n + m);
  const double sq = std::sqrt(ne);
  return {d, kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d)};
}

}  // namespace msavg
