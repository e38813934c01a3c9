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
#include "msavg/catalog.hpp"

#include <cmath>

namespace msavg {

namespace {

Field constant(const Vec& value) {
  return [value](ConstBatch, ConstBatch, double, OutBatch out) { out.colwise() = value; };
}

Field zero() {
  return [](ConstBatch, ConstBatch, double, OutBatch out) { out.setZero(); };
}

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

MultiscaleModel base_model(std::string name, CoefficientSet coeffs, const ParamMap& params) {
  MultiscaleModel model;
  model.name = std::move(name);
  model.coeffs = std::move(coeffs);
  model.epsilon = param(params, "eps", 0.1);
  model.T = param(params, "T", 1.0);
  model.burn_in = param(params, "burn_in", 1.0);
  const int m = model.coeffs.m, n = model.coeffs.n;
  const double slow = param(params, "slow_box", 10.0);
  const double fast = param(params, "fast_box", 50.0);
  model.slow_box = {Vec::Constant(m, -slow), Vec::Constant(m, slow)};
  model.fast_box = {Vec::Constant(n, -fast), Vec::Constant(n, fast)};
  Vec mean(m + n);
  mean.setZero();
  mean[0] = param(params, "x0", 0.0);
  mean[m] = param(params, "y0", 0.0);
  Mat cov = Mat::Zero(m + n, m + n);
  cov(0, 0) = param(params, "x0_var", 0.0);
  cov(m, m) = param(params, "y0_var", 0.0);
  model.init = InitialDistribution::gaussian(mean, cov);
  return model;
}

}  // namespace

double param(const ParamMap& params, const std::string& key, double fallback) {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

std::vector<std::string> catalog_names() {
  return {"ou", "underdamped", "reversible_ou", "double_well", "brownian", "ou2d", "eps_independent"};
}

MultiscaleModel make_model(const std::string& name, const ParamMap& params) {
  CoefficientSet cs;
  cs.m = 1;
  cs.n = 1;
  cs.p = 2;
  cs.constant_diffusion = true;
  cs.time_homogeneous = true;
  const double sqrt2 = std::sqrt(2.0);

  if (name == "ou" || name == "double_well" || name == "eps_independent") {
    const double k = param(params, "k", 1.0);
    const double fs = name == "eps_independent" ? 0.0 : param(params, "f_scale", 1.0);
    const double gx = name == "eps_independent" ? 0.0 : param(params, "g_x", 0.0);
    const double gamma = param(params, "gamma", 1.0);
    const double y0 = param(params, "y_shift", 0.0);
    const double sx = param(params, "sigma_x", 1.0);
    const double ey = param(params, "eta_y", sqrt2);
    const double r = param(params, "noise_corr", 0.0);
    cs.b = [k](ConstBatch x, ConstBatch, double, OutBatch out) { out = -k * x; };
    cs.f = [fs, y0](ConstBatch, ConstBatch y, double, OutBatch out) { out.array() = fs * (y.array() - y0); };
    cs.g = [gx](ConstBatch x, ConstBatch, double, OutBatch out) { out = gx * x; };
    if (name == "double_well") {
      cs.c = [](ConstBatch, ConstBatch y, double, OutBatch out) { out.array() = y.array() - y.array().cube(); };
    } else {
      cs.c = [gamma, y0](ConstBatch, ConstBatch y, double, OutBatch out) {
        out.array() = -gamma * (y.array() - y0);
      };
    }
    cs.sigma = constant(vec2(sx, 0.0));
    cs.eta = constant(vec2(ey * r, ey * std::sqrt(1.0 - r * r)));
    MultiscaleModel model = base_model(name, cs, params);
    if (name == "double_well") {
      const double half = param(params, "fast_box", 4.0);
      model.fast_box = {Vec::Constant(1, -half), Vec::Constant(1, half)};
    }
    return model;
  }
  if (name == "underdamped") {
    const double gamma = param(params, "gamma", 1.0);
    const double eta = param(params, "eta", sqrt2);
    const double k = param(params, "k", 1.0);
    const double sx = param(params, "sigma_x", 0.0);
    cs.b = zero();
    cs.f = [](ConstBatch, ConstBatch y, double, OutBatch out) { out = y; };
    cs.g = [k](ConstBatch x, ConstBatch, double, OutBatch out) { out = -k * x; };
    cs.c = [gamma](ConstBatch, ConstBatch y, double, OutBatch out) { out = -gamma * y; };
    cs.sigma = constant(vec2(sx, 0.0));
    cs.eta = constant(vec2(0.0, eta));
    return base_model(name, cs, params);
  }
  if (name == "reversible_ou") {
    const double kappa = param(params, "kappa", 0.5);
    const double sx = param(params, "sigma_x", 1.0);
    const double ey = param(params, "eta_y", sqrt2);
    const double a = sx * sx, alpha = ey * ey;
    cs.b = [a, kappa](ConstBatch x, ConstBatch y, double, OutBatch out) { out = -0.5 * a * (x + kappa * y); };
    cs.f = zero();
    cs.g = zero();
    cs.c = [alpha, kappa](ConstBatch x, ConstBatch y, double, OutBatch out) {
      out = -0.5 * alpha * (y + kappa * x);
    };
    cs.sigma = constant(vec2(sx, 0.0));
    cs.eta = constant(vec2(0.0, ey));
    return base_model(name, cs, params);
  }
  if (name == "brownian") {
    cs.b = zero();
    cs.f = zero();
    cs.g = zero();
    cs.c = [](ConstBatch, ConstBatch y, double, OutBatch out) { out = -y; };
    cs.sigma = constant(vec2(1.0, 0.0));
    cs.eta = constant(vec2(0.0, sqrt2));
    return base_model(name, cs, params);
  }
  if (name == "ou2d") {
    const double omega = param(params, "omega", 0.0);
    cs.n = 2;
    cs.p = 3;
    cs.b = [](ConstBatch x, ConstBatch, double, OutBatch out) { out = -x; };
    cs.f = [](ConstBatch, ConstBatch y, double, OutBatch out) { out = y.row(0); };
    cs.g = zero();
    cs.c = [omega](ConstBatch, ConstBatch y, double, OutBatch out) {
      out.row(0) = -y.row(0) - omega * y.row(1);
      out.row(1) = -y.row(1) + omega * y.row(0);
    };
    Vec s(3), e(6);
    s << 1.0, 0.0, 0.0;
    e << 0.0, 0.0, sqrt2, 0.0, 0.0, sqrt2;  // column-major 2 x 3
    cs.sigma = constant(s);
    cs.eta = constant(e);
    return base_model(name, cs, params);
  }
  throw Error("model_core", ErrorKind::kConfiguration, "unknown model '" + name + "'");
}

ComparableSpec shifted_comparable(const CoefficientSet& coeffs, ComparableKind kind, const ShiftParams& s) {
  ComparableSpec spec;
  spec.kind = kind;
  const Field b = coeffs.b, g = coeffs.g, f = coeffs.f;
  spec.b = [b, s](ConstBatch x, ConstBatch y, double t, OutBatch out) {
    b(x, y, t, out);
    out.row(0).array() += s.b_shift + s.b_slope * x.row(0).array();
  };
  spec.g = [g, s](ConstBatch x, ConstBatch y, double t, OutBatch out) {
    g(x, y, t, out);
    out.row(0).array() += s.g_shift + s.g_slope * x.row(0).array();
  };
  if (kind == ComparableKind::kBackward) {
    const double sign = s.f_sign;
    spec.f = [f, sign](ConstBatch x, ConstBatch y, double t, OutBatch out) {
      f(x, y, t, out);
      out *= sign;
    };
  }
  return spec;
}

}  // namespace msavg
