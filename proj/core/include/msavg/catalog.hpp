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
#include <string>
#include <vector>

#include "msavg/model.hpp"

namespace msavg {

using ParamMap = std::map<std::string, double>;

// Built-in benchmark models, addressable by name from configuration files.
//   ou              b=-k x, f=s (y-y0), g=g_x x, c=-gamma (y-y0), sigma=(sigma_x,0),
//                   eta=eta_y (r, sqrt(1-r^2)) with r = noise_corr
//   underdamped     b=0, f=y, g=-k x, c=-gamma y, sigma=(sigma_x,0), eta=(0,eta)
//   reversible_ou   gradient dynamics in U = x^2/2 + y^2/2 + kappa x y
//   double_well     ou with c = -(y^3 - y)
//   brownian        b=f=g=0, c=-y
//   ou2d            n=2 fast OU with rotation omega, f=y_1
//   eps_independent b=-x, f=g=0, c=-y
std::vector<std::string> catalog_names();
MultiscaleModel make_model(const std::string& name, const ParamMap& params = {});

// Named parameter lookup with a default.
double param(const ParamMap& params, const std::string& key, double fallback);

// Drift perturbations: d = base + shift + slope * x_0 (slow and fast blocks).
struct ShiftParams {
  double b_shift = 0.0;
  double b_slope = 0.0;
  double g_shift = 0.0;
  double g_slope = 0.0;
  double f_sign = -1.0;  // backward only: f~ = f_sign * f
};

ComparableSpec shifted_comparable(const CoefficientSet& coeffs, ComparableKind kind, const ShiftParams& shift);

}  // namespace msavg
