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
#include "msavg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace msavg {
namespace {

constexpr const char* kModule = "harness";

[[noreturn]] void config_error(const std::string& what) { throw Error(kModule, ErrorKind::kConfiguration, what); }

double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (text.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    config_error("'" + key + "' expects a number, got '" + text + "'");
  }
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  config_error("'" + key + "' expects a boolean, got '" + text + "'");
}

using Tree = boost::property_tree::ptree;

template <class Fn>
void each(const Tree& tree, const char* section, Fn&& fn) {
  const auto child = tree.get_child_optional(section);
  if (!child) return;
  for (const auto& [key, node] : *child) fn(key, node.template get_value<std::string>());
}

}  // namespace

const char* to_string(FunctionalKind kind) {
  switch (kind) {
    case FunctionalKind::kForward: return "forward";
    case FunctionalKind::kBackward: return "backward";
    case FunctionalKind::kEntropy: return "entropy";
    case FunctionalKind::kHousekeeping: return "housekeeping";
  }
  return "?";
}

FunctionalKind parse_functional_kind(const std::string& text) {
  for (FunctionalKind k : {FunctionalKind::kForward, FunctionalKind::kBackward, FunctionalKind::kEntropy,
                           FunctionalKind::kHousekeeping}) {
    if (text == to_string(k)) return k;
  }
  config_error("unknown functional kind '" + text + "' (forward, backward, entropy, housekeeping)");
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    out.push_back(to_double("list", item.substr(first)));
  }
  return out;
}

ExperimentConfig ExperimentConfig::parse(std::istream& in) {
  Tree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    config_error(std::string("malformed configuration: ") + e.what());
  }
  ExperimentConfig c;
  each(tree, "model", [&](const std::string& k, const std::string& v) {
    if (k == "name") {
      c.model = v;
    } else {
      c.params[k] = to_double(k, v);
    }
  });
  each(tree, "run", [&](const std::string& k, const std::string& v) {
    if (k == "eps") c.eps = parse_list(v);
    else if (k == "dt") c.dt = to_double(k, v);
    else if (k == "limit_dt") c.limit_dt = to_double(k, v);
    else if (k == "T") c.T = to_double(k, v);
    else if (k == "burn_in") c.burn_in = to_double(k, v);
    else if (k == "n_paths") c.n_paths = static_cast<int>(to_double(k, v));
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(to_double(k, v));
    else if (k == "records") c.records = static_cast<int>(to_double(k, v));
    else if (k == "workers") c.workers = static_cast<int>(to_double(k, v));
    else config_error("unknown key [run] " + k);
  });
  each(tree, "functional", [&](const std::string& k, const std::string& v) {
    if (k == "kind") c.functional = parse_functional_kind(v);
    else if (k == "b_shift") c.shift.b_shift = to_double(k, v);
    else if (k == "b_slope") c.shift.b_slope = to_double(k, v);
    else if (k == "g_shift") c.shift.g_shift = to_double(k, v);
    else if (k == "g_slope") c.shift.g_slope = to_double(k, v);
    else if (k == "f_sign") c.shift.f_sign = to_double(k, v);
    else if (k == "parity") c.parity = ParityVector::parse(v);
    else if (k == "limit") c.limit = to_bool(k, v);
    else if (k == "mutations") c.mutations = to_bool(k, v);
    else if (k == "direct") c.direct = to_bool(k, v);
    else config_error("unknown key [functional] " + k);
  });
  each(tree, "rules", [&](const std::string& k, const std::string& v) {
    const std::vector<double> b = parse_list(v);
    if (b.size() != 2) config_error("rule '" + k + "' expects 'lo, hi'");
    c.rules.push_back(StoppingRule::first_exit(b[0], b[1], k));
  });
  double x_lo = c.grid.x_lo, x_hi = c.grid.x_hi;
  int nx = c.grid.nx, nt = c.grid.nt();
  each(tree, "grid", [&](const std::string& k, const std::string& v) {
    if (k == "x_lo") x_lo = to_double(k, v);
    else if (k == "x_hi") x_hi = to_double(k, v);
    else if (k == "nx") nx = static_cast<int>(to_double(k, v));
    else if (k == "nt") nt = static_cast<int>(to_double(k, v));
    else if (k == "backend") {
      if (v == "analytic") c.backend = CellBackend::kAnalyticOu;
      else if (v == "fd") c.backend = CellBackend::kNumericFd;
      else config_error("unknown cell backend '" + v + "' (analytic, fd)");
    } else config_error("unknown key [grid] " + k);
  });
  c.grid = XtGrid::uniform(x_lo, x_hi, nx, c.T, nt);
  each(tree, "stats", [&](const std::string& k, const std::string& v) {
    if (k == "z") c.thresholds.z = to_double(k, v);
    else if (k == "max_se") c.thresholds.max_se = to_double(k, v);
    else if (k == "trim") c.thresholds.trim = to_double(k, v);
    else config_error("unknown key [stats] " + k);
  });
  each(tree, "output", [&](const std::string& k, const std::string& v) {
    if (k == "dir") c.out_dir = v;
    else config_error("unknown key [output] " + k);
  });
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kModule, ErrorKind::kIo, "cannot open configuration " + path.string());
  return parse(in);
}

double ExperimentConfig::min_eps() const {
  if (eps.empty()) config_error("eps list is empty");
  return *std::min_element(eps.begin(), eps.end());
}

void ExperimentConfig::validate() const {
  const auto names = catalog_names();
  if (std::find(names.begin(), names.end(), model) == names.end()) config_error("unknown model '" + model + "'");
  for (double e : eps) {
    if (!(e > 0.0)) config_error("eps values must be positive");
  }
  const double e = min_eps();
  if (!(dt > 0.0) || dt > 0.1 * e * e * (1 + 1e-12)) {
    std::ostringstream os;
    os << "dt = " << dt << " exceeds 0.1 * min(eps)^2 = " << 0.1 * e * e;
    config_error(os.str());
  }
  if (!(limit_dt > 0.0)) config_error("limit_dt must be positive");
  if (n_paths < 100) config_error("n_paths must be at least 100");
  if (!(T > 0.0)) config_error("T must be positive");
  if (burn_in && *burn_in < 0.0) config_error("burn_in must be nonnegative");
  if (records < 1) config_error("records must be positive");
  for (const auto& r : rules) {
    if (!(r.lo[0] < r.hi[0])) config_error("rule '" + r.name + "' needs lo < hi");
  }
  if (eps.size() > 1) {
    for (std::size_t i = 1; i < eps.size(); ++i) {
      if (!(eps[i] < eps[i - 1])) config_error("eps list must be strictly decreasing");
    }
  }
}

MultiscaleModel ExperimentConfig::make(double epsilon) const {
  ParamMap p = params;
  p["eps"] = epsilon;
  p["T"] = T;
  if (burn_in) p["burn_in"] = *burn_in;
  return make_model(model, p);
}

SimulationOptions ExperimentConfig::simulation(double step) const {
  SimulationOptions o;
  o.n_paths = n_paths;
  o.dt = step;
  o.seed = seed;
  o.records = records;
  o.workers = workers;
  o.rules = rules;
  return o;
}

}  // namespace msavg
