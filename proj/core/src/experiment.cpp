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
#include "msavg/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "msavg/fast_density.hpp"
#include "msavg/gaussian.hpp"

namespace msavg {
namespace {

constexpr const char* kModule = "harness";
constexpr double kDefaultResidualTol = 1e-6;

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

RowVec kept_final(const TrajectoryBatch& batch, const std::string& name) {
  const std::vector<int> kept = batch.kept();
  const RowVec all = name.empty() ? batch.slow(batch.records() - 1) : batch.value(name, batch.records() - 1);
  RowVec out(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) out[static_cast<Eigen::Index>(i)] = all[kept[i]];
  return out;
}

AveragingOptions averaging_options(const ExperimentConfig& cfg) {
  AveragingOptions o;
  o.cell.backend = cfg.backend;
  return o;
}

void add_table(std::vector<ResidualRow>& out, const std::string& table, const std::map<std::string, double>& values,
               double tol) {
  for (const auto& [name, v] : values) out.push_back({table, name, v, tol, std::abs(v) <= tol});
}

Verdict second_law(const TrajectoryBatch& batch, const std::string& name, const StatThresholds& th) {
  const MeanCI ci = estimate_mean_ci(kept_final(batch, name));
  Verdict v;
  v.test = "second_law";
  v.functional = name;
  v.rule = "fixed_time";
  v.statistic = ci.mean;
  v.threshold = -th.z * ci.se;
  v.pass = ci.mean >= v.threshold;
  v.details = {{"mean", ci.mean}, {"se", ci.se}};
  return v;
}

Verdict ungated(Verdict v, std::string note) {
  v.gated = false;
  if (!note.empty()) v.note = v.note.empty() ? note : v.note + "; " + note;
  return v;
}

bool all_finite(const TrajectoryBatch& batch, const std::string& name, const std::string& rule) {
  if (rule == "fixed_time") return true;
  const StoppedValues& sv = batch.stopped_by(rule);
  const RowVec v = sv.values.row(batch.index(name));
  for (int k : batch.kept()) {
    if (!std::isfinite(v[k])) return false;
  }
  return true;
}

std::vector<std::string> rule_names(const ExperimentConfig& cfg) {
  std::vector<std::string> out{"fixed_time"};
  for (const auto& r : cfg.rules) out.push_back(r.name);
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool EnsembleStats::all_gated_pass() const {
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return !v.gated || v.pass; });
}

// ---------------------------------------------------------------------------------------------

Pipeline::~Pipeline() = default;

Pipeline::Pipeline(const ExperimentConfig& cfg, double epsilon, bool with_limit)
    : cfg_(cfg), model_(std::make_unique<MultiscaleModel>(cfg.make(epsilon))) {
  const MultiscaleModel& model = *model_;
  const CoefficientSet& cs = model.coeffs;
  const AveragingOptions ao = averaging_options(cfg);
  SpecOptions so;
  so.cell = ao.cell;
  const bool backward = cfg.functional == FunctionalKind::kBackward || cfg.functional == FunctionalKind::kEntropy;
  side_ = backward ? FunctionalSide::kBackward : FunctionalSide::kForward;

  switch (cfg.functional) {
    case FunctionalKind::kForward:
      comparable_ = shifted_comparable(cs, ComparableKind::kForward, cfg.shift);
      eps_name_ = "F_eps";
      limit_name_ = "F";
      break;
    case FunctionalKind::kBackward:
      comparable_ = shifted_comparable(cs, ComparableKind::kBackward, cfg.shift);
      comparable_.parity = cfg.parity;
      eps_name_ = "G_eps";
      limit_name_ = "G";
      add_table(residuals_, "compatibility", compatibility_residuals(cs, comparable_, cfg.grid, so), so.tol);
      break;
    case FunctionalKind::kEntropy: {
      const FunctionalSpec spec = make_entropy_production_spec(model, cfg.parity, cfg.grid, so);
      comparable_ = spec.comparable;
      flags_.insert(flags_.end(), spec.flags.begin(), spec.flags.end());
      add_table(residuals_, "compatibility", spec.residuals, so.tol);
      eps_name_ = "S_tot_eps";
      limit_name_ = "S_tot";
      break;
    }
    case FunctionalKind::kHousekeeping: {
      const AveragedModel base = compute_averaged_coefficients(cs, nullptr, cfg.grid, ao);
      const FunctionalSpec spec = make_housekeeping_spec(model, cfg.parity, base, cfg.grid, so);
      comparable_ = spec.comparable;
      flags_.insert(flags_.end(), spec.flags.begin(), spec.flags.end());
      eps_name_ = "S_hk_eps";
      limit_name_ = "S_hk";
      break;
    }
  }

  if (with_limit || backward) {
    avg_ = std::make_unique<AveragedModel>(compute_averaged_coefficients(cs, &comparable_, cfg.grid, ao));
  }
  if (with_limit) {
    ext_ = std::make_unique<ExtendedSystem>(backward ? compute_extended_backward(cs, comparable_, *avg_, ao)
                                                     : compute_extended_forward(cs, comparable_, *avg_, ao));
    for (const auto& [name, table] : ext_->residuals) {
      const auto it = ext_->thresholds.find(name);
      const double tol = it != ext_->thresholds.end() ? it->second : kDefaultResidualTol;
      const double v = table.size() ? table.cwiseAbs().maxCoeff() : 0.0;
      residuals_.push_back({"identities", name, v, tol, v <= tol});
    }
  }

  if (!backward) {
    eps_set_ = std::make_unique<ForwardEpsilonSet>(model, comparable_, eps_name_, cfg.mutations);
    if (with_limit) limit_set_ = std::make_unique<LimitForwardSet>(*avg_, *ext_, limit_name_);
    return;
  }

  const std::vector<double> times = record_times(model.T, cfg.dt, cfg.records);
  std::optional<GaussianTrack> track;
  std::optional<ReducedDensity> fallback;
  try {
    track = multiscale_track(model, times);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUnsupportedModel) throw;
    fallback = reduced_density_for(model, *avg_, times, model.burn_in);
    flags_.push_back("approximate_boundary");
  }
  BackwardEpsilonOptions bo;
  bo.direct = cfg.direct && track.has_value() && cs.constant_diffusion;
  eps_set_ = std::make_unique<BackwardEpsilonSet>(model, comparable_, FrozenDensity::build(cs, cfg.grid),
                                                  std::move(track), std::move(fallback), eps_name_, bo);
  if (with_limit) {
    const std::vector<double> limit_times = record_times(model.T, cfg.limit_dt, cfg.records);
    limit_set_ = std::make_unique<LimitBackwardSet>(
        *avg_, *ext_, reduced_density_for(model, *avg_, limit_times, model.burn_in), limit_name_);
  }
}

TrajectoryBatch Pipeline::simulate_epsilon() const {
  return simulate_multiscale(*model_, {eps_set_.get()}, cfg_.simulation(cfg_.dt));
}

TrajectoryBatch Pipeline::simulate_limit() const {
  if (!limit_set_) throw Error(kModule, ErrorKind::kConfiguration, "pipeline was built without the limit system");
  SimulationOptions o = cfg_.simulation(cfg_.limit_dt);
  o.covariations = {{limit_name_ + "_1", limit_name_ + "_2"}};
  return simulate_limit_system(*model_, *avg_, ext_.get(), {limit_set_.get()}, o);
}

// ---------------------------------------------------------------------------------------------

std::vector<FunctionalRow> functional_rows(const TrajectoryBatch& batch, const std::vector<std::string>& flags,
                                           const StatThresholds& th) {
  std::vector<std::string> rules{"fixed_time"};
  for (const auto& s : batch.stopped) rules.push_back(s.rule.name);
  std::vector<FunctionalRow> out;
  for (const auto& name : batch.names) {
    for (const auto& rule : rules) {
      if (!all_finite(batch, name, rule)) continue;
      const RowVec values = stopped_values(batch, name, rule);
      const RowVec e = (-values).array().exp();
      const MeanCI ci = estimate_mean_ci(e);
      FunctionalRow row;
      row.functional = name;
      row.rule = rule;
      row.estimate = ci.mean;
      row.se = ci.se;
      row.trimmed = weight_diagnostics(e, th.trim).trimmed_mean;
      row.mean_value = values.mean();
      row.n_paths = ci.n;
      row.exits = batch.exit_count();
      row.dt = batch.dt;
      row.eps = batch.epsilon;
      row.flags = join(flags, ";");
      out.push_back(std::move(row));
    }
  }
  return out;
}

ConvergenceTable convergence_from_batches(const std::vector<double>& eps,
                                          const std::vector<const TrajectoryBatch*>& batches,
                                          const TrajectoryBatch& limit,
                                          const std::vector<std::pair<std::string, std::string>>& functionals) {
  ConvergenceTable out;
  std::vector<std::pair<std::string, std::pair<std::string, std::string>>> quantities{{"X", {"", ""}}};
  for (const auto& f : functionals) quantities.push_back({f.first, f});
  for (const auto& [label, names] : quantities) {
    const RowVec ref = kept_final(limit, names.second);
    Verdict v;
    v.test = "convergence";
    v.functional = label;
    v.rule = "fixed_time";
    v.pass = true;
    double prev = INFINITY;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const KsResult ks = ks_two_sample(kept_final(*batches[i], names.first), ref);
      out.rows.push_back({eps[i], label, ks.distance, ks.p_value});
      v.details["ks_eps_" + format_double(eps[i])] = ks.distance;
      if (!(ks.distance < prev)) v.pass = false;
      prev = ks.distance;
      v.statistic = ks.distance;
    }
    v.note = "KS distance must decrease strictly along the eps list";
    out.verdicts.push_back(std::move(v));
  }
  return out;
}

ConvergenceTable convergence_check(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.eps.size() < 2) throw Error(kModule, ErrorKind::kConfiguration, "convergence needs at least two eps values");
  const Pipeline primary(cfg, cfg.eps.back(), true);
  const TrajectoryBatch limit = primary.simulate_limit();
  std::vector<TrajectoryBatch> batches;
  for (std::size_t i = 0; i + 1 < cfg.eps.size(); ++i) batches.push_back(Pipeline(cfg, cfg.eps[i], false).simulate_epsilon());
  batches.push_back(primary.simulate_epsilon());
  std::vector<const TrajectoryBatch*> ptrs;
  for (const auto& b : batches) ptrs.push_back(&b);
  return convergence_from_batches(cfg.eps, ptrs, limit, {{primary.epsilon_name(), primary.limit_name()}});
}

EnsembleStats run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  EnsembleStats stats;
  stats.model = cfg.model;
  stats.functional = to_string(cfg.functional);
  const StatThresholds& th = cfg.thresholds;

  const Pipeline pipe(cfg, cfg.min_eps(), cfg.limit || cfg.eps.size() > 1);
  stats.flags = pipe.flags();
  stats.residuals = pipe.residuals();
  const bool backward = pipe.side() == FunctionalSide::kBackward;
  const std::string E = pipe.epsilon_name();
  const std::string L = pipe.limit_name();
  const std::string L1 = L + "_1", L2 = L + "_2";
  const bool approx = std::find(stats.flags.begin(), stats.flags.end(), "approximate_boundary") != stats.flags.end();

  const TrajectoryBatch eb = pipe.simulate_epsilon();
  std::optional<TrajectoryBatch> lb;
  if (pipe.limit_set()) lb = pipe.simulate_limit();

  for (auto& r : functional_rows(eb, stats.flags, th)) stats.rows.push_back(std::move(r));
  if (lb) {
    for (auto& r : functional_rows(*lb, stats.flags, th)) stats.rows.push_back(std::move(r));
  }

  {
    Verdict v;
    v.test = "residuals";
    v.functional = "tables";
    v.rule = "-";
    v.pass = true;
    for (const auto& r : stats.residuals) {
      v.statistic = std::max(v.statistic, r.value / std::max(r.threshold, 1e-300));
      v.pass = v.pass && r.pass;
    }
    v.threshold = 1.0;
    v.note = "worst residual relative to its threshold";
    stats.verdicts.push_back(std::move(v));
  }

  const std::vector<std::string> rules = rule_names(cfg);
  auto push = [&](Verdict v) { stats.verdicts.push_back(std::move(v)); };

  if (!backward) {
    for (const auto& rule : rules) push(ift_check(eb, E, rule, th));
    push(martingale_check(eb, E, th));
    if (cfg.mutations) {
      for (const char* flip : {"_flip_xx", "_flip_xy", "_flip_yy"}) {
        Verdict v = ift_check(eb, E + flip, "fixed_time", th);
        v.test = "mutation";
        v.pass = !v.pass;
        v.note = "the mutated functional must fail the fluctuation check";
        push(std::move(v));
      }
    }
    if (lb) {
      for (const auto& name : {L, L1, L2}) {
        for (const auto& rule : rules) push(ift_check(*lb, name, rule, th));
        push(martingale_check(*lb, name, th));
      }
      push(covariation_check(*lb, L1, L2, th));
    }
  } else {
    Verdict ge = ift_check(eb, E, "fixed_time", th);
    push(approx ? ungated(ge, "approximate boundary density") : ge);
    if (std::find(eb.names.begin(), eb.names.end(), E + "_direct") != eb.names.end()) push(ift_check(eb, E + "_direct", "fixed_time", th));
    if (lb) {
      push(ungated(ift_check(*lb, L, "fixed_time", th), "limit total functional may not be uniformly integrable"));
      push(ift_check(*lb, L1, "fixed_time", th));
      for (const auto& rule : rules) push(ift_check(*lb, L2, rule, th));
      push(martingale_check(*lb, L2, th));
      for (const auto& r : cfg.rules) {
        push(ungated(martingale_check(*lb, L1, th, &lb->stopped_by(r.name)),
                     "regular part stopped at a first exit is generally not a martingale"));
      }
      push(ungated(covariation_check(*lb, L1, L2, th), "orthogonality is only established on the forward side"));
    }
  }
  if (cfg.functional == FunctionalKind::kEntropy || cfg.functional == FunctionalKind::kHousekeeping) {
    push(second_law(eb, E, th));
    if (lb) push(second_law(*lb, L, th));
  }

  if (cfg.eps.size() > 1 && lb) {
    std::vector<TrajectoryBatch> coarse;
    for (std::size_t i = 0; i + 1 < cfg.eps.size(); ++i) {
      coarse.push_back(Pipeline(cfg, cfg.eps[i], false).simulate_epsilon());
    }
    std::vector<const TrajectoryBatch*> ptrs;
    for (const auto& b : coarse) ptrs.push_back(&b);
    ptrs.push_back(&eb);
    ConvergenceTable ct = convergence_from_batches(cfg.eps, ptrs, *lb, {{E, L}});
    stats.convergence = std::move(ct.rows);
    for (auto& v : ct.verdicts) push(std::move(v));
  }

  write_artifacts(stats, cfg.out_dir);
  return stats;
}

// ---------------------------------------------------------------------------------------------
// Artifacts

void write_ensemble_summary(const TrajectoryBatch& batch, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(kModule, ErrorKind::kIo, "cannot write " + path.string());
  out << "t,x_mean,x_var";
  for (const auto& n : batch.names) out << ",exp_neg_" << n;
  out << '\n';
  const std::vector<int> kept = batch.kept();
  for (int r = 0; r < batch.records(); ++r) {
    const RowVec x = batch.slow(r);
    double s = 0, s2 = 0;
    for (int k : kept) {
      s += x[k];
      s2 += x[k] * x[k];
    }
    const double n = static_cast<double>(kept.size());
    const double mean = s / n;
    out << format_double(batch.times[r]) << ',' << format_double(mean) << ','
        << format_double(n > 1 ? (s2 - n * mean * mean) / (n - 1) : 0.0);
    for (const auto& name : batch.names) {
      const RowVec v = batch.value(name, r);
      double e = 0;
      for (int k : kept) e += std::exp(-v[k]);
      out << ',' << format_double(e / n);
    }
    out << '\n';
  }
}

namespace {

nlohmann::json to_json(const Verdict& v) {
  nlohmann::json j{{"test", v.test},           {"functional", v.functional}, {"rule", v.rule},
                   {"pass", v.pass},           {"gated", v.gated},           {"statistic", v.statistic},
                   {"threshold", v.threshold}, {"note", v.note}};
  for (const auto& [k, d] : v.details) j["details"][k] = std::isfinite(d) ? nlohmann::json(d) : nlohmann::json(format_double(d));
  return j;
}

double json_number(const nlohmann::json& j) {
  return j.is_string() ? std::stod(j.get<std::string>()) : j.get<double>();
}

}  // namespace

void write_artifacts(const EnsembleStats& stats, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(kModule, ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw Error(kModule, ErrorKind::kIo, "cannot write " + (dir / name).string());
    return f;
  };
  {
    std::ofstream f = open("results.csv");
    f << "functional,rule,estimate,se,n_paths,dt,eps,flags\n";
    for (const auto& r : stats.rows) {
      f << r.functional << ',' << r.rule << ',' << format_double(r.estimate) << ',' << format_double(r.se) << ','
        << r.n_paths << ',' << format_double(r.dt) << ',' << format_double(r.eps) << ',' << r.flags << '\n';
    }
  }
  {
    std::ofstream f = open("residuals.csv");
    f << "table,name,value,threshold,pass\n";
    for (const auto& r : stats.residuals) {
      f << r.table << ',' << r.name << ',' << format_double(r.value) << ',' << format_double(r.threshold) << ','
        << (r.pass ? "PASS" : "FAIL") << '\n';
    }
  }
  {
    std::ofstream f = open("verdicts.csv");
    f << "test,functional,rule,statistic,threshold,gated,verdict\n";
    for (const auto& v : stats.verdicts) {
      f << v.test << ',' << '"' << v.functional << '"' << ',' << v.rule << ',' << format_double(v.statistic) << ','
        << format_double(v.threshold) << ',' << (v.gated ? "yes" : "no") << ',' << (v.pass ? "PASS" : "FAIL")
        << '\n';
    }
  }
  if (!stats.convergence.empty()) {
    std::ofstream f = open("convergence.csv");
    f << "eps,quantity,ks,p_value\n";
    for (const auto& r : stats.convergence) {
      f << format_double(r.eps) << ',' << r.quantity << ',' << format_double(r.ks) << ',' << format_double(r.p_value)
        << '\n';
    }
  }
  {
    nlohmann::json j;
    j["model"] = stats.model;
    j["functional"] = stats.functional;
    j["flags"] = stats.flags;
    j["all_gated_pass"] = stats.all_gated_pass();
    j["rows"] = nlohmann::json::array();
    for (const auto& r : stats.rows) {
      j["rows"].push_back({{"functional", r.functional}, {"rule", r.rule},      {"estimate", r.estimate},
                           {"se", r.se},                 {"trimmed", r.trimmed}, {"mean_value", r.mean_value},
                           {"n_paths", r.n_paths},       {"exits", r.exits},     {"dt", r.dt},
                           {"eps", r.eps},               {"flags", r.flags}});
    }
    j["verdicts"] = nlohmann::json::array();
    for (const auto& v : stats.verdicts) j["verdicts"].push_back(to_json(v));
    j["residuals"] = nlohmann::json::array();
    for (const auto& r : stats.residuals) {
      j["residuals"].push_back(
          {{"table", r.table}, {"name", r.name}, {"value", r.value}, {"threshold", r.threshold}, {"pass", r.pass}});
    }
    j["convergence"] = nlohmann::json::array();
    for (const auto& r : stats.convergence) {
      j["convergence"].push_back({{"eps", r.eps}, {"quantity", r.quantity}, {"ks", r.ks}, {"p_value", r.p_value}});
    }
    std::ofstream f = open("stats.json");
    f << j.dump(2) << '\n';
  }
  std::ofstream f = open("report.txt");
  f << render_report(stats);
}

EnsembleStats read_stats_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(kModule, ErrorKind::kIo, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(kModule, ErrorKind::kIo, path.string() + ": " + e.what());
  }
  EnsembleStats s;
  s.model = j.value("model", "");
  s.functional = j.value("functional", "");
  s.flags = j.value("flags", std::vector<std::string>{});
  for (const auto& r : j.at("rows")) {
    FunctionalRow row;
    row.functional = r.at("functional");
    row.rule = r.at("rule");
    row.estimate = r.at("estimate");
    row.se = r.at("se");
    row.trimmed = r.at("trimmed");
    row.mean_value = r.at("mean_value");
    row.n_paths = r.at("n_paths");
    row.exits = r.at("exits");
    row.dt = r.at("dt");
    row.eps = r.at("eps");
    row.flags = r.at("flags");
    s.rows.push_back(std::move(row));
  }
  for (const auto& r : j.at("verdicts")) {
    Verdict v;
    v.test = r.at("test");
    v.functional = r.at("functional");
    v.rule = r.at("rule");
    v.pass = r.at("pass");
    v.gated = r.at("gated");
    v.statistic = json_number(r.at("statistic"));
    v.threshold = json_number(r.at("threshold"));
    v.note = r.at("note");
    if (r.contains("details")) {
      for (const auto& [k, d] : r.at("details").items()) v.details[k] = json_number(d);
    }
    s.verdicts.push_back(std::move(v));
  }
  for (const auto& r : j.at("residuals")) {
    s.residuals.push_back({r.at("table"), r.at("name"), r.at("value"), r.at("threshold"), r.at("pass")});
  }
  for (const auto& r : j.at("convergence")) {
    s.convergence.push_back({r.at("eps"), r.at("quantity"), r.at("ks"), r.at("p_value")});
  }
  return s;
}

std::string render_report(const EnsembleStats& s) {
  std::ostringstream os;
  os << "msavg report\n============\n\n";
  os << "model:       " << s.model << "\n";
  os << "functional:  " << s.functional << "\n";
  os << "flags:       " << (s.flags.empty() ? "none" : join(s.flags, ", ")) << "\n";
  os << "outcome:     " << (s.all_gated_pass() ? "all gated verdicts PASS" : "some gated verdicts FAIL") << "\n\n";

  os << "Fluctuation estimates E[exp(-A)]\n--------------------------------\n";
  os << std::left << std::setw(22) << "functional" << std::setw(14) << "rule" << std::right << std::setw(12) << "estimate"
     << std::setw(11) << "se" << std::setw(12) << "trimmed" << std::setw(12) << "mean A" << std::setw(8) << "paths"
     << std::setw(7) << "exits" << std::setw(8) << "eps" << "\n";
  for (const auto& r : s.rows) {
    os << std::left << std::setw(22) << r.functional << std::setw(14) << r.rule << std::right << std::fixed
       << std::setprecision(5) << std::setw(12) << r.estimate << std::setw(11) << r.se << std::setw(12) << r.trimmed
       << std::setw(12) << r.mean_value << std::setw(8) << r.n_paths << std::setw(7) << r.exits
       << std::setprecision(3) << std::setw(8) << r.eps << "\n";
    os.unsetf(std::ios::floatfield);
  }

  os << "\nVerdicts\n--------\n";
  for (const auto& v : s.verdicts) {
    os << (v.pass ? "PASS " : "FAIL ") << (v.gated ? "       " : "[diag] ") << std::left << std::setw(12) << v.test
       << std::setw(22) << v.functional << std::setw(14) << v.rule << std::right << std::setprecision(4)
       << " statistic " << v.statistic << " threshold " << v.threshold;
    if (!v.note.empty()) os << "  (" << v.note << ")";
    os << "\n";
  }

  os << "\nResidual tables\n---------------\n";
  if (s.residuals.empty()) os << "(none)\n";
  for (const auto& r : s.residuals) {
    os << std::left << std::setw(15) << r.table << std::setw(28) << r.name << std::right << std::scientific
       << std::setprecision(3) << std::setw(12) << r.value << " <= " << std::setw(10) << r.threshold << "  "
       << (r.pass ? "PASS" : "FAIL") << "\n";
    os.unsetf(std::ios::floatfield);
  }

  if (!s.convergence.empty()) {
    os << "\nWeak convergence (KS distance to the limit law at T)\n"
          "----------------------------------------------------\n";
    for (const auto& r : s.convergence) {
      os << std::left << std::setw(12) << r.quantity << std::right << " eps " << std::setw(6) << r.eps << "  KS "
         << std::fixed << std::setprecision(5) << r.ks << "  p " << std::setprecision(4) << r.p_value << "\n";
      os.unsetf(std::ios::floatfield);
    }
  }
  return os.str();
}

}  // namespace msavg
