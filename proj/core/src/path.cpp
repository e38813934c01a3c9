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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "msavg/rng.hpp"

namespace msavg {

namespace {

constexpr const char* kModule = "path_engine";
constexpr int kChunk = 256;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void config_error(const std::string& what) { throw Error(kModule, ErrorKind::kConfiguration, what); }

bool inside(const Box& box, const Mat& z, Eigen::Index k) {
  if (box.lo.size() == 0) return z.col(k).allFinite();
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double v = z(i, k);
    if (!(v > box.lo[i] && v < box.hi[i])) return false;
  }
  return true;
}

struct Plan {
  int m = 1, n = 0, p = 1;
  long steps = 0, burn_steps = 0, stride = 1;
  int records = 0;
  double dt = 0.0;
  int substeps = 1;
  bool store_fast = false;
  std::uint64_t seed = 0;
  std::vector<StoppingRule> rules;
  std::vector<std::pair<int, int>> pairs;
  std::vector<const IntegrandSet*> sets;
  std::vector<int> offset;
  std::vector<int> count;
  int functionals = 0;
  bool any_boundary = false;
};

long whole_steps(double span, double dt, const char* what) {
  const long steps = std::lround(span / dt);
  if (std::abs(steps * dt - span) > 1e-9 * std::max(1.0, span)) {
    std::ostringstream os;
    os << what << " " << span << " is not a whole number of steps dt = " << dt;
    config_error(os.str());
  }
  return steps;
}

Plan make_plan(const MultiscaleModel& model, int p, const std::vector<const IntegrandSet*>& sets,
               const SimulationOptions& opt, std::vector<std::string>& names) {
  if (opt.n_paths < 1) config_error("n_paths must be positive");
  if (!(opt.dt > 0.0)) config_error("dt must be positive");
  if (opt.noise_substeps < 1) config_error("noise_substeps must be at least 1");
  if (opt.records < 1) config_error("records must be at least 1");
  Plan plan;
  plan.m = model.coeffs.m;
  plan.p = p;
  plan.dt = opt.dt;
  plan.substeps = opt.noise_substeps;
  plan.seed = opt.seed;
  plan.store_fast = opt.store_fast;
  plan.steps = whole_steps(model.T, opt.dt, "T");
  const double burn = opt.burn_in.value_or(model.burn_in);
  if (burn < 0.0) config_error("burn_in must be nonnegative");
  plan.burn_steps = whole_steps(burn, opt.dt, "burn_in");
  if (plan.steps < opt.records || plan.steps % opt.records != 0) {
    std::ostringstream os;
    os << "records = " << opt.records << " does not divide the " << plan.steps << " steps";
    config_error(os.str());
  }
  plan.records = opt.records + 1;
  plan.stride = plan.steps / opt.records;
  plan.rules = opt.rules;
  for (const auto& rule : plan.rules) {
    if (rule.kind == StoppingRule::Kind::kFirstExit &&
        (rule.lo.size() != plan.m || rule.hi.size() != plan.m)) {
      config_error("stopping rule '" + rule.name + "' needs bounds for every slow coordinate");
    }
  }
  plan.sets = sets;
  for (const IntegrandSet* set : sets) {
    const auto set_names = set->names();
    plan.offset.push_back(static_cast<int>(names.size()));
    plan.count.push_back(static_cast<int>(set_names.size()));
    names.insert(names.end(), set_names.begin(), set_names.end());
    plan.any_boundary = plan.any_boundary || set->has_boundary();
  }
  plan.functionals = static_cast<int>(names.size());
  auto find = [&](const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) config_error("covariation requested for unknown functional '" + name + "'");
    return static_cast<int>(it - names.begin());
  };
  for (const auto& [a, b] : opt.covariations) plan.pairs.emplace_back(find(a), find(b));
  return plan;
}

TrajectoryBatch allocate(const Plan& plan, const MultiscaleModel& model, const std::vector<std::string>& names,
                         int n_paths) {
  TrajectoryBatch out;
  out.n_paths = n_paths;
  out.m = plan.m;
  out.n = plan.n;
  out.noise_dim = plan.p;
  out.dt = plan.dt;
  out.T = model.T;
  out.times.resize(plan.records);
  for (int r = 0; r < plan.records; ++r) out.times[r] = static_cast<double>(r * plan.stride) * plan.dt;
  out.x = Mat::Zero(static_cast<Eigen::Index>(plan.records) * plan.m, n_paths);
  if (plan.store_fast) out.y = Mat::Zero(static_cast<Eigen::Index>(plan.records) * plan.n, n_paths);
  out.names = names;
  out.values = Mat::Zero(static_cast<Eigen::Index>(plan.records) * plan.functionals, n_paths);
  out.pairs = plan.pairs;
  out.covariation = Mat::Zero(static_cast<Eigen::Index>(plan.records) * plan.pairs.size(), n_paths);
  for (const auto& rule : plan.rules) {
    StoppedValues sv;
    sv.rule = rule;
    sv.tau = RowVec::Zero(n_paths);
    sv.x = Mat::Zero(plan.m, n_paths);
    sv.values = Mat::Zero(plan.functionals, n_paths);
    out.stopped.push_back(std::move(sv));
  }
  out.exited.assign(n_paths, 0);
  out.exit_time = RowVec::Constant(n_paths, kNaN);
  out.noise_var = RowVec::Zero(n_paths);
  return out;
}

// Draws increments of dimension p for K paths; each increment sums `substeps` finer ones.
class NoiseSource {
 public:
  NoiseSource(std::uint64_t seed, int first, int K, Stream stream, int p, int substeps, double dt)
      : p_(p), substeps_(substeps), scale_(std::sqrt(dt / substeps)) {
    seqs_.reserve(K);
    for (int k = 0; k < K; ++k) seqs_.emplace_back(seed, static_cast<std::uint64_t>(first + k), stream);
  }

  void draw(Mat& dW) {
    for (Eigen::Index k = 0; k < dW.cols(); ++k) {
      NormalSequence& seq = seqs_[k];
      double* col = dW.col(k).data();
      for (int j = 0; j < p_; ++j) col[j] = seq.next();
      for (int s = 1; s < substeps_; ++s) {
        for (int j = 0; j < p_; ++j) col[j] += seq.next();
      }
      for (int j = 0; j < p_; ++j) col[j] *= scale_;
    }
  }

 private:
  int p_, substeps_;
  double scale_;
  std::vector<NormalSequence> seqs_;
};

Mat initial_normals(std::uint64_t seed, int first, int K, int dim) {
  Mat z(dim, K);
  for (int k = 0; k < K; ++k) {
    NormalStream(seed, static_cast<std::uint64_t>(first + k), Stream::kInitial).fill(0, {z.col(k).data(), static_cast<std::size_t>(dim)});
  }
  return z;
}

class MultiscaleStepper {
 public:
  MultiscaleStepper(const MultiscaleModel& model, const Plan& plan, int first, int K)
      : model_(model),
        cs_(model.coeffs),
        plan_(plan),
        noise_(plan.seed, first, K, Stream::kMultiscale, cs_.p, plan.substeps, plan.dt),
        b_(cs_.m, K), f_(cs_.m, K), g_(cs_.n, K), c_(cs_.n, K), dW_(cs_.p, K) {
    if (cs_.constant_diffusion) {
      const Mat x0 = Mat::Zero(cs_.m, 1), y0 = Mat::Zero(cs_.n, 1);
      sigma_ = eval_batch(cs_.sigma, cs_.m * cs_.p, x0, y0, 0.0);
      eta_ = eval_batch(cs_.eta, cs_.n * cs_.p, x0, y0, 0.0);
    } else {
      sigma_.resize(cs_.m * cs_.p, K);
      eta_.resize(cs_.n * cs_.p, K);
    }
  }

  Stream stream() const { return Stream::kMultiscale; }
  int state_dim() const { return cs_.m + cs_.n; }

  void initial(const Mat& z, Mat& x, Mat& y) const {
    const Mat L = model_.init.factor();
    const Mat s = (L * z).colwise() + model_.init.mean;
    x = s.topRows(cs_.m);
    y = s.bottomRows(cs_.n);
  }

  void prepare(double t, const Mat& x, const Mat& y) {
    t_ = t;
    x_ = &x;
    y_ = &y;
    cs_.b(x, y, t, b_);
    cs_.f(x, y, t, f_);
    cs_.g(x, y, t, g_);
    cs_.c(x, y, t, c_);
    if (!cs_.constant_diffusion) {
      cs_.sigma(x, y, t, sigma_);
      cs_.eta(x, y, t, eta_);
    }
  }

  void integrands(const IntegrandSet& set, Mat& dw, Mat& dt) const {
    set.integrands(MultiscaleStep{t_, *x_, *y_, b_, f_, g_, c_, sigma_, eta_}, dw, dt);
  }

  Mat& draw() {
    noise_.draw(dW_);
    return dW_;
  }

  void advance(Mat& x, Mat& y) const {
    const double eps = model_.epsilon, dt = plan_.dt;
    const int m = cs_.m, n = cs_.n, p = cs_.p;
    x += (b_ + f_ / eps) * dt;
    y += (g_ / eps + c_ / (eps * eps)) * dt;
    if (cs_.constant_diffusion) {
      const Eigen::Map<const Mat> s(sigma_.data(), m, p);
      const Eigen::Map<const Mat> e(eta_.data(), n, p);
      x.noalias() += s * dW_;
      y.noalias() += (e / eps) * dW_;
    } else {
      for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const Eigen::Map<const Mat> s(sigma_.col(k).data(), m, p);
        const Eigen::Map<const Mat> e(eta_.col(k).data(), n, p);
        x.col(k).noalias() += s * dW_.col(k);
        y.col(k).noalias() += e * dW_.col(k) / eps;
      }
    }
  }

  bool in_domain(const Mat& x, const Mat& y, Eigen::Index k) const {
    return inside(model_.slow_box, x, k) && inside(model_.fast_box, y, k);
  }

 private:
  const MultiscaleModel& model_;
  const CoefficientSet& cs_;
  const Plan& plan_;
  NoiseSource noise_;
  Mat b_, f_, g_, c_, sigma_, eta_, dW_;
  double t_ = 0.0;
  const Mat* x_ = nullptr;
  const Mat* y_ = nullptr;
};

class LimitStepper {
 public:
  LimitStepper(const MultiscaleModel& model, const AveragedModel& avg, const ExtendedSystem* ext, const Plan& plan,
               int first, int K)
      : model_(model),
        avg_(avg),
        ext_(ext),
        plan_(plan),
        noise_(plan.seed, first, K, Stream::kLimit, 2, plan.substeps, plan.dt),
        root_(4, K),
        dW_(2, K) {}

  int state_dim() const { return model_.coeffs.m + model_.coeffs.n; }

  void initial(const Mat& z, Mat& x, Mat& y) const {
    const Mat L = model_.init.factor();
    x = (L.topRows(1) * z).array() + model_.init.mean[0];
    y.resize(0, z.cols());
  }

  void prepare(double t, const Mat& x, const Mat&) {
    t_ = t;
    x_ = &x;
    const RowVec xs = x.row(0);
    w_ = avg_.w.eval(xs, t);
    const RowVec A = avg_.A.eval(xs, t);
    if (ext_ == nullptr) {
      root_.setZero();
      for (Eigen::Index k = 0; k < xs.size(); ++k) root_(0, k) = std::sqrt(std::max(A(k), 0.0));
      return;
    }
    const RowVec mx = ext_->bar_A_mx.eval(xs, t);
    const RowVec mm = ext_->bar_A_mm.eval(xs, t);
    for (Eigen::Index k = 0; k < xs.size(); ++k) {
      try {
        const auto r = sqrt_psd2(A(k), mx(k), mm(k));
        for (int i = 0; i < 4; ++i) root_(i, k) = r[i];
      } catch (const Error& e) {
        std::ostringstream os;
        os << e.what() << " at x = " << xs(k) << ", t = " << t;
        throw Error(kModule, ErrorKind::kNumerical, os.str());
      }
    }
  }

  void integrands(const IntegrandSet& set, Mat& dw, Mat& dt) const {
    set.integrands(LimitStep{t_, *x_, root_, avg_, ext_}, dw, dt);
  }

  Mat& draw() {
    noise_.draw(dW_);
    return dW_;
  }

  void advance(Mat& x, Mat&) const {
    x.row(0).array() += w_.array() * plan_.dt + root_.row(0).array() * dW_.row(0).array() +
                        root_.row(1).array() * dW_.row(1).array();
  }

  bool in_domain(const Mat& x, const Mat&, Eigen::Index k) const { return inside(model_.slow_box, x, k); }

 private:
  const MultiscaleModel& model_;
  const AveragedModel& avg_;
  const ExtendedSystem* ext_;
  const Plan& plan_;
  NoiseSource noise_;
  Mat root_, dW_;
  RowVec w_;
  double t_ = 0.0;
  const Mat* x_ = nullptr;
};

template <class Stepper>
void run_chunk(Stepper& st, const Plan& plan, int first, int K, TrajectoryBatch& out) {
  const int F = plan.functionals, m = plan.m, P = plan.p;
  const int npairs = static_cast<int>(plan.pairs.size());
  const double dt = plan.dt;

  Mat x, y;
  st.initial(initial_normals(plan.seed, first, K, st.state_dim()), x, y);
  const int n = static_cast<int>(y.rows());
  std::vector<std::uint8_t> exited(K, 0);
  RowVec exit_time = RowVec::Constant(K, kNaN);
  Mat xprev, yprev;

  auto check_domain = [&](double t) {
    for (int k = 0; k < K; ++k) {
      if (!exited[k] && !st.in_domain(x, y, k)) {
        exited[k] = 1;
        exit_time(k) = t;
      }
      if (exited[k]) {
        x.col(k) = xprev.col(k);
        if (n > 0) y.col(k) = yprev.col(k);
      }
    }
  };

  for (long s = 0; s < plan.burn_steps; ++s) {
    const double t = static_cast<double>(s - plan.burn_steps) * dt;
    st.prepare(t, x, y);
    st.draw();
    xprev = x;
    yprev = y;
    st.advance(x, y);
    check_domain(t + dt);
  }

  Mat acc = Mat::Zero(F, K), u0 = Mat::Zero(F, K), ub = Mat::Zero(F, K), val = Mat::Zero(F, K);
  std::vector<Mat> dws(plan.sets.size()), dts(plan.sets.size());
  for (std::size_t i = 0; i < plan.sets.size(); ++i) {
    dws[i].resize(static_cast<Eigen::Index>(plan.count[i]) * P, K);
    dts[i].resize(plan.count[i], K);
  }
  Mat cov = Mat::Zero(npairs, K), e_old, e_new;
  RowVec qsum = RowVec::Zero(K);

  const std::size_t nrules = plan.rules.size();
  std::vector<std::vector<std::uint8_t>> stopped(nrules, std::vector<std::uint8_t>(K, 0));

  auto record = [&](int r, double t) {
    if (plan.any_boundary) {
      ub.setZero();
      for (std::size_t i = 0; i < plan.sets.size(); ++i) {
        if (!plan.sets[i]->has_boundary()) continue;
        Mat block = Mat::Zero(plan.count[i], K);
        plan.sets[i]->boundary(r, t, x, y, block);
        ub.middleRows(plan.offset[i], plan.count[i]) = block;
      }
      if (r == 0) u0 = ub;
    }
    val = acc + u0 - ub;
    out.x.block(static_cast<Eigen::Index>(r) * m, first, m, K) = x;
    if (plan.store_fast) out.y.block(static_cast<Eigen::Index>(r) * n, first, n, K) = y;
    if (F > 0) out.values.block(static_cast<Eigen::Index>(r) * F, first, F, K) = val;
    if (npairs > 0) out.covariation.block(static_cast<Eigen::Index>(r) * npairs, first, npairs, K) = cov;
  };

  auto stop = [&](std::size_t ri, int k, double t, bool at_record) {
    StoppedValues& sv = out.stopped[ri];
    stopped[ri][k] = 1;
    sv.tau(first + k) = t;
    sv.x.col(first + k) = x.col(k);
    if (at_record) {
      sv.values.col(first + k) = val.col(k);
      return;
    }
    sv.values.col(first + k) = acc.col(k);
    for (std::size_t i = 0; i < plan.sets.size(); ++i) {
      if (!plan.sets[i]->has_boundary()) continue;
      const std::vector<bool> mask = plan.sets[i]->boundary_mask();
      for (int j = 0; j < plan.count[i]; ++j) {
        if (mask[static_cast<std::size_t>(j)]) sv.values(plan.offset[i] + j, first + k) = kNaN;
      }
    }
  };

  auto check_rules = [&](double t, bool at_record) {
    for (std::size_t ri = 0; ri < nrules; ++ri) {
      const StoppingRule& rule = plan.rules[ri];
      if (rule.kind != StoppingRule::Kind::kFirstExit) continue;
      for (int k = 0; k < K; ++k) {
        if (stopped[ri][k] || exited[k]) continue;
        if (rule.should_stop(x.col(k).data(), m)) stop(ri, k, t, at_record);
      }
    }
  };

  record(0, 0.0);
  check_rules(0.0, true);

  for (long s = 0; s < plan.steps; ++s) {
    const double t = static_cast<double>(s) * dt;
    st.prepare(t, x, y);
    const Mat& dW = st.draw();
    qsum.array() += dW.row(0).array().square();
    if (npairs > 0) e_old = (-acc).array().exp().matrix();
    for (std::size_t i = 0; i < plan.sets.size(); ++i) {
      dws[i].setZero();
      dts[i].setZero();
      st.integrands(*plan.sets[i], dws[i], dts[i]);
      for (int j = 0; j < plan.count[i]; ++j) {
        auto row = acc.row(plan.offset[i] + j);
        row += dts[i].row(j) * dt;
        for (int l = 0; l < P; ++l) row.array() += dws[i].row(j * P + l).array() * dW.row(l).array();
      }
    }
    if (npairs > 0) {
      e_new = (-acc).array().exp().matrix();
      for (int q = 0; q < npairs; ++q) {
        const auto [a, b] = plan.pairs[q];
        cov.row(q).array() += (e_new.row(a) - e_old.row(a)).array() * (e_new.row(b) - e_old.row(b)).array();
      }
    }
    xprev = x;
    yprev = y;
    st.advance(x, y);
    const double t1 = static_cast<double>(s + 1) * dt;
    check_domain(t1);
    const bool at_record = (s + 1) % plan.stride == 0;
    if (at_record) record(static_cast<int>((s + 1) / plan.stride), t1);
    check_rules(t1, at_record);
  }

  for (std::size_t ri = 0; ri < nrules; ++ri) {
    for (int k = 0; k < K; ++k) {
      if (!stopped[ri][k]) stop(ri, k, out.T, true);
    }
  }
  for (int k = 0; k < K; ++k) {
    out.exited[first + k] = exited[k];
    out.exit_time(first + k) = exit_time(k);
  }
  out.noise_var.segment(first, K) = qsum / (static_cast<double>(plan.steps) * dt);
}

template <class MakeStepper>
void run_chunks(int n_paths, int workers, MakeStepper make) {
  const int chunks = (n_paths + kChunk - 1) / kChunk;
  const int threads = std::max(1, std::min(worker_count(workers), chunks));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (int c = next++; c < chunks; c = next++) {
      try {
        const int first = c * kChunk;
        make(first, std::min(kChunk, n_paths - first));
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = chunks;
      }
    }
  };
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int i = 0; i < threads; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

StoppingRule StoppingRule::fixed_time() { return {}; }

StoppingRule StoppingRule::first_exit(Vec lo, Vec hi, std::string name) {
  StoppingRule rule;
  rule.kind = Kind::kFirstExit;
  rule.name = std::move(name);
  rule.lo = std::move(lo);
  rule.hi = std::move(hi);
  return rule;
}

StoppingRule StoppingRule::first_exit(double lo, double hi, std::string name) {
  return first_exit(Vec::Constant(1, lo), Vec::Constant(1, hi), std::move(name));
}

bool StoppingRule::should_stop(const double* x, int m) const {
  if (kind != Kind::kFirstExit) return false;
  for (int i = 0; i < m; ++i) {
    if (x[i] <= lo[i] || x[i] >= hi[i]) return true;
  }
  return false;
}

void IntegrandSet::integrands(const MultiscaleStep&, Mat&, Mat&) const {
  throw Error(kModule, ErrorKind::kConfiguration, "integrand set does not support multiscale runs");
}

void IntegrandSet::integrands(const LimitStep&, Mat&, Mat&) const {
  throw Error(kModule, ErrorKind::kConfiguration, "integrand set does not support limit runs");
}

void IntegrandSet::boundary(int, double, const Mat&, const Mat&, Mat& out) const { out.setZero(); }

std::vector<bool> IntegrandSet::boundary_mask() const { return std::vector<bool>(names().size(), has_boundary()); }

int TrajectoryBatch::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(kModule, ErrorKind::kConfiguration, "no functional named '" + name + "'");
  return static_cast<int>(it - names.begin());
}

int TrajectoryBatch::pair_index(const std::string& a, const std::string& b) const {
  const int ia = index(a), ib = index(b);
  for (std::size_t q = 0; q < pairs.size(); ++q) {
    if (pairs[q] == std::pair{ia, ib} || pairs[q] == std::pair{ib, ia}) return static_cast<int>(q);
  }
  throw Error(kModule, ErrorKind::kConfiguration, "covariation of '" + a + "' and '" + b + "' was not recorded");
}

RowVec TrajectoryBatch::value(const std::string& name, int record) const {
  const Eigen::Index F = static_cast<Eigen::Index>(names.size());
  return values.row(record * F + index(name));
}

RowVec TrajectoryBatch::slow(int record, int i) const { return x.row(static_cast<Eigen::Index>(record) * m + i); }

const StoppedValues& TrajectoryBatch::stopped_by(const std::string& rule) const {
  for (const auto& sv : stopped) {
    if (sv.rule.name == rule) return sv;
  }
  throw Error(kModule, ErrorKind::kConfiguration, "no stopping rule named '" + rule + "'");
}

int TrajectoryBatch::exit_count() const {
  return static_cast<int>(std::count(exited.begin(), exited.end(), std::uint8_t{1}));
}

std::vector<int> TrajectoryBatch::kept() const {
  std::vector<int> out;
  out.reserve(n_paths);
  for (int i = 0; i < n_paths; ++i) {
    if (!exited[i]) out.push_back(i);
  }
  return out;
}

std::vector<double> record_times(double T, double dt, int records) {
  const long steps = whole_steps(T, dt, "T");
  if (records < 1 || steps % records != 0) config_error("records must divide the number of steps");
  const long stride = steps / records;
  std::vector<double> out(records + 1);
  for (int r = 0; r <= records; ++r) out[r] = static_cast<double>(r * stride) * dt;
  return out;
}

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MSAVG_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::array<double, 4> sqrt_psd2(double p, double q, double r, double tol) {
  const double tr = p + r;
  const double det = p * r - q * q;
  const double disc = std::sqrt(std::max(0.0, 0.25 * (p - r) * (p - r) + q * q));
  const double lmin = 0.5 * tr - disc;
  if (!std::isfinite(lmin) || lmin < -tol * std::max(1.0, std::abs(tr))) {
    std::ostringstream os;
    os << "bar-A is indefinite (min eigenvalue " << lmin << ")";
    throw Error(kModule, ErrorKind::kNumerical, os.str());
  }
  const double s = std::sqrt(std::max(det, 0.0));
  const double denom = tr + 2.0 * s;
  if (denom <= 0.0) return {0.0, 0.0, 0.0, 0.0};
  const double inv = 1.0 / std::sqrt(denom);
  return {(p + s) * inv, q * inv, q * inv, (r + s) * inv};
}

TrajectoryBatch simulate_multiscale(const MultiscaleModel& model, const std::vector<const IntegrandSet*>& sets,
                                    const SimulationOptions& options) {
  model.validate();
  const double eps = model.epsilon;
  if (options.dt > options.max_dt_ratio * eps * eps * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "dt = " << options.dt << " exceeds " << options.max_dt_ratio << " * eps^2 = "
       << options.max_dt_ratio * eps * eps;
    config_error(os.str());
  }
  std::vector<std::string> names;
  Plan plan = make_plan(model, model.coeffs.p, sets, options, names);
  plan.n = model.coeffs.n;
  TrajectoryBatch out = allocate(plan, model, names, options.n_paths);
  out.epsilon = eps;
  run_chunks(options.n_paths, options.workers, [&](int first, int K) {
    MultiscaleStepper st(model, plan, first, K);
    run_chunk(st, plan, first, K, out);
  });
  return out;
}

TrajectoryBatch simulate_limit_system(const MultiscaleModel& model, const AveragedModel& avg,
                                      const ExtendedSystem* ext, const std::vector<const IntegrandSet*>& sets,
                                      const SimulationOptions& options) {
  if (model.coeffs.m != 1) {
    throw Error(kModule, ErrorKind::kUnsupportedModel, "limit systems are implemented for one slow coordinate");
  }
  if (avg.w.empty() || avg.A.empty()) throw Error(kModule, ErrorKind::kConfiguration, "averaged model is empty");
  std::vector<std::string> names;
  Plan plan = make_plan(model, 2, sets, options, names);
  plan.n = 0;
  plan.store_fast = false;
  TrajectoryBatch out = allocate(plan, model, names, options.n_paths);
  run_chunks(options.n_paths, options.workers, [&](int first, int K) {
    LimitStepper st(model, avg, ext, plan, first, K);
    run_chunk(st, plan, first, K, out);
  });
  return out;
}

StoppedValues apply_stopping(const TrajectoryBatch& batch, const StoppingRule& rule) {
  const int F = static_cast<int>(batch.names.size()), m = batch.m, R = batch.records();
  StoppedValues sv;
  sv.rule = rule;
  sv.tau = RowVec::Constant(batch.n_paths, batch.T);
  sv.x = Mat(m, batch.n_paths);
  sv.values = Mat(F, batch.n_paths);
  for (int k = 0; k < batch.n_paths; ++k) {
    int hit = R - 1;
    for (int r = 0; r < R; ++r) {
      if (rule.should_stop(batch.x.col(k).data() + static_cast<Eigen::Index>(r) * m, m)) {
        hit = r;
        break;
      }
    }
    sv.tau(k) = batch.times[hit];
    sv.x.col(k) = batch.x.block(static_cast<Eigen::Index>(hit) * m, k, m, 1);
    if (F > 0) sv.values.col(k) = batch.values.block(static_cast<Eigen::Index>(hit) * F, k, F, 1);
  }
  return sv;
}

}  // namespace msavg
