#pragma once

// Fixed-seed oracle suite behind `rrm verify`. Each check returns one line;
// checks that drive the optimizer accept a replacement inner loop so a
// deliberately broken update can be shown to trip the right check.

#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rrm/diagnostics.hpp"
#include "rrm/harness/output.hpp"
#include "rrm/reference.hpp"
#include "rrm/run.hpp"

namespace rrm::harness {

struct CheckResult {
  CheckResult() = default;
  explicit CheckResult(std::string n) : name(std::move(n)) {}

  std::string name;
  bool passed = true;
  std::string detail;
};

namespace detail {

inline std::string fmt(double v) { return format_double(v); }

inline FiniteSumProblem verification_problem(std::size_t which, std::size_t n, std::size_t d,
                                             std::uint64_t seed) {
  switch (which % 3) {
    case 0:
      return make_quadratic_sum(n, d, seed);
    case 1:
      return generate_logistic(n, d, seed);
    default:
      return generate_robust_gm(n, d, seed);
  }
}

}  // namespace detail

/// Worked instance X = {0, 1, 2}, a = (1, 1): lhs 2/3, rhs 4/3.
inline CheckResult check_weighted_sampling_worked() {
  CheckResult r("weighted_sampling_worked");
  const std::vector<Eigen::VectorXd> xs{Eigen::VectorXd::Constant(1, 0.0),
                                        Eigen::VectorXd::Constant(1, 1.0),
                                        Eigen::VectorXd::Constant(1, 2.0)};
  const auto res = weighted_sampling_check(xs, {1.0, 1.0});
  r.passed = res.holds && std::abs(res.lhs - 2.0 / 3.0) <= 1e-15 &&
             std::abs(res.rhs - 4.0 / 3.0) <= 1e-15;
  r.detail = "lhs=" + detail::fmt(res.lhs) + " rhs=" + detail::fmt(res.rhs);
  return r;
}

inline CheckResult check_weighted_sampling_random(std::size_t instances = 1000, std::uint64_t seed = 99) {
  CheckResult r("weighted_sampling_random");
  Rng rng(seed);
  std::size_t failures = 0;
  double worst_ratio = 0.0;
  for (std::size_t s = 0; s < instances; ++s) {
    const std::size_t n = 1 + rng.below(6);
    const std::size_t t = 1 + rng.below(n);
    const auto dim = static_cast<Eigen::Index>(1 + rng.below(3));
    std::vector<Eigen::VectorXd> xs;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd v(dim);
      for (Eigen::Index c = 0; c < dim; ++c) v(c) = rng.normal();
      xs.push_back(v);
    }
    std::vector<double> a(t);
    for (auto& w : a) w = rng.uniform() * 2.0;
    const auto res = weighted_sampling_check(xs, a);
    if (!res.holds) ++failures;
    if (res.rhs > 0.0) worst_ratio = std::max(worst_ratio, res.lhs / res.rhs);
  }
  r.passed = failures == 0;
  r.detail = std::to_string(instances) + " instances, " + std::to_string(failures) +
             " violations, max lhs/rhs=" + detail::fmt(worst_ratio);
  return r;
}

/// Largest scaled telescoping residual seen by the optimizer checks so far.
struct TelescopingTally {
  double worst = 0.0;
  std::size_t runs = 0;
  void add(const Trace& t) {
    worst = std::max(worst, t.max_telescoping_scaled);
    ++runs;
  }
};

/// beta = lambda = 0 against the plain reshuffling loop, bitwise, at every epoch.
inline CheckResult check_rr_reduction(const InnerLoop& inner = {}, TelescopingTally* tally = nullptr,
                                      std::size_t configs = 10) {
  CheckResult r("rr_reduction");
  Rng rng(2024);
  std::size_t mismatched = 0;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t n = 10 + rng.below(41);  // 10..50
    const std::size_t d = 1 + rng.below(8);
    const std::uint64_t seed = 100 + c;
    auto problem = c % 2 ? generate_logistic(n, d, seed) : make_quadratic_sum(n, d, seed);
    OptimizerConfig cfg;
    cfg.epochs = 1 + rng.below(50);
    cfg.seed = seed;
    std::vector<std::size_t> divisors;
    for (std::size_t b = 1; b <= n; ++b)
      if (n % b == 0 && b <= 5) divisors.push_back(b);
    cfg.batch = divisors[rng.below(divisors.size())];
    cfg.schedule = c % 3 == 0 ? ScheduleSpec::polynomial(0.6, 0.25) : ScheduleSpec::constant(0.25);
    cfg.schedule.guard = TheoryGuard::Off;
    cfg.x0 = reference::random_point(rng, d, 1.0);
    RunOptions opts;
    opts.keep_permutations = true;
    opts.keep_iterates = true;
    opts.inner = inner;
    try {
      const auto trace = run(problem, cfg, opts);
      if (tally) tally->add(trace);
      std::vector<double> alphas;
      for (const auto& rec : trace.records) alphas.push_back(rec.alpha_k);
      std::vector<double> x0(cfg.x0.data(), cfg.x0.data() + cfg.x0.size());
      const auto xs = reference::plain_rr(problem, trace.permutations, alphas, cfg.batch, x0);
      bool same = xs.size() == trace.iterates.size();
      for (std::size_t k = 0; same && k < xs.size(); ++k)
        for (std::size_t j = 0; j < d; ++j)
          if (xs[k][j] != trace.iterates[k](static_cast<Eigen::Index>(j))) same = false;
      if (!same) ++mismatched;
    } catch (const Error&) {
      ++mismatched;
    }
  }
  r.passed = mismatched == 0;
  r.detail = std::to_string(configs) + " configs, " + std::to_string(mismatched) +
             " not bitwise identical";
  return r;
}

/// Closed-form inner iterate against the loop over beta x lambda.
inline CheckResult check_closed_form(const InnerLoop& inner = {}, TelescopingTally* tally = nullptr,
                                     std::size_t configs = 20) {
  CheckResult r("closed_form_update");
  struct Combo {
    double beta, lambda;
  };
  std::vector<Combo> combos;
  for (double beta : {0.0, 0.5, 0.9})
    for (double lambda : {0.0, beta, max_lambda(beta)}) {
      const bool dup = std::any_of(combos.begin(), combos.end(), [&](const Combo& c) {
        return c.beta == beta && c.lambda == lambda;
      });
      if (!dup) combos.push_back({beta, lambda});
    }
  double worst = 0.0;
  std::size_t failures = 0;
  for (std::size_t c = 0; c < configs; ++c) {
    const auto combo = combos[c % combos.size()];
    const std::size_t n = 4 + 2 * (c % 5);
    auto problem = detail::verification_problem(c, n, 3, 300 + c);
    OptimizerConfig cfg;
    cfg.beta = combo.beta;
    cfg.lambda = combo.lambda;
    cfg.epochs = 8;
    cfg.seed = 7 + c;
    cfg.batch = c % 4 == 3 ? 2 : 1;
    cfg.deep_audit = true;
    cfg.schedule = ScheduleSpec::constant(0.25, TheoryGuard::Off);
    cfg.x0 = Vector::Constant(3, 0.5);
    RunOptions opts;
    opts.inner = inner;
    try {
      const auto trace = run(problem, cfg, opts);
      if (tally) tally->add(trace);
      const double dev = trace.closed_form_deviation.value_or(
          std::numeric_limits<double>::infinity());
      worst = std::max(worst, dev);
      if (!(dev <= 1e-10)) ++failures;
    } catch (const Error&) {
      ++failures;
      worst = std::numeric_limits<double>::infinity();
    }
  }
  r.passed = failures == 0;
  r.detail = std::to_string(configs) + " configs, max relative deviation " +
             detail::fmt(worst) + " (limit 1e-10)";
  return r;
}

inline CheckResult check_telescoping(const TelescopingTally& tally) {
  CheckResult r("telescoping");
  r.passed = tally.runs > 0 && tally.worst <= kAuditTolerance;
  r.detail = std::to_string(tally.runs) + " runs, max scaled residual " +
             detail::fmt(tally.worst) + " (limit 1e-9)";
  return r;
}

/// Exact expectation descent by enumeration: n <= 4, b = 1, T <= 2.
inline CheckResult check_expectation(std::size_t problems = 20) {
  CheckResult r("expectation_descent");
  Rng rng(77);
  double worst = std::numeric_limits<double>::infinity();
  std::size_t failures = 0, sequences = 0;
  for (std::size_t p = 0; p < problems; ++p) {
    const std::size_t n = 2 + rng.below(3);
    auto problem = detail::verification_problem(p, n, 1 + rng.below(3), 500 + p);
    OptimizerConfig cfg;
    const double betas[] = {0.0, 0.5, 0.9};
    cfg.beta = betas[rng.below(3)];
    cfg.lambda = rng.below(2) ? cfg.beta : 0.0;
    cfg.epochs = 1 + rng.below(2);
    cfg.seed = p;
    cfg.schedule = ScheduleSpec::constant(0.25);
    cfg.x0 = reference::random_point(rng, problem.d(), 1.0);
    const auto audit = expectation_audit(problem, cfg);
    sequences += audit.sequences;
    worst = std::min(worst, audit.min_scaled_slack);
    if (!audit.holds || !audit.sampling_holds) ++failures;
  }
  r.passed = failures == 0;
  r.detail = std::to_string(problems) + " problems, " + std::to_string(sequences) +
             " permutation sequences, min scaled slack " + detail::fmt(worst);
  return r;
}

inline CheckResult check_problem_properties() {
  CheckResult r("problem_properties");
  double fd = 0.0, lip = 0.0, lb = 0.0;
  for (std::size_t kind = 0; kind < 3; ++kind) {
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
      auto p = detail::verification_problem(kind, 8, 4, seed);
      const auto g = reference::gradient_check(p, seed);
      const auto s = reference::smoothness_check(p, seed, 30);
      const auto l = reference::lower_bound_check(p, seed, 30);
      fd = std::max(fd, g.worst);
      lip = std::max(lip, s.worst);
      lb = std::max(lb, l.worst);
      if (!g.holds || !s.holds || !l.holds) r.passed = false;
    }
  }
  r.detail = "fd error " + detail::fmt(fd) + ", max gradient ratio/L " + detail::fmt(lip) +
             ", max ||g||^2/(2L gap) " + detail::fmt(lb);
  return r;
}

inline CheckResult check_constants() {
  CheckResult r("theory_constants");
  const double H = theory_constants(1.0, 0.0, 2, 2, 0.5).H;
  const double amax = theory_constants(1.0, 0.0, 1, 1, 0.0).alpha_max;
  const auto T = predicted_epochs(theory_constants(1.0, 0.0, 100, 100, 0.0), 100, 0.1,
                                  RateMode::Expectation);
  r.passed = std::abs(H - 6.0) <= 1e-12 && std::abs(amax - 0.25) <= 1e-12 && T == 100;
  r.detail = "H=" + detail::fmt(H) + " alpha_max=" + detail::fmt(amax) +
             " predicted_epochs=" + std::to_string(T);
  return r;
}

/// Sure descent with guarded schedules on a handful of runs.
inline CheckResult check_descent_sample(TelescopingTally* tally = nullptr) {
  CheckResult r("sure_descent_sample");
  double worst = std::numeric_limits<double>::infinity();
  std::size_t runs = 0;
  for (std::size_t kind = 0; kind < 3; ++kind) {
    for (double beta : {0.0, 0.9}) {
      auto p = detail::verification_problem(kind, 12, 3, 40 + kind);
      OptimizerConfig cfg;
      cfg.beta = beta;
      cfg.lambda = beta;
      cfg.epochs = 60;
      cfg.seed = kind;
      cfg.x0 = Vector::Constant(3, 1.0);
      const auto c = constants(p, cfg);
      cfg.schedule = ScheduleSpec::constant(balanced_constant_alpha(c, 60, RateMode::Expectation));
      const auto trace = run(p, cfg);
      if (tally) tally->add(trace);
      const auto audit = descent_audit(trace);
      worst = std::min(worst, audit.min_scaled);
      if (!audit.holds) r.passed = false;
      ++runs;
    }
  }
  r.detail = std::to_string(runs) + " runs, min scaled residual " + detail::fmt(worst);
  return r;
}

/// Runs every check, prints one line each, returns true iff all passed.
inline bool run_verify_suite(std::ostream& out, const InnerLoop& inner = {},
                             std::vector<CheckResult>* results = nullptr) {
  TelescopingTally tally;
  const std::vector<std::pair<const char*, std::function<CheckResult()>>> checks{
      {"weighted_sampling_worked", [] { return check_weighted_sampling_worked(); }},
      {"weighted_sampling_random", [] { return check_weighted_sampling_random(); }},
      {"rr_reduction", [&] { return check_rr_reduction(inner, &tally); }},
      {"closed_form_update", [&] { return check_closed_form(inner, &tally); }},
      {"sure_descent_sample", [&] { return check_descent_sample(&tally); }},
      {"telescoping", [&] { return check_telescoping(tally); }},
      {"expectation_descent", [] { return check_expectation(); }},
      {"problem_properties", [] { return check_problem_properties(); }},
      {"theory_constants", [] { return check_constants(); }},
  };
  bool all = true;
  for (const auto& [name, check] : checks) {
    CheckResult res(name);
    try {
      res = check();
    } catch (const std::exception& e) {
      res.passed = false;
      res.detail = std::string("exception: ") + e.what();
    }
    out << (res.passed ? "[PASS] " : "[FAIL] ") << res.name << ": " << res.detail << std::endl;
    all = all && res.passed;
    if (results) results->push_back(res);
  }
  return all;
}

}  // namespace rrm::harness
