// Acceptance gate: one [PASS]/[FAIL] line per criterion, exit 0 iff all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "rrm/diagnostics.hpp"
#include "rrm/harness/output.hpp"
#include "rrm/harness/verify.hpp"
#include "rrm/run.hpp"

using namespace rrm;
using namespace rrm::harness;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

TelescopingTally g_tally;

Outcome from_check(const CheckResult& r) { return {r.passed, r.detail}; }

Outcome criterion_rr_reduction() { return from_check(check_rr_reduction({}, &g_tally, 10)); }

Outcome criterion_closed_form() { return from_check(check_closed_form({}, &g_tally, 20)); }

Outcome criterion_weighted_sampling() {
  const auto worked = check_weighted_sampling_worked();
  const auto random = check_weighted_sampling_random(1000);
  return {worked.passed && random.passed, worked.detail + "; " + random.detail};
}

// 3 kinds x (beta, lambda) in {(0,0), (.5,0), (.5,.5), (.9,0), (.9,.9)} x
// {constant, polynomial 0.6}, T = 200, strict guard, D factor 10.
Outcome criterion_sure_descent() {
  const std::vector<std::pair<double, double>> momenta{
      {0.0, 0.0}, {0.5, 0.0}, {0.5, 0.5}, {0.9, 0.0}, {0.9, 0.9}};
  std::size_t runs = 0, failures = 0;
  double worst = std::numeric_limits<double>::infinity();
  std::string first;
  for (std::size_t kind = 0; kind < 3; ++kind) {
    for (const auto& [beta, lambda] : momenta) {
      for (bool poly : {false, true}) {
        auto p = rrm::harness::detail::verification_problem(kind, 20, 4, 900 + kind);
        OptimizerConfig cfg;
        cfg.beta = beta;
        cfg.lambda = lambda;
        cfg.epochs = 200;
        cfg.seed = 31 * runs + 1;
        cfg.d_factor = 10.0;
        cfg.x0 = Vector::Constant(4, 1.0);
        auto c = constants(p, cfg);
        if (poly) {
          cfg.schedule = ScheduleSpec::polynomial(0.6, 0.25);
          cfg.schedule.alpha_tilde = corollary_alpha_cap(cfg.schedule, c, cfg.epochs);
        } else {
          cfg.schedule = ScheduleSpec::constant(
              balanced_constant_alpha(c, cfg.epochs, RateMode::Expectation));
        }
        cfg.schedule.guard = TheoryGuard::Strict;
        ++runs;
        try {
          const auto trace = run(p, cfg);
          g_tally.add(trace);
          const auto audit = descent_audit(trace);
          worst = std::min(worst, audit.min_scaled);
          if (!audit.holds || !audit.steps_admissible) {
            ++failures;
            if (first.empty())
              first = "kind " + std::to_string(kind) + " beta " + format_double(beta) +
                      " epoch " + std::to_string(audit.first_violation.value_or(0));
          }
        } catch (const std::exception& e) {
          ++failures;
          if (first.empty()) first = e.what();
        }
      }
    }
  }
  std::string detail = std::to_string(runs) + " runs, " + std::to_string(failures) +
                       " with a residual below -1e-9 scale, min scaled residual " +
                       format_double(worst);
  if (!first.empty()) detail += "; first: " + first;
  return {failures == 0 && runs == 30, detail};
}

Outcome criterion_telescoping() { return from_check(check_telescoping(g_tally)); }

Outcome criterion_expectation() { return from_check(check_expectation(20)); }

// Quadratic n = 100, d = 20, beta = 0.9, constant alpha_tilde at its cap
// min{1/4, [n/((1-beta^m) T)]^(1/3)}, T = 2000, slope over [500, 2000].
Outcome criterion_rate() {
  auto p = make_quadratic_sum(100, 20, 7, 20, 0.01);
  OptimizerConfig cfg;
  cfg.beta = 0.9;
  cfg.lambda = 0.0;
  cfg.epochs = 2000;
  cfg.seed = 1;
  cfg.track_proxy = false;
  const auto c = constants(p, cfg);
  const double balanced = std::cbrt(100.0 / ((1.0 - c.beta_m) * 2000.0));
  cfg.schedule = ScheduleSpec::constant(balanced_constant_alpha(c, 2000, RateMode::Expectation));
  const auto trace = run(p, cfg);
  const auto fit = fit_rate(trace, {500, 2000});
  return {fit.slope <= -0.55,
          "slope " + format_double(fit.slope) + " (limit -0.55, target -2/3), r2 " +
              format_double(fit.r2) + ", alpha_tilde " + format_double(cfg.schedule.alpha_tilde) +
              " (uncapped " + format_double(balanced) + ")"};
}

// Logistic n = 200, polynomial gamma = 0.6, T = 5000.
Outcome criterion_global_convergence() {
  auto p = generate_logistic(200, 2, 1, 0.3, true);
  OptimizerConfig cfg;
  cfg.beta = 0.5;
  cfg.lambda = 0.0;
  cfg.epochs = 5000;
  cfg.seed = 1;
  cfg.schedule = ScheduleSpec::polynomial(0.6, 0.25);
  const auto trace = run(p, cfg);
  g_tally.add(trace);
  const auto s = convergence_summary(trace);
  return {s.grad_tail_max <= 1e-3 && s.dist_tail_max <= 1e-4,
          "last-decile max ||grad f|| " + format_double(s.grad_tail_max) +
              " (limit 1e-3), max ||z - x|| " + format_double(s.dist_tail_max) +
              " (limit 1e-4)"};
}

// Geman-McClure regression n = 100, gamma = 0.6, T = 5000, seeds 1..5.
Outcome criterion_last_iterate() {
  bool ok = true;
  std::string detail = "cauchy tail per seed:";
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = generate_robust_gm(100, 2, seed, 0.1, true, 0.5);
    OptimizerConfig cfg;
    cfg.beta = 0.5;
    cfg.epochs = 5000;
    cfg.seed = seed;
    cfg.schedule = ScheduleSpec::polynomial(0.6, 0.25);
    const auto trace = run(p, cfg);
    g_tally.add(trace);
    const double tail = *convergence_summary(trace).cauchy_tail;
    ok = ok && tail <= 1e-3;
    detail += " " + format_double(tail);
  }
  return {ok, detail + " (limit 1e-3)"};
}

Outcome criterion_constants() { return from_check(check_constants()); }

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> body;
  };
  // Telescoping is reported after every run that feeds it.
  const std::vector<Criterion> criteria{
      {1, "rr_reduction_bitwise", criterion_rr_reduction},
      {2, "closed_form_update", criterion_closed_form},
      {4, "weighted_sampling_bound", criterion_weighted_sampling},
      {5, "sure_descent_30_runs", criterion_sure_descent},
      {6, "expected_descent_enumeration", criterion_expectation},
      {7, "rate_slope", criterion_rate},
      {8, "global_convergence_logistic", criterion_global_convergence},
      {9, "last_iterate_robust_gm", criterion_last_iterate},
      {3, "telescoping_identity", criterion_telescoping},
      {10, "theory_constants", criterion_constants},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d %s: %s [%.2fs]\n", o.passed ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.passed;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
