#pragma once

// Proxy iterates, the Lyapunov sequence, and audits of the identities and
// inequalities that drive the convergence analysis of momentum reshuffling.
//
//   z^k  = x^k / (1-beta) - beta xtilde^k / (1-beta)
//   R_k  = [f(z^k) - fbar] + H alpha_k ||z^k - x^k||^2
//
// Every audit reports residual = RHS - LHS, so a nonnegative residual means
// the inequality held.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rrm/core.hpp"
#include "rrm/error.hpp"
#include "rrm/problems.hpp"
#include "rrm/sampler.hpp"
#include "rrm/schedules.hpp"

namespace rrm {

/// Slack allowed below zero on an audit residual, relative to `scale`.
inline constexpr double kAuditTolerance = 1e-9;

inline Vector proxy(const Vector& x, const Vector& x_tilde, double beta) {
  if (beta == 0.0) return x;
  return x / (1.0 - beta) - (beta / (1.0 - beta)) * x_tilde;
}

inline double lyapunov(const TheoryConstants& c, double alpha, double f_z,
                       double dist_zx_sq) {
  return (f_z - c.fbar) + c.H * alpha * dist_zx_sq;
}

inline double lyapunov(const FiniteSumProblem& problem, const TheoryConstants& c,
                       double alpha, const Vector& x, const Vector& z) {
  return lyapunov(c, alpha, full_value(problem, z), (z - x).squaredNorm());
}

/// ||(1-beta)(z_next - z) + alpha sum_d||; zero in exact arithmetic.
inline double telescoping_residual(const Vector& z_next, const Vector& z,
                                   const Vector& sum_d, double alpha, double beta) {
  return ((1.0 - beta) * (z_next - z) + alpha * sum_d).norm();
}

inline double telescoping_scale(const Vector& z, const Vector& sum_d, double alpha) {
  return 1.0 + z.norm() + alpha * sum_d.norm();
}

// ---------------------------------------------------------------------------
// Trace

/// Per-epoch measurements at the start of epoch k (x^k, z^k) plus what the
/// epoch did. Proxy-dependent fields are empty when proxy tracking is off;
/// Inner-bound residuals only exist under deep audit.
struct TraceRecord {
  std::size_t k = 0;
  double alpha_k = 0.0;
  double f_x = 0.0;
  double grad_x = 0.0;  ///< ||grad f(x^k)||
  std::optional<double> f_z;
  std::optional<double> grad_z;
  std::optional<double> R_k;
  double dist_zx = 0.0;  ///< ||z^k - x^k||
  Vector sum_d;          ///< sum_i d_i^k
  std::optional<double> sigma2;
  double z_step_sq = 0.0;  ///< ||z^{k+1} - z^k||^2
  /// Telescoping residual divided by 1 + ||z|| + alpha ||sum_d||.
  double residual_telescoping = 0.0;
  /// Unscaled; the contract compares it against 1e-9 (1 + |R_k|).
  std::optional<double> residual_descent;
  /// Inner-iterate bound residuals divided by 1 + RHS.
  std::optional<double> residual_b3;
  std::optional<double> residual_b4;
  double min_grad_sq_so_far = 0.0;
};

struct Trace {
  TheoryConstants constants;
  OptimizerConfig config;
  std::vector<TraceRecord> records;  ///< k = 1..T
  /// Quantities at x^{T+1} (alpha_k is alpha_{T+1}); sum_d stays empty.
  TraceRecord terminal;
  Vector final_x;
  Vector best_x;  ///< argmin over k <= T of ||grad f(x^k)||
  std::size_t best_k = 0;
  std::size_t tail_start = 0;
  std::vector<Vector> tail_iterates;  ///< x^k for k = tail_start..T
  std::vector<Permutation> permutations;
  std::vector<Vector> iterates;  ///< x^1 .. x^{T+1}, only when requested
  std::vector<std::string> guard_warnings;
  /// Largest closed-form vs loop deviation seen (deep audit only).
  std::optional<double> closed_form_deviation;
  double max_telescoping_scaled = 0.0;
};

// ---------------------------------------------------------------------------
// Approximate descent (sure version)

struct DescentAudit {
  std::vector<double> residuals;  ///< residual_k for k = 1..T
  double min_scaled = std::numeric_limits<double>::infinity();
  std::optional<std::size_t> first_violation;
  bool holds = true;
  double sum_alpha_cubed = 0.0;
  /// D m^3 sum alpha^3 <= 1: the complexity bound applies.
  bool rate_precondition = false;
  bool steps_admissible = true;
};

/// residual_k = R_k + Delta(m^3 sum_{i<=T} alpha_i^3) D m^3 alpha_k^3
///   - (1-beta)/(4 m alpha_k) ||z^{k+1}-z^k||^2
///   - m alpha_k/(4(1-beta)) (||grad f(x^k)||^2/4 + ||grad f(z^k)||^2/5)
///   - R_{k+1},   Delta(t) = R_1 exp(D t).
/// Needs every epoch 1..T and the terminal state.
inline DescentAudit descent_audit(const std::vector<TraceRecord>& records,
                                  const TraceRecord& terminal,
                                  const TheoryConstants& c) {
  if (records.empty()) throw AuditUnavailable("descent audit needs a trace");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].k != i + 1)
      throw AuditUnavailable("descent audit needs every epoch (trace is thinned)");
    if (!records[i].R_k || !records[i].grad_z)
      throw AuditUnavailable("descent audit needs proxy quantities");
  }
  if (!terminal.R_k) throw AuditUnavailable("descent audit needs the terminal state");

  DescentAudit audit;
  const double m = static_cast<double>(c.m);
  const double m3 = m * m * m;
  for (const auto& r : records) {
    audit.sum_alpha_cubed += r.alpha_k * r.alpha_k * r.alpha_k;
    if (r.alpha_k > c.alpha_max) audit.steps_admissible = false;
  }
  audit.rate_precondition = c.D * m3 * audit.sum_alpha_cubed <= 1.0;
  const double R1 = *records.front().R_k;
  const double delta = R1 * std::exp(c.D * m3 * audit.sum_alpha_cubed);
  const double one_minus_beta = 1.0 - c.beta;

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const double a = r.alpha_k;
    const double R_next = i + 1 < records.size() ? *records[i + 1].R_k : *terminal.R_k;
    const double rhs =
        *r.R_k + delta * c.D * m3 * a * a * a -
        one_minus_beta / (4.0 * m * a) * r.z_step_sq -
        m * a / (4.0 * one_minus_beta) *
            (0.25 * r.grad_x * r.grad_x + 0.2 * (*r.grad_z) * (*r.grad_z));
    const double residual = rhs - R_next;
    audit.residuals.push_back(residual);
    const double scaled = residual / (1.0 + std::abs(*r.R_k));
    audit.min_scaled = std::min(audit.min_scaled, scaled);
    if (scaled < -kAuditTolerance && !audit.first_violation) {
      audit.first_violation = r.k;
      audit.holds = false;
    }
  }
  return audit;
}

inline DescentAudit descent_audit(const Trace& trace) {
  return descent_audit(trace.records, trace.terminal, trace.constants);
}

// ---------------------------------------------------------------------------
// Per-epoch inner-iterate bounds

/// Quantities of one epoch that the inner-iterate bounds refer to.
struct EpochQuantities {
  Vector x;       ///< x^k
  Vector z;       ///< z^k
  Vector x_next;  ///< x^{k+1}
  Vector z_next;  ///< z^{k+1}
  double f_z = 0.0;
  double grad_z = 0.0;
  double alpha = 0.0;
  double lambda = 0.0;
};

struct InnerBoundAudit {
  double residual_b3 = 0.0;
  double residual_b4 = 0.0;
  double scale_b3 = 1.0;
  double scale_b4 = 1.0;
  bool b3_applicable = false;  ///< alpha <= min{(1-beta)/(sqrt(8) L m), alpha_max}
  bool b4_applicable = false;  ///< alpha <= alpha_max
};

/// (1 - lambda (1-beta)/beta), taken as 1 at beta = 0 where lambda = 0.
inline double extrapolation_coefficient(double beta, double lambda) {
  if (beta == 0.0) return 1.0;
  return 1.0 - lambda * (1.0 - beta) / beta;
}

/// Contraction factor (1 + 2 beta^m) / 3 of the z-x distance recursion.
inline double distance_contraction(const TheoryConstants& c) {
  return (1.0 + 2.0 * c.beta_m) / 3.0;
}

/// Checks
///   sum_t ||yhat_t - z||^2 <= 5m/4 [B ||z-x||^2 + m^2 a^2/(1-beta)^2 ||grad f(z)||^2
///                                   + 3 L m^2 a^2/(1-beta)^2 (f(z) - fbar)]
///   ||z' - x'||^2 <= eta ||z-x||^2
///                    + beta^2 m^2 a^2 {4 ||grad f(z)||^2 + 7 L (f(z)-fbar)}
///                      / ((1-beta)^2 (1-beta^m))
inline InnerBoundAudit appendix_b_audit(const InnerRecords& inner,
                                        const TheoryConstants& c,
                                        const EpochQuantities& q) {
  if (inner.extrapolated.size() != c.m)
    throw AuditUnavailable("inner-iterate audit requires deep records");
  InnerBoundAudit out;
  const double m = static_cast<double>(c.m);
  const double a = q.alpha;
  const double omb = 1.0 - c.beta;
  const double dist_sq = (q.z - q.x).squaredNorm();
  const double gap = q.f_z - c.fbar;
  const double gz2 = q.grad_z * q.grad_z;
  const double B = extrapolation_coefficient(c.beta, q.lambda);

  double lhs3 = 0.0;
  for (const auto& y_hat : inner.extrapolated) lhs3 += (y_hat - q.z).squaredNorm();
  const double coef = m * m * a * a / (omb * omb);
  const double rhs3 = 1.25 * m * (B * dist_sq + coef * gz2 + 3.0 * c.L * coef * gap);
  out.residual_b3 = rhs3 - lhs3;
  out.scale_b3 = 1.0 + rhs3;

  const double eta = distance_contraction(c);
  const double lhs4 = (q.z_next - q.x_next).squaredNorm();
  const double rhs4 = eta * dist_sq + c.beta * c.beta * coef *
                                          (4.0 * gz2 + 7.0 * c.L * gap) /
                                          (1.0 - c.beta_m);
  out.residual_b4 = rhs4 - lhs4;
  out.scale_b4 = 1.0 + rhs4;

  out.b4_applicable = a <= c.alpha_max;
  out.b3_applicable = out.b4_applicable && a <= omb / (std::sqrt(8.0) * c.L * m);
  return out;
}

// ---------------------------------------------------------------------------
// Exact expectation over uniform reshuffling

struct ExpectationAudit {
  std::size_t sequences = 0;
  std::vector<double> expected_R;        ///< E[R_k], k = 1..T+1
  std::vector<double> expected_grad_sq;  ///< E||grad f(x^k)||^2, k = 1..T
  std::vector<double> slack;             ///< RHS_k - E[R_{k+1}], k = 1..T
  double min_scaled_slack = std::numeric_limits<double>::infinity();
  bool holds = true;
  std::size_t sampling_checks = 0;
  bool sampling_holds = true;
};

inline constexpr std::size_t kExpectationBudget = 2'000'000;

/// Enumerates every sequence of T permutations (equal weight) with b = 1 and
/// checks
///   E[R_{k+1}] <= E[R_k] - m alpha_k/(16(1-beta)) E||grad f(x^k)||^2
///                + Delta((m^2/b) sum alpha^3) (D m^2/b) alpha_k^3.
/// At every state an epoch starts from it also checks the weighted-sampling bound on
/// the component gradients at z^k with unit and geometric weights.
inline ExpectationAudit expectation_audit(const FiniteSumProblem& problem,
                                          const OptimizerConfig& config) {
  validate(config, problem.n());
  const std::size_t n = problem.n();
  const std::size_t T = config.epochs;
  if (config.batch != 1) throw SizeLimit("expectation audit requires b = 1");
  if (n > 6 || T > 3)
    throw SizeLimit("expectation audit requires n <= 6 and T <= 3");
  const auto perms = enumerate_permutations(n);
  double leaves = 1.0;
  for (std::size_t k = 0; k < T; ++k) leaves *= static_cast<double>(perms.size());
  if (leaves > static_cast<double>(kExpectationBudget))
    throw SizeLimit("(n!)^T = " + std::to_string(static_cast<long long>(leaves)) +
                    " permutation sequences exceed the enumeration budget");

  const TheoryConstants c = constants(problem, config);
  check_guard(config.schedule, c, T);
  std::vector<double> alphas(T + 1);
  for (std::size_t k = 1; k <= T + 1; ++k)
    alphas[k - 1] = raw_step_size(config.schedule, c, k);

  ExpectationAudit audit;
  audit.sequences = static_cast<std::size_t>(leaves);
  audit.expected_R.assign(T + 1, 0.0);
  audit.expected_grad_sq.assign(T, 0.0);

  std::vector<double> geometric(c.m);
  for (std::size_t t = 1; t <= c.m; ++t)
    geometric[t - 1] = std::pow(c.beta, static_cast<double>(c.m - t));
  const std::vector<double> unit(n, 1.0);
  std::vector<Vector> component_grads(n);

  auto visit = [&](auto&& self, const EpochState& state, double weight) -> void {
    const std::size_t k = state.epoch;
    const Vector z = proxy(state.x, state.x_tilde, config.beta);
    audit.expected_R[k - 1] +=
        weight * lyapunov(problem, c, alphas[k - 1], state.x, z);
    if (k > T) return;
    for (std::size_t i = 0; i < n; ++i) component_grads[i] = problem.gradient(i, z);
    const std::array<const std::vector<double>*, 2> weightings{&unit, &geometric};
    for (const auto* w : weightings) {
      const auto check = weighted_sampling_check(component_grads, *w);
      ++audit.sampling_checks;
      audit.sampling_holds = audit.sampling_holds && check.holds;
    }
    audit.expected_grad_sq[k - 1] +=
        weight * full_gradient(problem, state.x).squaredNorm();
    const double child_weight = weight / static_cast<double>(perms.size());
    for (const auto& perm : perms) {
      auto step = run_inner_loop(problem, config, state, perm, alphas[k - 1], false);
      self(self, step.next, child_weight);
    }
  };
  visit(visit, initial_state(problem, config), 1.0);

  const double m = static_cast<double>(c.m);
  const double b = 1.0;
  double sum_cubed = 0.0;
  for (std::size_t k = 0; k < T; ++k) sum_cubed += alphas[k] * alphas[k] * alphas[k];
  const double delta = audit.expected_R[0] * std::exp(c.D * m * m / b * sum_cubed);
  for (std::size_t k = 1; k <= T; ++k) {
    const double a = alphas[k - 1];
    const double rhs = audit.expected_R[k - 1] -
                       m * a / (16.0 * (1.0 - c.beta)) * audit.expected_grad_sq[k - 1] +
                       delta * c.D * m * m / b * a * a * a;
    const double slack = rhs - audit.expected_R[k];
    audit.slack.push_back(slack);
    const double scaled = slack / (1.0 + std::abs(audit.expected_R[k - 1]));
    audit.min_scaled_slack = std::min(audit.min_scaled_slack, scaled);
    if (scaled < -kAuditTolerance) audit.holds = false;
  }
  return audit;
}

// ---------------------------------------------------------------------------
// Rates and tail behaviour

struct RateWindow {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  RateWindow window;
  std::size_t points = 0;
};

/// Least-squares line through (log k, log value).
inline RateFit fit_power_law(const std::vector<double>& ks,
                             const std::vector<double>& values) {
  if (ks.size() != values.size()) throw InvalidInput("fit inputs differ in length");
  if (ks.size() < 10) throw DegenerateWindow("rate fit needs at least 10 points");
  const double count = static_cast<double>(ks.size());
  double mx = 0.0, my = 0.0;
  std::vector<double> lx(ks.size()), ly(ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (!(ks[i] > 0.0) || !(values[i] > 0.0) || !std::isfinite(values[i]))
      throw DegenerateWindow("rate fit needs positive finite values");
    lx[i] = std::log(ks[i]);
    ly[i] = std::log(values[i]);
    mx += lx[i];
    my += ly[i];
  }
  mx /= count;
  my /= count;
  const bool flat = std::all_of(ly.begin(), ly.end(), [&](double v) { return v == ly.front(); });
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw DegenerateWindow("rate fit window has a single abscissa");
  RateFit fit;
  fit.slope = flat ? 0.0 : sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.points = ks.size();
  if (flat || syy == 0.0) {
    fit.intercept = ly.front();
    fit.r2 = 1.0;
  } else {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double e = ly[i] - (fit.intercept + fit.slope * lx[i]);
      ss_res += e * e;
    }
    fit.r2 = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

/// Log-log slope of the running minimum of ||grad f(x^k)||^2 over the
/// records with lo <= k <= hi.
inline RateFit fit_rate(const std::vector<TraceRecord>& records, RateWindow window) {
  if (window.lo == 0 || window.hi < window.lo)
    throw DegenerateWindow("rate window must satisfy 1 <= lo <= hi");
  if (window.hi - window.lo + 1 < 10)
    throw DegenerateWindow("rate window must span at least 10 epochs");
  if (records.empty() || window.hi > records.back().k || window.lo < records.front().k)
    throw DegenerateWindow("rate window lies outside the trace");
  std::vector<double> ks, values;
  for (const auto& r : records) {
    if (r.k < window.lo || r.k > window.hi) continue;
    ks.push_back(static_cast<double>(r.k));
    values.push_back(r.min_grad_sq_so_far);
  }
  auto fit = fit_power_law(ks, values);
  fit.window = window;
  return fit;
}

inline RateFit fit_rate(const Trace& trace, RateWindow window) {
  return fit_rate(trace.records, window);
}

struct ConvergenceSummary {
  std::size_t tail_start = 0;
  double grad_tail_max = 0.0;  ///< max ||grad f(x^k)|| over the last decile
  double dist_tail_max = 0.0;  ///< max ||z^k - x^k|| over the last decile
  double dist_head_max = 0.0;  ///< same over the first decile
  std::optional<double> cauchy_tail;  ///< sup_{k,l in tail} ||x^k - x^l||
};

/// First epoch of the last decile, ceil(0.9 T), at least 1.
inline std::size_t tail_start_epoch(std::size_t T) {
  return std::max<std::size_t>(1, (9 * T + 9) / 10);
}

inline ConvergenceSummary convergence_summary(const std::vector<TraceRecord>& records,
                                              const std::vector<Vector>& tail_iterates,
                                              std::size_t T) {
  if (records.empty()) throw AuditUnavailable("empty trace");
  ConvergenceSummary s;
  s.tail_start = tail_start_epoch(T);
  const std::size_t head_end = std::max<std::size_t>(1, T / 10);
  for (const auto& r : records) {
    if (r.k >= s.tail_start) {
      s.grad_tail_max = std::max(s.grad_tail_max, r.grad_x);
      s.dist_tail_max = std::max(s.dist_tail_max, r.dist_zx);
    }
    if (r.k <= head_end) s.dist_head_max = std::max(s.dist_head_max, r.dist_zx);
  }
  if (!tail_iterates.empty()) {
    double worst = 0.0;
    for (std::size_t i = 0; i < tail_iterates.size(); ++i)
      for (std::size_t j = i + 1; j < tail_iterates.size(); ++j)
        worst = std::max(worst, (tail_iterates[i] - tail_iterates[j]).norm());
    s.cauchy_tail = worst;
  }
  return s;
}

inline ConvergenceSummary convergence_summary(const Trace& trace) {
  return convergence_summary(trace.records, trace.tail_iterates,
                             trace.config.epochs);
}

}  // namespace rrm
