#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rrm/core.hpp"
#include "rrm/diagnostics.hpp"
#include "rrm/error.hpp"
#include "rrm/problems.hpp"
#include "rrm/sampler.hpp"
#include "rrm/schedules.hpp"

namespace rrm {

using InnerLoop = std::function<EpochResult(
    const FiniteSumProblem&, const OptimizerConfig&, const EpochState&,
    const Permutation&, double, bool)>;

struct RunOptions {
  /// Keep the permutation of every epoch in the trace (for replay files).
  bool keep_permutations = false;
  /// Keep x^1 .. x^{T+1}.
  bool keep_iterates = false;
  /// Replaces run_inner_loop; only the mutation tests set this.
  InnerLoop inner;
};

namespace detail {

struct PointStats {
  double value = 0.0;
  Vector gradient;
  double variance = 0.0;
};

inline PointStats measure(const FiniteSumProblem& problem, const Vector& x,
                          bool with_variance, std::size_t epoch) {
  try {
    auto e = evaluate_point(problem, x, with_variance);
    return {e.value, std::move(e.gradient), e.variance};
  } catch (const NumericOverflow& err) {
    throw NumericAbort(epoch, 0, err.what());
  }
}

}  // namespace detail

/// Runs T epochs and records one TraceRecord per epoch, plus the state at
/// x^{T+1}. When proxy tracking is on, the sure descent residuals are filled
/// in after the run (they depend on the whole step-size horizon).
inline Trace run(const FiniteSumProblem& problem, const OptimizerConfig& config,
                 const RunOptions& options = {}) {
  validate(config, problem.n());
  if (config.deep_audit && !config.track_proxy)
    throw ConfigError("deep audit requires proxy tracking");

  Trace trace;
  trace.config = config;
  trace.constants = constants(problem, config);
  const TheoryConstants& c = trace.constants;
  const std::size_t T = config.epochs;
  trace.guard_warnings = check_guard(config.schedule, c, T);
  trace.tail_start = tail_start_epoch(T);
  trace.records.reserve(T);

  const PermutationStrategy strategy{config.strategy, config.seed, problem.n()};
  const double beta = config.beta;
  EpochState state = initial_state(problem, config);
  double best_grad_sq = std::numeric_limits<double>::infinity();

  auto describe_point = [&](TraceRecord& rec, const Vector& x, const Vector& z,
                            std::size_t k) {
    const bool same = beta == 0.0;
    auto at_x = detail::measure(problem, x, config.track_proxy && same, k);
    rec.f_x = at_x.value;
    rec.grad_x = at_x.gradient.norm();
    rec.dist_zx = (z - x).norm();
    if (!config.track_proxy) return;
    if (same) {
      rec.f_z = at_x.value;
      rec.grad_z = rec.grad_x;
      rec.sigma2 = at_x.variance;
    } else {
      auto at_z = detail::measure(problem, z, true, k);
      rec.f_z = at_z.value;
      rec.grad_z = at_z.gradient.norm();
      rec.sigma2 = at_z.variance;
    }
    rec.R_k = lyapunov(c, rec.alpha_k, *rec.f_z, rec.dist_zx * rec.dist_zx);
  };

  for (std::size_t k = 1; k <= T; ++k) {
    TraceRecord rec;
    rec.k = k;
    rec.alpha_k = step_size(config.schedule, c, k);
    const Vector z = proxy(state.x, state.x_tilde, beta);
    describe_point(rec, state.x, z, k);

    const double grad_sq = rec.grad_x * rec.grad_x;
    if (grad_sq < best_grad_sq) {
      best_grad_sq = grad_sq;
      trace.best_x = state.x;
      trace.best_k = k;
    }
    rec.min_grad_sq_so_far = best_grad_sq;
    if (k >= trace.tail_start) trace.tail_iterates.push_back(state.x);

    auto perm = next_permutation(strategy, k);
    if (options.keep_iterates) trace.iterates.push_back(state.x);
    auto epoch = options.inner
                     ? options.inner(problem, config, state, perm, rec.alpha_k,
                                     config.deep_audit)
                     : run_inner_loop(problem, config, state, perm, rec.alpha_k,
                                      config.deep_audit);
    const Vector z_next = proxy(epoch.next.x, epoch.next.x_tilde, beta);
    rec.sum_d = epoch.records.sum_directions;
    rec.z_step_sq = (z_next - z).squaredNorm();
    rec.residual_telescoping =
        telescoping_residual(z_next, z, rec.sum_d, rec.alpha_k, beta) /
        telescoping_scale(z, rec.sum_d, rec.alpha_k);
    trace.max_telescoping_scaled =
        std::max(trace.max_telescoping_scaled, rec.residual_telescoping);

    if (config.deep_audit) {
      const double dev = closed_form_deviation(state, beta, rec.alpha_k, epoch.records);
      trace.closed_form_deviation = std::max(trace.closed_form_deviation.value_or(0.0), dev);
      EpochQuantities q{state.x,    z,           epoch.next.x, z_next,
                        *rec.f_z,   *rec.grad_z, rec.alpha_k,  config.lambda};
      const auto inner = appendix_b_audit(epoch.records, c, q);
      rec.residual_b3 = inner.residual_b3 / inner.scale_b3;
      rec.residual_b4 = inner.residual_b4 / inner.scale_b4;
    }
    if (options.keep_permutations) trace.permutations.push_back(std::move(perm));
    trace.records.push_back(std::move(rec));
    state = std::move(epoch.next);
  }

  trace.terminal.k = T + 1;
  trace.terminal.alpha_k = raw_step_size(config.schedule, c, T + 1);
  const Vector z_final = proxy(state.x, state.x_tilde, beta);
  describe_point(trace.terminal, state.x, z_final, T + 1);
  trace.terminal.min_grad_sq_so_far = best_grad_sq;
  trace.final_x = state.x;
  if (options.keep_iterates) trace.iterates.push_back(state.x);

  if (config.track_proxy) {
    const auto audit = descent_audit(trace);
    for (std::size_t i = 0; i < trace.records.size(); ++i)
      trace.records[i].residual_descent = audit.residuals[i];
  }
  return trace;
}

}  // namespace rrm
