#pragma once

// Random reshuffling with momentum. One epoch processes the n components in
// m = n/b mini-batches following the permutation pi^k:
//
//   yhat_i  = y_i + lambda (y_i - y_{i-1})            extrapolation
//   d_i     = (1/b) sum_{j in batch i} grad f_{pi_j}(yhat_i)
//   y_{i+1} = y_i - alpha_k d_i + beta (y_i - y_{i-1})  momentum
//
// with y_0 = xtilde^k, y_1 = x^k, and the epoch hands over
// xtilde^{k+1} = y_m, x^{k+1} = y_{m+1}. lambda = 0 is heavy ball,
// lambda = beta is Nesterov, beta = lambda = 0 is plain reshuffling.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rrm/error.hpp"
#include "rrm/problems.hpp"
#include "rrm/sampler.hpp"
#include "rrm/schedules.hpp"

namespace rrm {

struct OptimizerConfig {
  double beta = 0.0;
  double lambda = 0.0;
  std::size_t batch = 1;
  std::size_t epochs = 1;
  ScheduleSpec schedule;
  std::uint64_t seed = 0;
  StrategyKind strategy = StrategyKind::UniformReshuffle;
  /// Keep every inner yhat_i, d_i, y_{i+1} for the per-epoch audits.
  bool deep_audit = false;
  /// Evaluate f and grad f at the proxy point every epoch. Without it the
  /// Lyapunov value and all audits are unavailable.
  bool track_proxy = true;
  double d_factor = 10.0;
  /// Starting point x^1 = xtilde^1; empty means the origin.
  Vector x0;
};

inline double max_lambda(double beta) { return beta / (1.0 - beta); }

inline void validate(const OptimizerConfig& config, std::size_t n) {
  if (!(config.beta >= 0.0 && config.beta < 1.0))
    throw ConfigError("beta must lie in [0, 1)");
  if (!(config.lambda >= 0.0))
    throw ConfigError("lambda must be nonnegative");
  if (config.beta == 0.0 && config.lambda != 0.0)
    throw ConfigError("lambda must be 0 when beta = 0");
  if (config.lambda * (1.0 - config.beta) > config.beta * (1.0 + 1e-12))
    throw ConfigError("lambda must not exceed beta/(1-beta)");
  if (config.batch == 0 || n % config.batch != 0)
    throw ConfigError("b must divide n (n = " + std::to_string(n) +
                      ", b = " + std::to_string(config.batch) + ")");
  if (config.epochs == 0) throw ConfigError("epoch budget T must be >= 1");
  if (!(config.d_factor > 0.0)) throw ConfigError("D factor must be positive");
  config.schedule.validate();
}

inline TheoryConstants constants(const FiniteSumProblem& problem,
                                 const OptimizerConfig& config) {
  validate(config, problem.n());
  return theory_constants(problem.smoothness(), problem.lower_bound(),
                          problem.n(), problem.n() / config.batch, config.beta,
                          config.d_factor);
}

struct EpochState {
  std::size_t epoch = 1;  ///< k
  Vector x;               ///< x^k
  Vector x_tilde;         ///< xtilde^k
};

inline EpochState initial_state(const FiniteSumProblem& problem,
                                const OptimizerConfig& config) {
  Vector x0 = config.x0.size() == 0
                  ? Vector::Zero(static_cast<Eigen::Index>(problem.d()))
                  : config.x0;
  if (static_cast<std::size_t>(x0.size()) != problem.d())
    throw ConfigError("starting point has the wrong dimension");
  return {1, x0, x0};
}

/// (1/b) sum_{j=(i-1)b+1}^{ib} grad f_{pi_j}(point), accumulated in ascending
/// j. `i` is 1-based.
inline void minibatch_gradient(const FiniteSumProblem& problem,
                               const Permutation& permutation, std::size_t i,
                               std::size_t b, const Vector& point,
                               Eigen::Ref<Vector> out, Vector& scratch) {
  if (b == 0 || i == 0 || i * b > permutation.size())
    throw InvalidInput("mini-batch index " + std::to_string(i) +
                       " out of range");
  const std::size_t first = (i - 1) * b;
  problem.gradient(permutation[first], point, out);
  for (std::size_t j = first + 1; j < first + b; ++j) {
    problem.gradient(permutation[j], point, scratch);
    out += scratch;
  }
  if (b > 1) out /= static_cast<double>(b);
}

inline Vector minibatch_gradient(const FiniteSumProblem& problem,
                                 const Permutation& permutation, std::size_t i,
                                 std::size_t b, const Vector& point) {
  Vector out(static_cast<Eigen::Index>(problem.d()));
  Vector scratch(out.size());
  minibatch_gradient(problem, permutation, i, b, point, out, scratch);
  return out;
}

/// What one epoch produced beyond the next state. The per-step vectors are
/// filled only when requested.
struct InnerRecords {
  Vector sum_directions;            ///< sum_i d_i
  std::vector<Vector> extrapolated;  ///< yhat_1 .. yhat_m
  std::vector<Vector> directions;    ///< d_1 .. d_m
  std::vector<Vector> iterates;      ///< y_2 .. y_{m+1}
};

struct EpochResult {
  EpochState next;
  InnerRecords records;
};

inline EpochResult run_inner_loop(const FiniteSumProblem& problem,
                                  const OptimizerConfig& config,
                                  const EpochState& state,
                                  const Permutation& permutation, double alpha,
                                  bool keep_inner) {
  if (!(alpha > 0.0)) throw InvalidInput("step size must be positive");
  if (permutation.size() != problem.n())
    throw InvalidInput("permutation length must equal n");
  const std::size_t b = config.batch;
  const std::size_t m = problem.n() / b;
  const double beta = config.beta;
  const double lambda = config.lambda;

  Vector y_prev = state.x_tilde;
  Vector y = state.x;
  Vector y_hat(y.size());
  Vector d(y.size());
  Vector y_next(y.size());
  Vector scratch(y.size());

  EpochResult result;
  InnerRecords& rec = result.records;
  rec.sum_directions = Vector::Zero(y.size());
  if (keep_inner) {
    rec.extrapolated.reserve(m);
    rec.directions.reserve(m);
    rec.iterates.reserve(m);
  }

  for (std::size_t i = 1; i <= m; ++i) {
    y_hat = y + lambda * (y - y_prev);
    minibatch_gradient(problem, permutation, i, b, y_hat, d, scratch);
    y_next = y - alpha * d + beta * (y - y_prev);
    if (!y_next.allFinite() || !d.allFinite())
      throw NumericAbort(state.epoch, i, "iterate diverged");
    rec.sum_directions += d;
    if (keep_inner) {
      rec.extrapolated.push_back(y_hat);
      rec.directions.push_back(d);
      rec.iterates.push_back(y_next);
    }
    y_prev.swap(y);
    y.swap(y_next);
  }
  result.next.epoch = state.epoch + 1;
  result.next.x_tilde = std::move(y_prev);
  result.next.x = std::move(y);
  return result;
}

/// y_{i+1} written directly in terms of the epoch's start:
/// x - alpha sum_{t<=i} (1-beta^{i-t+1})/(1-beta) d_t
///   + beta (1-beta^i)/(1-beta) (x - xtilde).
inline Vector closed_form_inner(const EpochState& state, double beta,
                                double alpha, std::size_t i,
                                std::span<const Vector> directions) {
  if (i == 0 || i > directions.size())
    throw InvalidInput("closed form needs 1 <= i <= number of directions");
  Vector sum = Vector::Zero(state.x.size());
  for (std::size_t t = 1; t <= i; ++t) {
    const double weight =
        (1.0 - std::pow(beta, static_cast<double>(i - t + 1))) / (1.0 - beta);
    sum += weight * directions[t - 1];
  }
  const double carry =
      beta * (1.0 - std::pow(beta, static_cast<double>(i))) / (1.0 - beta);
  return state.x - alpha * sum + carry * (state.x - state.x_tilde);
}

/// max_i ||closed form - y_{i+1}|| / (1 + ||x^k||) over one epoch.
inline double closed_form_deviation(const EpochState& state, double beta,
                                    double alpha, const InnerRecords& records) {
  if (records.iterates.size() != records.directions.size() ||
      records.iterates.empty())
    throw AuditUnavailable("closed-form check needs inner iterates");
  double worst = 0.0;
  const double scale = 1.0 + state.x.norm();
  for (std::size_t i = 1; i <= records.iterates.size(); ++i) {
    const Vector closed = closed_form_inner(state, beta, alpha, i, records.directions);
    worst = std::max(worst, (closed - records.iterates[i - 1]).norm() / scale);
  }
  return worst;
}

}  // namespace rrm
