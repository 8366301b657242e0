#pragma once

// Theory constants and step-size sequences for momentum reshuffling.
//
// Step sizes are written as alpha_k = alpha_max * 4 * alpha_tilde * w(k),
// with alpha_max = (1-beta)(1-beta^m)/(4 L m) and w(k) = 1 (constant) or
// k^-gamma (polynomial). alpha_tilde = 1/4 therefore reproduces alpha_max
// bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "rrm/error.hpp"

namespace rrm {

struct TheoryConstants {
  double L = 0.0;
  double fbar = 0.0;
  std::size_t n = 0;
  std::size_t m = 0;
  double beta = 0.0;
  double beta_m = 0.0;  ///< beta^m
  double H = 0.0;       ///< Lyapunov weight 9 L^2 m / (8 (1-beta)(1-beta^m))
  double D = 0.0;       ///< d_factor / (1-beta^m)^2 * (L / (1-beta))^3
  double d_factor = 10.0;
  double alpha_max = 0.0;  ///< (1-beta)(1-beta^m) / (4 L m)
};

inline TheoryConstants theory_constants(double L, double fbar, std::size_t n,
                                        std::size_t m, double beta,
                                        double d_factor = 10.0) {
  if (!(L > 0.0) || !std::isfinite(L))
    throw InvalidInput("smoothness constant must be positive and finite");
  if (m == 0) throw InvalidInput("m must be >= 1");
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidInput("beta must lie in [0, 1)");
  if (!(d_factor > 0.0)) throw InvalidInput("D factor must be positive");
  TheoryConstants c;
  c.L = L;
  c.fbar = fbar;
  c.n = n;
  c.m = m;
  c.beta = beta;
  c.beta_m = std::pow(beta, static_cast<double>(m));
  const double md = static_cast<double>(m);
  const double one_minus_beta = 1.0 - beta;
  const double one_minus_beta_m = 1.0 - c.beta_m;
  c.H = 9.0 * L * L * md / (8.0 * one_minus_beta * one_minus_beta_m);
  const double ratio = L / one_minus_beta;
  c.D = d_factor / (one_minus_beta_m * one_minus_beta_m) * ratio * ratio * ratio;
  c.d_factor = d_factor;
  c.alpha_max = one_minus_beta * one_minus_beta_m / (4.0 * L * md);
  return c;
}

/// 1 / (1 - beta^m), the momentum penalty in the complexity bounds.
inline double momentum_factor(const TheoryConstants& c) {
  return 1.0 / (1.0 - c.beta_m);
}

// ---------------------------------------------------------------------------

enum class ScheduleKind { Constant, Polynomial, Custom };
enum class TheoryGuard { Strict, Warn, Off };

/// Whether step-size caps and epoch predictions target the in-expectation
/// bounds (uniform reshuffling) or the sure bounds (any permutation order).
enum class RateMode { Expectation, Sure };

inline std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Constant:
      return "constant";
    case ScheduleKind::Polynomial:
      return "polynomial";
    case ScheduleKind::Custom:
      return "custom";
  }
  return "unknown";
}

inline std::string_view to_string(TheoryGuard guard) {
  switch (guard) {
    case TheoryGuard::Strict:
      return "strict";
    case TheoryGuard::Warn:
      return "warn";
    case TheoryGuard::Off:
      return "off";
  }
  return "unknown";
}

inline std::string_view to_string(RateMode mode) {
  return mode == RateMode::Expectation ? "expectation" : "sure";
}

inline ScheduleKind parse_schedule_kind(std::string_view s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "polynomial") return ScheduleKind::Polynomial;
  if (s == "custom") return ScheduleKind::Custom;
  throw InvalidInput("unknown schedule kind '" + std::string(s) + "'");
}

inline TheoryGuard parse_theory_guard(std::string_view s) {
  if (s == "strict") return TheoryGuard::Strict;
  if (s == "warn") return TheoryGuard::Warn;
  if (s == "off") return TheoryGuard::Off;
  throw InvalidInput("unknown theory guard '" + std::string(s) + "'");
}

inline RateMode parse_rate_mode(std::string_view s) {
  if (s == "expectation") return RateMode::Expectation;
  if (s == "sure") return RateMode::Sure;
  throw InvalidInput("unknown rate mode '" + std::string(s) + "'");
}

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::Constant;
  double alpha_tilde = 0.25;
  double gamma = 1.0;
  std::vector<double> values;  ///< Custom: alpha_1, alpha_2, ...
  TheoryGuard guard = TheoryGuard::Strict;
  RateMode mode = RateMode::Expectation;

  static ScheduleSpec constant(double alpha_tilde,
                               TheoryGuard guard = TheoryGuard::Strict) {
    ScheduleSpec s;
    s.kind = ScheduleKind::Constant;
    s.alpha_tilde = alpha_tilde;
    s.guard = guard;
    s.validate();
    return s;
  }

  static ScheduleSpec polynomial(double gamma, double alpha_tilde,
                                 TheoryGuard guard = TheoryGuard::Strict) {
    ScheduleSpec s;
    s.kind = ScheduleKind::Polynomial;
    s.gamma = gamma;
    s.alpha_tilde = alpha_tilde;
    s.guard = guard;
    s.validate();
    return s;
  }

  static ScheduleSpec custom(std::vector<double> values,
                             TheoryGuard guard = TheoryGuard::Strict) {
    ScheduleSpec s;
    s.kind = ScheduleKind::Custom;
    s.values = std::move(values);
    s.guard = guard;
    s.validate();
    return s;
  }

  void validate() const {
    switch (kind) {
      case ScheduleKind::Polynomial:
        if (!(gamma > 1.0 / 3.0 && gamma <= 1.0))
          throw InvalidInput("polynomial exponent gamma must lie in (1/3, 1], got " +
                             std::to_string(gamma));
        [[fallthrough]];
      case ScheduleKind::Constant:
        if (!(alpha_tilde > 0.0) || !std::isfinite(alpha_tilde))
          throw InvalidInput("step size parameter alpha must be positive");
        break;
      case ScheduleKind::Custom:
        if (values.empty()) throw InvalidInput("custom schedule needs values");
        for (std::size_t k = 0; k < values.size(); ++k) {
          if (!(values[k] > 0.0) || !std::isfinite(values[k]))
            throw InvalidInput("custom step sizes must be positive");
          if (k > 0 && values[k] > values[k - 1])
            throw InvalidInput("custom step sizes must be non-increasing");
        }
        break;
    }
  }
};

/// Step size for epoch k >= 1, without guard checks. Custom schedules repeat
/// their last value past the end of the list.
inline double raw_step_size(const ScheduleSpec& spec, const TheoryConstants& c,
                            std::size_t k) {
  if (k == 0) throw InvalidInput("epoch index starts at 1");
  switch (spec.kind) {
    case ScheduleKind::Constant:
      return c.alpha_max * (4.0 * spec.alpha_tilde);
    case ScheduleKind::Polynomial:
      return c.alpha_max * (4.0 * spec.alpha_tilde) /
             std::pow(static_cast<double>(k), spec.gamma);
    case ScheduleKind::Custom:
      return spec.values[std::min(k, spec.values.size()) - 1];
  }
  return 0.0;
}

/// Largest admissible alpha_tilde for the constant / polynomial complexity
/// corollaries at horizon T.
inline double corollary_alpha_cap(const ScheduleSpec& spec,
                                  const TheoryConstants& c, std::size_t T) {
  const double one_minus_beta_m = 1.0 - c.beta_m;
  const double n = static_cast<double>(c.n);
  switch (spec.kind) {
    case ScheduleKind::Constant: {
      const double horizon = one_minus_beta_m * static_cast<double>(T);
      const double cap = spec.mode == RateMode::Expectation
                             ? std::cbrt(n / horizon)
                             : 1.0 / std::cbrt(horizon);
      return std::min(0.25, cap);
    }
    case ScheduleKind::Polynomial: {
      const double g = spec.gamma;
      const double base = (3.0 * g - 1.0) / (3.0 * g * one_minus_beta_m);
      const double cap =
          spec.mode == RateMode::Expectation ? std::cbrt(base * n) : std::cbrt(base);
      return std::min(0.25, cap);
    }
    case ScheduleKind::Custom:
      return 0.25;
  }
  return 0.25;
}

/// alpha_tilde = [n / ((1-beta^m) T)]^(1/3) (expectation) or
/// [(1-beta^m) T]^(-1/3) (sure), capped at 1/4.
inline double balanced_constant_alpha(const TheoryConstants& c, std::size_t T,
                                      RateMode mode) {
  const double horizon = (1.0 - c.beta_m) * static_cast<double>(T);
  const double a = mode == RateMode::Expectation
                       ? std::cbrt(static_cast<double>(c.n) / horizon)
                       : 1.0 / std::cbrt(horizon);
  return std::min(0.25, a);
}

/// Checks the schedule against the admissible range for epochs 1..T+1 (the
/// Lyapunov value at T+1 uses alpha_{T+1}). Returns human-readable problems;
/// throws GuardViolation when the guard is strict and there are any.
inline std::vector<std::string> check_guard(const ScheduleSpec& spec,
                                            const TheoryConstants& c,
                                            std::size_t T) {
  std::vector<std::string> issues;
  if (spec.guard == TheoryGuard::Off) return issues;
  const std::size_t last = spec.kind == ScheduleKind::Custom
                               ? std::min(T + 1, spec.values.size())
                               : 1;
  for (std::size_t k = 1; k <= last; ++k) {
    const double a = raw_step_size(spec, c, k);
    if (a > c.alpha_max) {
      issues.push_back("step size alpha_" + std::to_string(k) + " = " +
                       std::to_string(a) +
                       " exceeds the admissible bound (1-beta)(1-beta^m)/(4Lm) = " +
                       std::to_string(c.alpha_max));
      break;
    }
  }
  if (spec.kind != ScheduleKind::Custom) {
    const double cap = corollary_alpha_cap(spec, c, T);
    if (spec.alpha_tilde > cap * (1.0 + 1e-12))
      issues.push_back("alpha = " + std::to_string(spec.alpha_tilde) +
                       " exceeds the " + std::string(to_string(spec.mode)) +
                       "-mode cap " + std::to_string(cap) + " for T = " +
                       std::to_string(T));
  }
  if (spec.guard == TheoryGuard::Strict && !issues.empty())
    throw GuardViolation(issues.front());
  return issues;
}

/// alpha_k with the guard applied: under a strict guard a step above
/// alpha_max is an error.
inline double step_size(const ScheduleSpec& spec, const TheoryConstants& c,
                        std::size_t k) {
  const double a = raw_step_size(spec, c, k);
  if (spec.guard == TheoryGuard::Strict && a > c.alpha_max)
    throw GuardViolation("step size alpha_" + std::to_string(k) + " = " +
                         std::to_string(a) +
                         " exceeds the admissible bound (1-beta)(1-beta^m)/(4Lm) = " +
                         std::to_string(c.alpha_max));
  return a;
}

/// Step-size conditions for asymptotic convergence: alpha_k <= alpha_max,
/// sum alpha_k = inf, sum alpha_k^3 < inf.
struct ConvergenceConditionReport {
  bool satisfied = false;
  bool within_step_cap = false;
  double partial_sum_alpha = 0.0;
  double partial_sum_alpha_cubed = 0.0;
  std::size_t horizon = 0;
  std::string reason;
};

inline ConvergenceConditionReport check_theorem5_conditions(
    const ScheduleSpec& spec, const TheoryConstants& c, std::size_t horizon) {
  ConvergenceConditionReport r;
  r.horizon = horizon;
  r.within_step_cap = raw_step_size(spec, c, 1) <= c.alpha_max;
  for (std::size_t k = 1; k <= horizon; ++k) {
    const double a = raw_step_size(spec, c, k);
    r.partial_sum_alpha += a;
    r.partial_sum_alpha_cubed += a * a * a;
  }
  switch (spec.kind) {
    case ScheduleKind::Polynomial:
      r.satisfied = r.within_step_cap;
      r.reason = r.satisfied ? "gamma in (1/3, 1]: sum alpha diverges, sum alpha^3 converges"
                             : "first step exceeds alpha_max";
      break;
    case ScheduleKind::Constant:
      r.satisfied = false;
      r.reason = "constant steps: sum alpha^3 diverges";
      break;
    case ScheduleKind::Custom:
      r.satisfied = false;
      r.reason = "finite custom sequence: tail behaviour undetermined";
      break;
  }
  return r;
}

/// Right-hand side of the complexity bound on min_k ||grad f(x^k)||^2 (sure
/// mode) or min_k E||grad f(x^k)||^2 (expectation mode), given
/// f_gap = f(x^1) - fbar.
inline double complexity_bound(const ScheduleSpec& spec, const TheoryConstants& c,
                               std::size_t T, double f_gap) {
  const double a = spec.alpha_tilde;
  const double one_minus_beta_m = 1.0 - c.beta_m;
  const double n_div = spec.mode == RateMode::Expectation ? static_cast<double>(c.n) : 1.0;
  const double Td = static_cast<double>(T);
  switch (spec.kind) {
    case ScheduleKind::Constant:
      return (1.0 / (one_minus_beta_m * a * Td) + 3.0 * a * a / n_div) * 16.0 *
             c.L * f_gap;
    case ScheduleKind::Polynomial: {
      const double g = spec.gamma;
      if (g >= 1.0)
        throw InvalidInput("polynomial rate bound requires gamma < 1");
      const double lead = 1.0 / (one_minus_beta_m * a) +
                          9.0 * g * a * a / ((3.0 * g - 1.0) * n_div);
      return lead * 16.0 * c.L * (1.0 - g) * f_gap /
             (std::pow(Td + 1.0, 1.0 - g) - 1.0);
    }
    case ScheduleKind::Custom:
      throw InvalidInput("no closed-form rate bound for custom schedules");
  }
  return 0.0;
}

/// Smallest epoch count T predicted to reach min_k ||grad f(x^k)|| <= eps.
/// Expectation mode: T n >= L sqrt(n) / ((1-beta^m) eps^2) *
/// max{sqrt(n), sqrt(L)/eps}. Sure mode: [(1-beta^m) T]^(-2/3) <= eps^2,
/// floored at T >= 64 / (1-beta^m).
inline std::size_t predicted_epochs(const TheoryConstants& c, std::size_t n,
                                    double epsilon, RateMode mode) {
  if (!(epsilon > 0.0)) throw InvalidInput("epsilon must be positive");
  const double one_minus_beta_m = 1.0 - c.beta_m;
  const double nd = static_cast<double>(n);
  // Guards against ceil() of a value that should be an exact integer but
  // picked up rounding error on the way.
  auto ceil_loose = [](double v) {
    return static_cast<std::size_t>(std::ceil(v * (1.0 - 1e-12)));
  };
  if (mode == RateMode::Expectation) {
    const double epochs = c.L * std::sqrt(nd) /
                          (one_minus_beta_m * epsilon * epsilon) *
                          std::max(std::sqrt(nd), std::sqrt(c.L) / epsilon) / nd;
    return std::max<std::size_t>(1, ceil_loose(epochs));
  }
  const std::size_t floor_epochs = ceil_loose(64.0 / one_minus_beta_m);
  const std::size_t bound_epochs =
      ceil_loose(1.0 / (one_minus_beta_m * epsilon * epsilon * epsilon));
  return std::max(floor_epochs, bound_epochs);
}

}  // namespace rrm
