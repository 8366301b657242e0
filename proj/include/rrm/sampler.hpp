#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "rrm/error.hpp"
#include "rrm/random.hpp"

namespace rrm {

using Permutation = std::vector<std::size_t>;

enum class StrategyKind {
  UniformReshuffle,
  ShuffleOnce,
  FixedIncremental,
  WithReplacement,
};

inline std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::UniformReshuffle:
      return "reshuffle";
    case StrategyKind::ShuffleOnce:
      return "shuffle_once";
    case StrategyKind::FixedIncremental:
      return "incremental";
    case StrategyKind::WithReplacement:
      return "with_replacement";
  }
  return "unknown";
}

inline StrategyKind parse_strategy_kind(std::string_view name) {
  if (name == "reshuffle") return StrategyKind::UniformReshuffle;
  if (name == "shuffle_once") return StrategyKind::ShuffleOnce;
  if (name == "incremental") return StrategyKind::FixedIncremental;
  if (name == "with_replacement") return StrategyKind::WithReplacement;
  throw InvalidInput("unknown permutation strategy '" + std::string(name) + "'");
}

/// Per-epoch index order. Output for epoch k depends only on
/// (kind, seed, n, k), so epochs can be regenerated independently.
struct PermutationStrategy {
  StrategyKind kind = StrategyKind::UniformReshuffle;
  std::uint64_t seed = 0;
  std::size_t n = 1;
};

/// In-place Fisher-Yates, swapping position i with a uniform draw from
/// [0, i] for i = n-1 down to 1.
inline void fisher_yates(Permutation& p, Rng& rng) {
  for (std::size_t i = p.size(); i-- > 1;) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(p[i], p[j]);
  }
}

/// Indices are 0-based. `epoch` is 1-based.
inline Permutation next_permutation(const PermutationStrategy& strategy,
                                    std::size_t epoch) {
  if (epoch == 0) throw InvalidInput("epoch index starts at 1");
  if (strategy.n == 0) throw InvalidInput("strategy needs n >= 1");
  Permutation p(strategy.n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  switch (strategy.kind) {
    case StrategyKind::FixedIncremental:
      return p;
    case StrategyKind::ShuffleOnce: {
      Rng rng(substream_seed(strategy.seed, 1));
      fisher_yates(p, rng);
      return p;
    }
    case StrategyKind::UniformReshuffle: {
      Rng rng(substream_seed(strategy.seed, epoch));
      fisher_yates(p, rng);
      return p;
    }
    case StrategyKind::WithReplacement: {
      Rng rng(substream_seed(strategy.seed, epoch));
      for (auto& idx : p) idx = static_cast<std::size_t>(rng.below(strategy.n));
      return p;
    }
  }
  return p;
}

inline bool is_bijection(const Permutation& p) {
  std::vector<bool> seen(p.size(), false);
  for (auto idx : p) {
    if (idx >= p.size() || seen[idx]) return false;
    seen[idx] = true;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Enumeration utilities for exact expectations over uniform sampling

inline constexpr std::size_t kMaxEnumerationN = 8;

/// All ordered t-tuples of distinct indices from [0, n), in lexicographic
/// order. Count is n!/(n-t)!.
inline std::vector<std::vector<std::size_t>> enumerate_ordered_tuples(
    std::size_t n, std::size_t t) {
  if (n > kMaxEnumerationN)
    throw SizeLimit("enumeration limited to n <= 8, got n = " +
                    std::to_string(n));
  if (t == 0 || t > n)
    throw InvalidInput("tuple length must satisfy 1 <= t <= n");
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> current;
  std::vector<bool> used(n, false);
  auto recurse = [&](auto&& self) -> void {
    if (current.size() == t) {
      out.push_back(current);
      return;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      used[i] = true;
      current.push_back(i);
      self(self);
      current.pop_back();
      used[i] = false;
    }
  };
  recurse(recurse);
  return out;
}

inline std::vector<Permutation> enumerate_permutations(std::size_t n) {
  return enumerate_ordered_tuples(n, n);
}

struct WeightedSamplingResult {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// Exact check of E||sum_i a_i X_{pi_i} - (sum_i a_i) Xbar||^2 <= ||a||^2
/// sigma^2 for pi drawn uniformly without replacement, by enumerating every
/// ordered tuple.
inline WeightedSamplingResult weighted_sampling_check(
    const std::vector<Eigen::VectorXd>& samples,
    const std::vector<double>& weights) {
  const std::size_t n = samples.size();
  const std::size_t t = weights.size();
  if (n == 0) throw InvalidInput("weighted sampling needs at least one vector");
  for (double a : weights)
    if (a < 0.0 || !std::isfinite(a))
      throw InvalidInput("weights must be finite and nonnegative");
  const auto dim = samples.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& x : samples) {
    if (x.size() != dim) throw InvalidInput("sample dimensions differ");
    mean += x;
  }
  mean /= static_cast<double>(n);
  double variance = 0.0;
  for (const auto& x : samples) variance += (x - mean).squaredNorm();
  variance /= static_cast<double>(n);

  const double weight_sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  double weight_sq = 0.0;
  for (double a : weights) weight_sq += a * a;

  const auto tuples = enumerate_ordered_tuples(n, t);
  double total = 0.0;
  Eigen::VectorXd acc(dim);
  for (const auto& tuple : tuples) {
    acc = -weight_sum * mean;
    for (std::size_t i = 0; i < t; ++i) acc += weights[i] * samples[tuple[i]];
    total += acc.squaredNorm();
  }
  WeightedSamplingResult result;
  result.lhs = total / static_cast<double>(tuples.size());
  result.rhs = weight_sq * variance;
  result.holds = result.lhs <= result.rhs + 1e-12 * (1.0 + result.rhs);
  return result;
}

}  // namespace rrm
