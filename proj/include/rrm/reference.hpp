#pragma once

// Independent oracles used by the test suite and `rrm verify`: a plain
// reshuffling loop on std::vector, finite-difference gradient checks, and
// sampled audits of the smoothness assumptions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "rrm/problems.hpp"
#include "rrm/random.hpp"
#include "rrm/sampler.hpp"

namespace rrm::reference {

/// Plain random reshuffling, x <- x - alpha (1/b) sum grad f_j(x), written
/// without the momentum machinery. Returns x^1..x^{T+1}.
inline std::vector<std::vector<double>> plain_rr(
    const FiniteSumProblem& problem, const std::vector<Permutation>& perms,
    const std::vector<double>& alphas, std::size_t b,
    std::vector<double> x) {
  const std::size_t d = problem.d();
  const std::size_t m = problem.n() / b;
  std::vector<std::vector<double>> out{x};
  Vector point(static_cast<Eigen::Index>(d));
  std::vector<double> dir(d);
  for (std::size_t k = 0; k < perms.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < d; ++c) point(static_cast<Eigen::Index>(c)) = x[c];
      for (std::size_t j = 0; j < b; ++j) {
        const Vector g = problem.gradient(perms[k][i * b + j], point);
        for (std::size_t c = 0; c < d; ++c) {
          const double gc = g(static_cast<Eigen::Index>(c));
          dir[c] = j == 0 ? gc : dir[c] + gc;
        }
      }
      if (b > 1)
        for (auto& v : dir) v /= static_cast<double>(b);
      for (std::size_t c = 0; c < d; ++c) x[c] = x[c] - alphas[k] * dir[c];
    }
    out.push_back(x);
  }
  return out;
}

inline Vector random_point(Rng& rng, std::size_t d, double radius) {
  Vector x(static_cast<Eigen::Index>(d));
  for (Eigen::Index c = 0; c < x.size(); ++c) x(c) = radius * rng.normal();
  return x;
}

struct PropertyReport {
  std::size_t samples = 0;
  double worst = 0.0;  ///< largest observed violation measure
  bool holds = true;
};

/// Central differences with h = 1e-6 (1 + ||x||); relative error
/// ||fd - g|| / max(1, ||g||) <= tol.
inline PropertyReport gradient_check(const FiniteSumProblem& problem,
                                     std::uint64_t seed, std::size_t samples = 100,
                                     double radius = 1.0, double tol = 1e-5) {
  Rng rng(seed);
  PropertyReport r;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto i = static_cast<std::size_t>(rng.below(problem.n()));
    const Vector x = random_point(rng, problem.d(), radius);
    const Vector g = problem.gradient(i, x);
    const double h = 1e-6 * (1.0 + x.norm());
    Vector fd(g.size());
    Vector xp = x, xm = x;
    for (Eigen::Index c = 0; c < x.size(); ++c) {
      xp(c) = x(c) + h;
      xm(c) = x(c) - h;
      fd(c) = (problem.value(i, xp) - problem.value(i, xm)) / (2.0 * h);
      xp(c) = xm(c) = x(c);
    }
    const double err = (fd - g).norm() / std::max(1.0, g.norm());
    r.worst = std::max(r.worst, err);
    if (err > tol) r.holds = false;
    ++r.samples;
  }
  return r;
}

/// ||grad f_i(x) - grad f_i(y)|| <= L ||x - y|| (1 + 1e-12) on random pairs.
/// `worst` is the largest observed ratio over L.
inline PropertyReport smoothness_check(const FiniteSumProblem& problem,
                                       std::uint64_t seed, std::size_t samples = 100,
                                       double radius = 1.0) {
  Rng rng(seed);
  PropertyReport r;
  const double L = problem.smoothness();
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector x = random_point(rng, problem.d(), radius);
    const Vector y = x + random_point(rng, problem.d(), radius * rng.uniform());
    const double dist = (x - y).norm();
    for (std::size_t i = 0; i < problem.n(); ++i) {
      const double diff = (problem.gradient(i, x) - problem.gradient(i, y)).norm();
      if (dist > 0.0) r.worst = std::max(r.worst, diff / (L * dist));
      if (diff > L * dist * (1.0 + 1e-12)) r.holds = false;
    }
    ++r.samples;
  }
  return r;
}

/// f_i(x) >= fbar and ||grad f_i(x)||^2 <= 2 L (f_i(x) - fbar) (1 + 1e-12) at
/// random points. `worst` is the largest observed ratio of the two sides.
inline PropertyReport lower_bound_check(const FiniteSumProblem& problem,
                                        std::uint64_t seed, std::size_t samples = 100,
                                        double radius = 1.0) {
  Rng rng(seed);
  PropertyReport r;
  const double L = problem.smoothness();
  const double fbar = problem.lower_bound();
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector x = random_point(rng, problem.d(), radius);
    for (std::size_t i = 0; i < problem.n(); ++i) {
      const double gap = problem.value(i, x) - fbar;
      const double g2 = problem.gradient(i, x).squaredNorm();
      if (gap < 0.0) r.holds = false;
      if (gap > 0.0) r.worst = std::max(r.worst, g2 / (2.0 * L * gap));
      if (g2 > 2.0 * L * gap * (1.0 + 1e-12)) r.holds = false;
    }
    ++r.samples;
  }
  return r;
}

}  // namespace rrm::reference
