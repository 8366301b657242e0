#pragma once

// Finite-sum objectives f(x) = (1/n) sum_i f_i(x) with analytic component
// gradients, a common smoothness constant L valid for every f_i, and a lower
// bound fbar valid for every f_i.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "rrm/error.hpp"
#include "rrm/random.hpp"

namespace rrm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ProblemKind { QuadraticSum, LogisticRegression, RobustRegressionGM };

inline std::string_view to_string(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::QuadraticSum:
      return "quadratic";
    case ProblemKind::LogisticRegression:
      return "logistic";
    case ProblemKind::RobustRegressionGM:
      return "robust_gm";
  }
  return "unknown";
}

inline ProblemKind parse_problem_kind(std::string_view name) {
  if (name == "quadratic") return ProblemKind::QuadraticSum;
  if (name == "logistic") return ProblemKind::LogisticRegression;
  if (name == "robust_gm") return ProblemKind::RobustRegressionGM;
  throw InvalidInput("unknown problem kind '" + std::string(name) + "'");
}

namespace detail {

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

/// 1 / (1 + exp(-t)) without overflow.
inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// Largest eigenvalue of the PSD matrix M by power iteration. The stopping
/// threshold on the Rayleigh-quotient change is kept far below the 1e-10
/// target accuracy since slow convergence also means small per-step changes.
inline double power_iteration(const Matrix& M, double step_tol = 1e-15,
                              int max_iter = 200000) {
  const Eigen::Index d = M.rows();
  if (d == 0) return 0.0;
  Vector v = Vector::Ones(d);
  // Break symmetry so v is not orthogonal to the top eigenvector by accident.
  for (Eigen::Index j = 0; j < d; ++j) v(j) += 1e-3 * static_cast<double>(j);
  v.normalize();
  double rho = v.dot(M * v);
  for (int it = 0; it < max_iter; ++it) {
    Vector w = M * v;
    const double norm = w.stableNorm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    const double next = v.dot(M * v);
    const bool done = std::abs(next - rho) <= step_tol * std::abs(next);
    rho = next;
    if (done) break;
  }
  return rho;
}

}  // namespace detail

class FiniteSumProblem {
 public:
  /// `design` stacks the per-component blocks: component i owns rows
  /// [i*rows_per_component, (i+1)*rows_per_component).
  FiniteSumProblem(ProblemKind kind, Matrix design, Vector targets,
                   std::size_t rows_per_component, double smoothness,
                   double lower_bound)
      : kind_(kind),
        design_(std::move(design)),
        targets_(std::move(targets)),
        rows_(rows_per_component),
        n_(rows_per_component == 0
               ? 0
               : static_cast<std::size_t>(design_.rows()) / rows_per_component),
        smoothness_(smoothness),
        lower_bound_(lower_bound) {}

  ProblemKind kind() const noexcept { return kind_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t d() const noexcept { return static_cast<std::size_t>(design_.cols()); }
  std::size_t rows_per_component() const noexcept { return rows_; }
  double smoothness() const noexcept { return smoothness_; }
  double lower_bound() const noexcept { return lower_bound_; }
  const Matrix& design() const noexcept { return design_; }
  const Vector& targets() const noexcept { return targets_; }

  /// Seed the data was generated from, when it was generated.
  std::optional<std::uint64_t> seed;

  double value(std::size_t i, const Vector& x) const {
    switch (kind_) {
      case ProblemKind::QuadraticSum: {
        const auto block = component_rows(i);
        const Vector r = block * x - component_targets(i);
        return 0.5 * r.squaredNorm();
      }
      case ProblemKind::LogisticRegression: {
        const double margin = targets_(row(i)) * design_.row(row(i)).dot(x);
        return detail::softplus(-margin);
      }
      case ProblemKind::RobustRegressionGM: {
        const double r = design_.row(row(i)).dot(x) - targets_(row(i));
        const double r2 = r * r;
        return r2 / (1.0 + r2);
      }
    }
    return 0.0;
  }

  void gradient(std::size_t i, const Vector& x, Eigen::Ref<Vector> out) const {
    switch (kind_) {
      case ProblemKind::QuadraticSum: {
        const auto block = component_rows(i);
        out.noalias() = block.transpose() * (block * x - component_targets(i));
        return;
      }
      case ProblemKind::LogisticRegression: {
        const std::size_t r = row(i);
        const double label = targets_(r);
        const double margin = label * design_.row(r).dot(x);
        out = (-label * detail::sigmoid(-margin)) * design_.row(r).transpose();
        return;
      }
      case ProblemKind::RobustRegressionGM: {
        const std::size_t r = row(i);
        const double res = design_.row(r).dot(x) - targets_(r);
        const double denom = 1.0 + res * res;
        out = (2.0 * res / (denom * denom)) * design_.row(r).transpose();
        return;
      }
    }
  }

  Vector gradient(std::size_t i, const Vector& x) const {
    Vector g(design_.cols());
    gradient(i, x, g);
    return g;
  }

 private:
  std::size_t row(std::size_t i) const { return i * rows_; }

  Eigen::Block<const Matrix> component_rows(std::size_t i) const {
    return design_.middleRows(static_cast<Eigen::Index>(i * rows_),
                              static_cast<Eigen::Index>(rows_));
  }

  Eigen::VectorBlock<const Vector> component_targets(std::size_t i) const {
    return targets_.segment(static_cast<Eigen::Index>(i * rows_),
                            static_cast<Eigen::Index>(rows_));
  }

  ProblemKind kind_;
  Matrix design_;
  Vector targets_;
  std::size_t rows_;
  std::size_t n_;
  double smoothness_;
  double lower_bound_;
};

// ---------------------------------------------------------------------------
// Construction from explicit data

/// f_i(x) = 1/2 ||A_i x - b_i||^2 where A_i is the i-th block of
/// `rows_per_component` rows. L = max_i lambda_max(A_i^T A_i), fbar = 0.
inline FiniteSumProblem make_quadratic(Matrix design, Vector targets,
                                       std::size_t rows_per_component) {
  if (rows_per_component == 0 || design.rows() == 0 || design.cols() == 0)
    throw InvalidInput("quadratic problem needs n, d >= 1");
  if (design.rows() % static_cast<Eigen::Index>(rows_per_component) != 0)
    throw InvalidInput("design rows must be a multiple of rows_per_component");
  if (targets.size() != design.rows())
    throw InvalidInput("target count must match design rows");
  if (!design.allFinite() || !targets.allFinite())
    throw InvalidInput("quadratic data must be finite");
  const auto rows = static_cast<Eigen::Index>(rows_per_component);
  double L = 0.0;
  for (Eigen::Index start = 0; start < design.rows(); start += rows) {
    const Matrix block = design.middleRows(start, rows);
    L = std::max(L, detail::power_iteration(block.transpose() * block));
  }
  if (!(L > 0.0)) throw InvalidInput("quadratic problem has zero curvature");
  return {ProblemKind::QuadraticSum, std::move(design), std::move(targets),
          rows_per_component, L, 0.0};
}

/// f_i(x) = log(1 + exp(-y_i <a_i, x>)), L = max_i ||a_i||^2 / 4, fbar = 0.
inline FiniteSumProblem make_logistic(Matrix design, Vector labels) {
  if (design.rows() == 0 || design.cols() == 0)
    throw InvalidInput("logistic problem needs n, d >= 1");
  if (labels.size() != design.rows())
    throw InvalidInput("label count must match design rows");
  if (!design.allFinite()) throw InvalidInput("design rows must be finite");
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) != 1.0 && labels(i) != -1.0)
      throw InvalidInput("label " + std::to_string(labels(i)) + " at row " +
                         std::to_string(i) + " is not in {-1, +1}");
  }
  double L = design.rowwise().squaredNorm().maxCoeff() / 4.0;
  // An all-zero design makes every f_i constant; any positive L is valid.
  if (L == 0.0) L = 1.0;
  return {ProblemKind::LogisticRegression, std::move(design), std::move(labels),
          1, L, 0.0};
}

/// Geman-McClure regression: f_i(x) = r^2 / (1 + r^2), r = <a_i, x> - t_i.
/// The scalar loss has |second derivative| <= 2, so L = 2 max_i ||a_i||^2.
inline FiniteSumProblem make_robust_gm(Matrix design, Vector targets) {
  if (design.rows() == 0 || design.cols() == 0)
    throw InvalidInput("robust regression needs n, d >= 1");
  if (targets.size() != design.rows())
    throw InvalidInput("target count must match design rows");
  if (!design.allFinite() || !targets.allFinite())
    throw InvalidInput("robust regression data must be finite");
  double L = 2.0 * design.rowwise().squaredNorm().maxCoeff();
  if (L == 0.0) L = 1.0;
  return {ProblemKind::RobustRegressionGM, std::move(design), std::move(targets),
          1, L, 0.0};
}

// ---------------------------------------------------------------------------
// Seeded generators

namespace detail {
inline constexpr std::uint64_t kDataStream = 0xda7a;
}

/// Consistent least squares: b_i = A_i x* for a planted x*, so f(x*) = 0.
/// Entries of A are N(0, 1/rows); column j is scaled by
/// `column_decay^(j/(d-1))` so the spectrum of the average Hessian spreads
/// over [column_decay^2, 1] (column_decay = 1 gives an isotropic design).
inline FiniteSumProblem make_quadratic_sum(std::size_t n, std::size_t d,
                                           std::uint64_t seed,
                                           std::size_t rows_per_component = 0,
                                           double column_decay = 1.0) {
  if (n == 0 || d == 0) throw InvalidInput("quadratic sum needs n, d >= 1");
  if (!(column_decay > 0.0) || column_decay > 1.0)
    throw InvalidInput("column_decay must lie in (0, 1]");
  const std::size_t rows = rows_per_component == 0 ? d : rows_per_component;
  Rng rng(substream_seed(seed, detail::kDataStream));
  const auto total = static_cast<Eigen::Index>(n * rows);
  const auto dim = static_cast<Eigen::Index>(d);
  Matrix A(total, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
  for (Eigen::Index r = 0; r < total; ++r)
    for (Eigen::Index c = 0; c < dim; ++c) A(r, c) = scale * rng.normal();
  if (column_decay < 1.0 && d > 1) {
    for (Eigen::Index c = 0; c < dim; ++c)
      A.col(c) *= std::pow(column_decay, static_cast<double>(c) /
                                             static_cast<double>(d - 1));
  }
  Vector planted(dim);
  for (Eigen::Index c = 0; c < dim; ++c) planted(c) = rng.normal();
  Vector b = A * planted;
  auto problem = make_quadratic(std::move(A), std::move(b), rows);
  problem.seed = seed;
  return problem;
}

namespace detail {
/// Gaussian design; with `unit_rows` every row is scaled to unit norm so the
/// worst-case per-component L equals the typical one.
inline Matrix gaussian_design(Rng& rng, Eigen::Index rows, Eigen::Index dim,
                              bool unit_rows) {
  Matrix A(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < dim; ++c) A(r, c) = rng.normal();
  if (unit_rows) A.rowwise().normalize();
  return A;
}
}  // namespace detail

/// Gaussian features, labels from a planted linear model with a fraction
/// `label_noise` of labels flipped (keeps the data non-separable).
inline FiniteSumProblem generate_logistic(std::size_t n, std::size_t d,
                                          std::uint64_t seed,
                                          double label_noise = 0.1,
                                          bool unit_rows = false) {
  if (n == 0 || d == 0) throw InvalidInput("logistic problem needs n, d >= 1");
  if (!(label_noise >= 0.0 && label_noise <= 1.0))
    throw InvalidInput("label noise must lie in [0, 1]");
  Rng rng(substream_seed(seed, detail::kDataStream));
  const auto rows = static_cast<Eigen::Index>(n);
  const auto dim = static_cast<Eigen::Index>(d);
  Matrix A = detail::gaussian_design(rng, rows, dim, unit_rows);
  Vector planted(dim);
  for (Eigen::Index c = 0; c < dim; ++c) planted(c) = rng.normal();
  Vector labels(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double label = A.row(r).dot(planted) >= 0.0 ? 1.0 : -1.0;
    if (rng.uniform() < label_noise) label = -label;
    labels(r) = label;
  }
  auto problem = make_logistic(std::move(A), std::move(labels));
  problem.seed = seed;
  return problem;
}

/// Linear model with Gaussian noise plus a fraction `outlier_fraction` of
/// gross outliers in the targets. The planted coefficients are
/// N(0, signal_scale^2 I).
inline FiniteSumProblem generate_robust_gm(std::size_t n, std::size_t d,
                                           std::uint64_t seed,
                                           double outlier_fraction = 0.1,
                                           bool unit_rows = false,
                                           double signal_scale = 1.0) {
  if (n == 0 || d == 0) throw InvalidInput("robust regression needs n, d >= 1");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0))
    throw InvalidInput("outlier fraction must lie in [0, 1]");
  Rng rng(substream_seed(seed, detail::kDataStream));
  const auto rows = static_cast<Eigen::Index>(n);
  const auto dim = static_cast<Eigen::Index>(d);
  Matrix A = detail::gaussian_design(rng, rows, dim, unit_rows);
  Vector planted(dim);
  for (Eigen::Index c = 0; c < dim; ++c) planted(c) = signal_scale * rng.normal();
  Vector targets = A * planted;
  for (Eigen::Index r = 0; r < rows; ++r) {
    targets(r) += 0.1 * rng.normal();
    if (rng.uniform() < outlier_fraction) targets(r) += 10.0 * rng.normal();
  }
  auto problem = make_robust_gm(std::move(A), std::move(targets));
  problem.seed = seed;
  return problem;
}

// ---------------------------------------------------------------------------
// Whole-sum evaluation

inline double full_value(const FiniteSumProblem& problem, const Vector& x) {
  double sum = 0.0;
  for (std::size_t i = 0; i < problem.n(); ++i) sum += problem.value(i, x);
  const double v = sum / static_cast<double>(problem.n());
  if (!std::isfinite(v)) throw NumericOverflow("objective value is not finite");
  return v;
}

inline Vector full_gradient(const FiniteSumProblem& problem, const Vector& x) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(problem.d()));
  Vector g(sum.size());
  for (std::size_t i = 0; i < problem.n(); ++i) {
    problem.gradient(i, x, g);
    sum += g;
  }
  sum /= static_cast<double>(problem.n());
  if (!sum.allFinite()) throw NumericOverflow("full gradient is not finite");
  return sum;
}

/// Population variance of the component gradients:
/// (1/n) sum_t ||grad f_t(x) - grad f(x)||^2.
inline double component_variance(const FiniteSumProblem& problem,
                                 const Vector& x) {
  const Vector mean = full_gradient(problem, x);
  Vector g(mean.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < problem.n(); ++i) {
    problem.gradient(i, x, g);
    sum += (g - mean).squaredNorm();
  }
  return sum / static_cast<double>(problem.n());
}

/// Everything the per-epoch diagnostics need at one point, in one pass over
/// the components.
struct PointEvaluation {
  double value = 0.0;
  Vector gradient;
  double variance = 0.0;
};

inline PointEvaluation evaluate_point(const FiniteSumProblem& problem,
                                      const Vector& x, bool with_variance) {
  const auto n = problem.n();
  const auto dim = static_cast<Eigen::Index>(problem.d());
  PointEvaluation out;
  out.value = full_value(problem, x);
  if (!with_variance) {
    out.gradient = full_gradient(problem, x);
    return out;
  }
  Matrix grads(dim, static_cast<Eigen::Index>(n));
  Vector sum = Vector::Zero(dim);
  for (std::size_t i = 0; i < n; ++i) {
    problem.gradient(i, x, grads.col(static_cast<Eigen::Index>(i)));
    sum += grads.col(static_cast<Eigen::Index>(i));
  }
  out.gradient = sum / static_cast<double>(n);
  if (!out.gradient.allFinite())
    throw NumericOverflow("full gradient is not finite");
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    var += (grads.col(static_cast<Eigen::Index>(i)) - out.gradient).squaredNorm();
  out.variance = var / static_cast<double>(n);
  return out;
}

}  // namespace rrm
