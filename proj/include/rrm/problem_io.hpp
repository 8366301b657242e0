#pragma once

// Problems as JSON: {kind, n, d, rows_per_component, seed, smoothness,
// lower_bound, design: [[...], ...], targets: [...]}. Loading rebuilds the
// problem through the regular factories, so L is recomputed, not trusted.

#include <nlohmann/json.hpp>

#include <fstream>
#include <string>

#include "rrm/error.hpp"
#include "rrm/problems.hpp"

namespace rrm {

inline nlohmann::json problem_to_json(const FiniteSumProblem& problem) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(problem.kind()));
  j["n"] = problem.n();
  j["d"] = problem.d();
  j["rows_per_component"] = problem.rows_per_component();
  j["seed"] = problem.seed ? nlohmann::json(*problem.seed) : nlohmann::json(nullptr);
  j["smoothness"] = problem.smoothness();
  j["lower_bound"] = problem.lower_bound();
  auto& design = j["design"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < problem.design().rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < problem.design().cols(); ++c)
      row.push_back(problem.design()(r, c));
    design.push_back(std::move(row));
  }
  auto& targets = j["targets"] = nlohmann::json::array();
  for (Eigen::Index r = 0; r < problem.targets().size(); ++r)
    targets.push_back(problem.targets()(r));
  return j;
}

inline FiniteSumProblem problem_from_json(const nlohmann::json& j) {
  try {
    const auto kind = parse_problem_kind(j.at("kind").get<std::string>());
    const auto& design = j.at("design");
    const auto& targets = j.at("targets");
    if (!design.is_array() || design.empty())
      throw InvalidInput("problem file: design must be a non-empty array");
    const auto rows = static_cast<Eigen::Index>(design.size());
    const auto cols = static_cast<Eigen::Index>(design.front().size());
    Matrix A(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& row = design[static_cast<std::size_t>(r)];
      if (static_cast<Eigen::Index>(row.size()) != cols)
        throw InvalidInput("problem file: ragged design matrix");
      for (Eigen::Index c = 0; c < cols; ++c)
        A(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    Vector t(static_cast<Eigen::Index>(targets.size()));
    for (Eigen::Index r = 0; r < t.size(); ++r)
      t(r) = targets[static_cast<std::size_t>(r)].get<double>();

    FiniteSumProblem problem = [&] {
      switch (kind) {
        case ProblemKind::QuadraticSum:
          return make_quadratic(std::move(A), std::move(t),
                                j.value("rows_per_component", std::size_t{1}));
        case ProblemKind::LogisticRegression:
          return make_logistic(std::move(A), std::move(t));
        case ProblemKind::RobustRegressionGM:
          return make_robust_gm(std::move(A), std::move(t));
      }
      throw InvalidInput("problem file: unknown kind");
    }();
    if (j.contains("seed") && !j["seed"].is_null())
      problem.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("n") && j["n"].get<std::size_t>() != problem.n())
      throw InvalidInput("problem file: n does not match the data");
    return problem;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("problem file: ") + e.what());
  }
}

inline void save_problem(const FiniteSumProblem& problem, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << problem_to_json(problem).dump(1) << '\n';
}

inline FiniteSumProblem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read problem file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("problem file " + path + ": " + e.what());
  }
  return problem_from_json(j);
}

}  // namespace rrm
