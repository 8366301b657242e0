#pragma once

// Experiment configuration: flat `section.key = value` text, '#' comments.
//
//   problem.kind = logistic        # quadratic | logistic | robust_gm
//   problem.n = 200
//   optimizer.beta = 0.5
//   schedule.kind = polynomial
//   audit.descent = true
//
// Unknown keys are errors so typos do not silently fall back to defaults.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rrm/core.hpp"
#include "rrm/diagnostics.hpp"
#include "rrm/error.hpp"
#include "rrm/problem_io.hpp"
#include "rrm/problems.hpp"
#include "rrm/schedules.hpp"

namespace rrm::harness {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& origin) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  return parse_key_values(in, path);
}

/// Typed access to a KeyValues map that remembers which keys were consumed.
class ConfigReader {
 public:
  explicit ConfigReader(const KeyValues& kv) : kv_(kv) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double real(const std::string& key, double fallback) {
    if (!has(key)) return used_.insert(key), fallback;
    return parse_real(key, text(key, ""));
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return used_.insert(key), fallback;
    return parse_integer(key, text(key, ""));
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return used_.insert(key), fallback;
    const std::string v = text(key, "");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
  }

  /// Throws on any key that was never read, except those under `ignored`.
  void reject_unknown(const std::vector<std::string>& ignored_prefixes = {}) const {
    for (const auto& [key, value] : kv_) {
      if (used_.count(key)) continue;
      const bool ignored = std::any_of(
          ignored_prefixes.begin(), ignored_prefixes.end(),
          [&](const std::string& p) { return key.rfind(p, 0) == 0; });
      if (!ignored) throw ConfigError("unknown config key '" + key + "'");
    }
  }

  static double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto res = std::from_chars(v.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end)
      throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
  }

  static std::uint64_t parse_integer(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto res = std::from_chars(v.data(), end, out);
    if (res.ec != std::errc() || res.ptr != end)
      throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    return out;
  }

 private:
  const KeyValues& kv_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------

struct ProblemSpec {
  ProblemKind kind = ProblemKind::QuadraticSum;
  std::size_t n = 10;
  std::size_t d = 5;
  std::uint64_t seed = 0;
  std::size_t rows = 0;        ///< quadratic rows per component (0 = d)
  double column_decay = 1.0;   ///< quadratic
  double noise = 0.1;          ///< logistic label flips / robust outlier fraction
  bool unit_rows = false;      ///< logistic, robust
  double signal_scale = 1.0;   ///< robust
  std::string file;            ///< explicit data, overrides the generator
};

struct AuditSelection {
  bool telescoping = true;
  bool descent = true;
  bool appendix_b = false;
  bool expectation = false;
  bool rate = false;
  bool convergence = true;
  /// Empty means [max(1, T/4), T].
  std::optional<RateWindow> rate_window;
  std::optional<double> rate_max_slope;
  std::optional<double> grad_tail_max;
  std::optional<double> dist_tail_max;
  std::optional<double> cauchy_tail_max;
};

struct OutputSpec {
  std::string dir = "out";
  std::size_t record_every = 1;
  bool dump_permutations = false;
  bool dump_problem = false;
};

/// How alpha_tilde was requested: a number or one of the balanced choices.
enum class AlphaChoice { Explicit, Auto, AutoSure };

struct ExperimentConfig {
  ProblemSpec problem;
  OptimizerConfig optimizer;
  AlphaChoice alpha_choice = AlphaChoice::Explicit;
  /// `optimizer.lambda = beta` or `max` resolve against beta at build time.
  std::string lambda_text = "0";
  double init = 0.0;
  AuditSelection audits;
  OutputSpec output;
  KeyValues source;  ///< raw key-values, echoed into the manifest
};

inline double resolve_lambda(const std::string& text, double beta) {
  if (text == "beta") return beta;
  if (text == "max") return beta == 0.0 ? 0.0 : max_lambda(beta);
  return ConfigReader::parse_real("optimizer.lambda", text);
}

inline FiniteSumProblem build_problem(const ProblemSpec& spec) {
  if (!spec.file.empty()) return load_problem(spec.file);
  switch (spec.kind) {
    case ProblemKind::QuadraticSum:
      return make_quadratic_sum(spec.n, spec.d, spec.seed, spec.rows, spec.column_decay);
    case ProblemKind::LogisticRegression:
      return generate_logistic(spec.n, spec.d, spec.seed, spec.noise, spec.unit_rows);
    case ProblemKind::RobustRegressionGM:
      return generate_robust_gm(spec.n, spec.d, spec.seed, spec.noise, spec.unit_rows,
                                spec.signal_scale);
  }
  throw ConfigError("unknown problem kind");
}

/// Builds an ExperimentConfig. `base_dir` resolves relative problem files.
/// Keys under `ignored_prefixes` (e.g. "sweep.") are left to the caller.
inline ExperimentConfig parse_experiment(const KeyValues& kv,
                                         const std::filesystem::path& base_dir = {},
                                         const std::vector<std::string>& ignored_prefixes = {}) {
  ExperimentConfig cfg;
  cfg.source = kv;
  ConfigReader r(kv);
  try {
    auto& p = cfg.problem;
    p.kind = parse_problem_kind(r.text("problem.kind", "quadratic"));
    p.n = r.integer("problem.n", p.n);
    p.d = r.integer("problem.d", p.d);
    p.seed = r.integer("problem.seed", p.seed);
    p.rows = r.integer("problem.rows", p.rows);
    p.column_decay = r.real("problem.column_decay", p.column_decay);
    p.noise = r.real("problem.noise", p.noise);
    p.unit_rows = r.boolean("problem.unit_rows", p.unit_rows);
    p.signal_scale = r.real("problem.signal_scale", p.signal_scale);
    p.file = r.text("problem.file", "");
    if (!p.file.empty() && std::filesystem::path(p.file).is_relative() && !base_dir.empty())
      p.file = (base_dir / p.file).string();

    auto& o = cfg.optimizer;
    o.beta = r.real("optimizer.beta", 0.0);
    cfg.lambda_text = r.text("optimizer.lambda", "0");
    o.lambda = resolve_lambda(cfg.lambda_text, o.beta);
    o.batch = r.integer("optimizer.batch", 1);
    o.epochs = r.integer("optimizer.epochs", 100);
    o.seed = r.integer("optimizer.seed", 0);
    o.strategy = parse_strategy_kind(r.text("optimizer.strategy", "reshuffle"));
    o.deep_audit = r.boolean("optimizer.deep_audit", false);
    o.track_proxy = r.boolean("optimizer.track_proxy", true);
    cfg.init = r.real("optimizer.init", 0.0);

    auto& s = o.schedule;
    s.kind = parse_schedule_kind(r.text("schedule.kind", "constant"));
    s.guard = parse_theory_guard(r.text("schedule.guard", "strict"));
    s.mode = parse_rate_mode(r.text("schedule.mode", "expectation"));
    s.gamma = r.real("schedule.gamma", s.gamma);
    o.d_factor = r.real("schedule.d_factor", o.d_factor);
    const std::string alpha = r.text("schedule.alpha", "0.25");
    if (alpha == "auto") {
      cfg.alpha_choice = AlphaChoice::Auto;
    } else if (alpha == "auto_sure") {
      cfg.alpha_choice = AlphaChoice::AutoSure;
    } else {
      s.alpha_tilde = ConfigReader::parse_real("schedule.alpha", alpha);
    }
    if (r.has("schedule.values")) {
      for (const auto& v : detail::split_list(r.text("schedule.values", "")))
        s.values.push_back(ConfigReader::parse_real("schedule.values", v));
    } else {
      r.text("schedule.values", "");
    }

    auto& a = cfg.audits;
    a.telescoping = r.boolean("audit.telescoping", a.telescoping);
    a.descent = r.boolean("audit.descent", a.descent);
    a.appendix_b = r.boolean("audit.appendix_b", a.appendix_b);
    a.expectation = r.boolean("audit.expectation", a.expectation);
    a.rate = r.boolean("audit.rate", a.rate);
    a.convergence = r.boolean("audit.convergence", a.convergence);
    if (r.has("audit.rate_window")) {
      const auto parts = detail::split_list(r.text("audit.rate_window", ""));
      if (parts.size() != 2) throw ConfigError("audit.rate_window: expected 'lo, hi'");
      a.rate_window = RateWindow{ConfigReader::parse_integer("audit.rate_window", parts[0]),
                                 ConfigReader::parse_integer("audit.rate_window", parts[1])};
    }
    auto optional_real = [&](const std::string& key, std::optional<double>& out) {
      if (r.has(key)) out = r.real(key, 0.0);
    };
    optional_real("audit.rate_max_slope", a.rate_max_slope);
    optional_real("audit.grad_tail_max", a.grad_tail_max);
    optional_real("audit.dist_tail_max", a.dist_tail_max);
    optional_real("audit.cauchy_tail_max", a.cauchy_tail_max);

    auto& out = cfg.output;
    out.dir = r.text("output.dir", out.dir);
    out.record_every = r.integer("output.record_every", out.record_every);
    out.dump_permutations = r.boolean("output.dump_permutations", out.dump_permutations);
    out.dump_problem = r.boolean("output.dump_problem", out.dump_problem);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  r.reject_unknown(ignored_prefixes);

  if (cfg.output.record_every == 0) throw ConfigError("output.record_every must be >= 1");
  if (cfg.audits.appendix_b && !cfg.optimizer.deep_audit)
    throw ConfigError("audit.appendix_b requires optimizer.deep_audit = true");
  if (cfg.optimizer.deep_audit && !cfg.optimizer.track_proxy)
    throw ConfigError("optimizer.deep_audit requires optimizer.track_proxy = true");
  if ((cfg.audits.descent || cfg.audits.expectation) && !cfg.optimizer.track_proxy)
    throw ConfigError("descent and expectation audits require optimizer.track_proxy = true");
  return cfg;
}

inline ExperimentConfig load_experiment(const std::string& path,
                                        const std::vector<std::string>& ignored_prefixes = {}) {
  return parse_experiment(read_key_values(path),
                          std::filesystem::path(path).parent_path(), ignored_prefixes);
}

/// Resolves the parts of the config that depend on the problem: alpha
/// choice, starting point, and the final schedule validation.
inline OptimizerConfig resolve_optimizer(const ExperimentConfig& cfg,
                                         const FiniteSumProblem& problem) {
  OptimizerConfig o = cfg.optimizer;
  o.x0 = Vector::Constant(static_cast<Eigen::Index>(problem.d()), cfg.init);
  try {
    validate(o, problem.n());
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (cfg.alpha_choice != AlphaChoice::Explicit) {
    const auto c = constants(problem, o);
    const RateMode mode =
        cfg.alpha_choice == AlphaChoice::Auto ? RateMode::Expectation : RateMode::Sure;
    o.schedule.mode = mode;
    o.schedule.alpha_tilde = o.schedule.kind == ScheduleKind::Polynomial
                                 ? corollary_alpha_cap(o.schedule, c, o.epochs)
                                 : balanced_constant_alpha(c, o.epochs, mode);
  }
  try {
    o.schedule.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (cfg.audits.expectation && (problem.n() > 6 || o.batch != 1 || o.epochs > 3))
    throw ConfigError("audit.expectation requires n <= 6, b = 1 and T <= 3");
  return o;
}

}  // namespace rrm::harness
