#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rrm/diagnostics.hpp"
#include "rrm/error.hpp"
#include "rrm/harness/config.hpp"
#include "rrm/harness/output.hpp"
#include "rrm/problem_io.hpp"
#include "rrm/random.hpp"
#include "rrm/run.hpp"
#include "rrm/version.hpp"

namespace rrm::harness {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitAudit = 4,
};

struct AuditOutcome {
  AuditOutcome() = default;
  explicit AuditOutcome(std::string n, bool is_asserted = false)
      : name(std::move(n)), asserted(is_asserted) {}

  std::string name;
  bool asserted = false;
  bool passed = true;
  /// Set on failure: which inequality, at which epoch, with what residual.
  std::string inequality;
  std::optional<std::size_t> epoch;
  std::optional<double> residual;
  nlohmann::json details = nlohmann::json::object();
};

inline nlohmann::json to_json(const AuditOutcome& a) {
  nlohmann::json j;
  j["asserted"] = a.asserted;
  j["passed"] = a.passed;
  if (!a.passed) {
    j["inequality"] = a.inequality;
    j["epoch"] = a.epoch ? nlohmann::json(*a.epoch) : nlohmann::json(nullptr);
    j["residual"] = a.residual ? nlohmann::json(*a.residual) : nlohmann::json(nullptr);
  }
  j["details"] = a.details;
  return j;
}

inline nlohmann::json to_json(const TheoryConstants& c) {
  return {{"L", c.L},         {"fbar", c.fbar},   {"n", c.n},
          {"m", c.m},         {"beta", c.beta},   {"beta_m", c.beta_m},
          {"H", c.H},         {"D", c.D},         {"d_factor", c.d_factor},
          {"alpha_max", c.alpha_max}};
}

inline TheoryConstants constants_from_json(const nlohmann::json& j) {
  TheoryConstants c;
  c.L = j.at("L").get<double>();
  c.fbar = j.at("fbar").get<double>();
  c.n = j.at("n").get<std::size_t>();
  c.m = j.at("m").get<std::size_t>();
  c.beta = j.at("beta").get<double>();
  c.beta_m = j.at("beta_m").get<double>();
  c.H = j.at("H").get<double>();
  c.D = j.at("D").get<double>();
  c.d_factor = j.at("d_factor").get<double>();
  c.alpha_max = j.at("alpha_max").get<double>();
  return c;
}

// ---------------------------------------------------------------------------
// Audits over a finished trace

inline AuditOutcome telescoping_outcome(const std::vector<TraceRecord>& records) {
  AuditOutcome a("telescoping", true);
  double worst = 0.0;
  std::size_t worst_k = 0;
  for (const auto& r : records) {
    if (r.residual_telescoping > worst || worst_k == 0) {
      worst = r.residual_telescoping;
      worst_k = r.k;
    }
    if (a.passed && r.residual_telescoping > kAuditTolerance) {
      a.passed = false;
      a.inequality = "telescoping identity (1-beta)(z'-z) = -alpha sum d";
      a.epoch = r.k;
      a.residual = r.residual_telescoping;
    }
  }
  a.details["max_scaled_residual"] = worst;
  a.details["worst_epoch"] = worst_k;
  return a;
}

inline AuditOutcome descent_outcome(const std::vector<TraceRecord>& records,
                                    const TraceRecord& terminal,
                                    const TheoryConstants& c) {
  AuditOutcome a("descent");
  const auto audit = descent_audit(records, terminal, c);
  // The inequality is only claimed for step sizes in (0, alpha_max].
  a.asserted = audit.steps_admissible;
  a.details["min_scaled_residual"] = audit.min_scaled;
  a.details["sum_alpha_cubed"] = audit.sum_alpha_cubed;
  a.details["rate_precondition"] = audit.rate_precondition;
  a.details["steps_admissible"] = audit.steps_admissible;
  if (!audit.holds) {
    const std::size_t k = *audit.first_violation;
    a.passed = false;
    a.inequality = "approximate descent R_{k+1} <= R_k + ... (sure version)";
    a.epoch = k;
    a.residual = audit.residuals[k - 1];
  }
  return a;
}

inline AuditOutcome appendix_b_outcome(const std::vector<TraceRecord>& records,
                                       const TheoryConstants& c) {
  AuditOutcome a("appendix_b", true);
  double min_b3 = std::numeric_limits<double>::infinity();
  double min_b4 = min_b3;
  std::size_t checked_b3 = 0, checked_b4 = 0;
  const double b3_cap = std::min(c.alpha_max, (1.0 - c.beta) / (std::sqrt(8.0) * c.L *
                                                               static_cast<double>(c.m)));
  for (const auto& r : records) {
    if (!r.residual_b3 || !r.residual_b4)
      throw AuditUnavailable("appendix_b audit needs deep records");
    if (r.alpha_k <= b3_cap) {
      ++checked_b3;
      min_b3 = std::min(min_b3, *r.residual_b3);
      if (a.passed && *r.residual_b3 < -kAuditTolerance) {
        a.passed = false;
        a.inequality = "inner extrapolation bound sum ||yhat_t - z||^2 <= 5m/4 [...]";
        a.epoch = r.k;
        a.residual = *r.residual_b3;
      }
    }
    if (r.alpha_k <= c.alpha_max) {
      ++checked_b4;
      min_b4 = std::min(min_b4, *r.residual_b4);
      if (a.passed && *r.residual_b4 < -kAuditTolerance) {
        a.passed = false;
        a.inequality = "distance recursion ||z'-x'||^2 <= eta ||z-x||^2 + ...";
        a.epoch = r.k;
        a.residual = *r.residual_b4;
      }
    }
  }
  a.details["epochs_checked_b3"] = checked_b3;
  a.details["epochs_checked_b4"] = checked_b4;
  a.details["min_scaled_b3"] = checked_b3 ? nlohmann::json(min_b3) : nlohmann::json(nullptr);
  a.details["min_scaled_b4"] = checked_b4 ? nlohmann::json(min_b4) : nlohmann::json(nullptr);
  return a;
}

inline AuditOutcome expectation_outcome(const FiniteSumProblem& problem,
                                        const OptimizerConfig& config) {
  AuditOutcome a("expectation", true);
  const auto audit = expectation_audit(problem, config);
  a.details["sequences"] = audit.sequences;
  a.details["expected_R"] = audit.expected_R;
  a.details["slack"] = audit.slack;
  a.details["min_scaled_slack"] = audit.min_scaled_slack;
  a.details["sampling_checks"] = audit.sampling_checks;
  a.details["sampling_holds"] = audit.sampling_holds;
  if (!audit.holds) {
    a.passed = false;
    a.inequality = "expected descent E[R_{k+1}] <= E[R_k] - ...";
    for (std::size_t k = 0; k < audit.slack.size(); ++k) {
      if (audit.slack[k] / (1.0 + std::abs(audit.expected_R[k])) < -kAuditTolerance) {
        a.epoch = k + 1;
        a.residual = audit.slack[k];
        break;
      }
    }
  } else if (!audit.sampling_holds) {
    a.passed = false;
    a.inequality = "weighted sampling bound E||sum a_i X_pi_i - (sum a) Xbar||^2 <= ||a||^2 sigma^2";
  }
  return a;
}

inline RateWindow default_rate_window(std::size_t T) {
  return {std::max<std::size_t>(1, T / 4), T};
}

inline AuditOutcome rate_outcome(const std::vector<TraceRecord>& records, RateWindow window,
                                 std::optional<double> max_slope) {
  AuditOutcome a{"rate", max_slope.has_value()};
  a.details["window"] = {window.lo, window.hi};
  try {
    const auto fit = fit_rate(records, window);
    a.details["slope"] = fit.slope;
    a.details["intercept"] = fit.intercept;
    a.details["r2"] = fit.r2;
    a.details["points"] = fit.points;
    if (max_slope && !(fit.slope <= *max_slope)) {
      a.passed = false;
      a.inequality = "fitted log-log slope <= " + format_double(*max_slope);
      a.epoch = window.hi;
      a.residual = *max_slope - fit.slope;
    }
  } catch (const DegenerateWindow& e) {
    a.details["unavailable"] = e.what();
    if (max_slope) {
      a.passed = false;
      a.inequality = std::string("rate fit: ") + e.what();
    }
  }
  return a;
}

inline AuditOutcome convergence_outcome(const ConvergenceSummary& s,
                                        const AuditSelection& sel) {
  AuditOutcome a("convergence");
  a.details["tail_start"] = s.tail_start;
  a.details["grad_tail_max"] = s.grad_tail_max;
  a.details["dist_tail_max"] = s.dist_tail_max;
  a.details["dist_head_max"] = s.dist_head_max;
  a.details["cauchy_tail"] = s.cauchy_tail ? nlohmann::json(*s.cauchy_tail) : nlohmann::json(nullptr);
  auto check = [&](const char* what, std::optional<double> limit, std::optional<double> value) {
    if (!limit) return;
    a.asserted = true;
    if (!value || !(*value <= *limit)) {
      if (a.passed) {
        a.passed = false;
        a.inequality = std::string(what) + " <= " + format_double(*limit);
        a.epoch = s.tail_start;
        a.residual = value ? *limit - *value : std::numeric_limits<double>::quiet_NaN();
      }
    }
  };
  check("last-decile max ||grad f(x^k)||", sel.grad_tail_max, s.grad_tail_max);
  check("last-decile max ||z^k - x^k||", sel.dist_tail_max, s.dist_tail_max);
  check("last-decile sup ||x^k - x^l||", sel.cauchy_tail_max, s.cauchy_tail);
  return a;
}

// ---------------------------------------------------------------------------

struct ExperimentResult {
  int exit_code = kExitOk;
  std::string status;
  std::string message;
  std::optional<Trace> trace;
  std::vector<AuditOutcome> audits;
  std::optional<TheoryConstants> constants;
};

inline nlohmann::json resolved_json(const ExperimentConfig& cfg, const OptimizerConfig& o,
                                    const FiniteSumProblem& problem) {
  nlohmann::json j;
  j["problem"] = {{"kind", std::string(to_string(problem.kind()))},
                  {"n", problem.n()},
                  {"d", problem.d()},
                  {"rows_per_component", problem.rows_per_component()},
                  {"seed", problem.seed ? nlohmann::json(*problem.seed) : nlohmann::json(nullptr)},
                  {"file", cfg.problem.file},
                  {"smoothness", problem.smoothness()},
                  {"lower_bound", problem.lower_bound()}};
  j["optimizer"] = {{"beta", o.beta},
                    {"lambda", o.lambda},
                    {"batch", o.batch},
                    {"epochs", o.epochs},
                    {"seed", o.seed},
                    {"strategy", std::string(to_string(o.strategy))},
                    {"deep_audit", o.deep_audit},
                    {"track_proxy", o.track_proxy},
                    {"init", cfg.init}};
  j["schedule"] = {{"kind", std::string(to_string(o.schedule.kind))},
                   {"alpha_tilde", o.schedule.alpha_tilde},
                   {"gamma", o.schedule.gamma},
                   {"values", o.schedule.values},
                   {"guard", std::string(to_string(o.schedule.guard))},
                   {"mode", std::string(to_string(o.schedule.mode))},
                   {"d_factor", o.d_factor}};
  j["output"] = {{"record_every", cfg.output.record_every}};
  return j;
}

/// Runs one experiment and writes manifest.json, trace.jsonl, trace.csv and
/// audit.json into `out_dir`. Log lines go to `log`.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                       std::ostream& log) {
  namespace fs = std::filesystem;
  ExperimentResult result;
  nlohmann::json manifest;
  manifest["tool"] = "rrm";
  manifest["version"] = kVersion;
  manifest["prng"] = kPrngAlgorithm;
  manifest["seed"] = cfg.optimizer.seed;
  manifest["config"] = cfg.source;
  manifest["started_at"] = utc_timestamp();

  std::optional<FiniteSumProblem> problem;
  OptimizerConfig opt;
  try {
    problem = build_problem(cfg.problem);
    opt = resolve_optimizer(cfg, *problem);
    result.constants = constants(*problem, opt);
  } catch (const ConfigError& e) {
    result.exit_code = kExitConfig;
    result.status = "config_error";
    result.message = e.what();
    log << "config error: " << e.what() << '\n';
    return result;
  } catch (const InvalidInput& e) {
    result.exit_code = kExitConfig;
    result.status = "config_error";
    result.message = e.what();
    log << "config error: " << e.what() << '\n';
    return result;
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    result.exit_code = kExitError;
    result.status = "io_error";
    result.message = "cannot create " + out_dir + ": " + ec.message();
    log << result.message << '\n';
    return result;
  }
  const fs::path dir(out_dir);
  manifest["resolved"] = resolved_json(cfg, opt, *problem);
  manifest["constants"] = to_json(*result.constants);
  if (cfg.output.dump_problem) save_problem(*problem, (dir / "problem.json").string());

  RunOptions options;
  options.keep_permutations = cfg.output.dump_permutations;
  try {
    result.trace = run(*problem, opt, options);
  } catch (const GuardViolation& e) {
    result.exit_code = kExitConfig;
    result.status = "config_error";
    result.message = e.what();
  } catch (const ConfigError& e) {
    result.exit_code = kExitConfig;
    result.status = "config_error";
    result.message = e.what();
  } catch (const NumericAbort& e) {
    result.exit_code = kExitNumeric;
    result.status = "numeric_abort";
    result.message = e.what();
    manifest["abort"] = {{"epoch", e.epoch()}, {"inner", e.inner()}, {"message", e.what()}};
  }
  manifest["finished_at"] = utc_timestamp();
  if (!result.trace) {
    manifest["status"] = result.status;
    manifest["message"] = result.message;
    write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    log << result.status << ": " << result.message << '\n';
    return result;
  }

  const Trace& trace = *result.trace;
  write_trace_files(trace, cfg.output.record_every, (dir / "trace.jsonl").string(),
                    (dir / "trace.csv").string());
  if (cfg.output.dump_permutations)
    write_permutations(trace, (dir / "permutations.txt").string());

  const auto& sel = cfg.audits;
  const auto& c = trace.constants;
  const std::size_t T = opt.epochs;
  try {
    if (sel.telescoping) result.audits.push_back(telescoping_outcome(trace.records));
    if (sel.descent) result.audits.push_back(descent_outcome(trace.records, trace.terminal, c));
    if (sel.appendix_b) result.audits.push_back(appendix_b_outcome(trace.records, c));
    if (sel.expectation) result.audits.push_back(expectation_outcome(*problem, opt));
    if (sel.rate)
      result.audits.push_back(rate_outcome(
          trace.records, sel.rate_window.value_or(default_rate_window(T)), sel.rate_max_slope));
    if (sel.convergence)
      result.audits.push_back(convergence_outcome(convergence_summary(trace), sel));
  } catch (const Error& e) {
    AuditOutcome broken("harness", true);
    broken.passed = false;
    broken.inequality = std::string("audit unavailable: ") + e.what();
    result.audits.push_back(broken);
  }

  nlohmann::json audit_json;
  audit_json["audits"] = nlohmann::json::object();
  const AuditOutcome* first_failure = nullptr;
  for (const auto& a : result.audits) {
    audit_json["audits"][a.name] = to_json(a);
    if (a.asserted && !a.passed && !first_failure) first_failure = &a;
  }
  if (first_failure) {
    audit_json["first_failure"] = {
        {"audit", first_failure->name},
        {"inequality", first_failure->inequality},
        {"epoch", first_failure->epoch ? nlohmann::json(*first_failure->epoch) : nlohmann::json(nullptr)},
        {"residual",
         first_failure->residual ? nlohmann::json(*first_failure->residual) : nlohmann::json(nullptr)}};
    result.exit_code = kExitAudit;
    result.status = "audit_failure";
    result.message = first_failure->name + ": " + first_failure->inequality;
  } else {
    result.status = "completed";
  }
  audit_json["status"] = result.status;
  write_text((dir / "audit.json").string(), audit_json.dump(2) + "\n");

  const auto summary = convergence_summary(trace);
  manifest["status"] = result.status;
  manifest["guard_warnings"] = trace.guard_warnings;
  manifest["terminal"] = record_to_json(trace.terminal);
  manifest["summary"] = {
      {"best_k", trace.best_k},
      {"min_grad_sq", trace.terminal.min_grad_sq_so_far},
      {"final_grad", trace.terminal.grad_x},
      {"final_f", trace.terminal.f_x},
      {"max_telescoping_scaled", trace.max_telescoping_scaled},
      {"closed_form_deviation", trace.closed_form_deviation
                                    ? nlohmann::json(*trace.closed_form_deviation)
                                    : nlohmann::json(nullptr)},
      {"tail_start", summary.tail_start},
      {"cauchy_tail", summary.cauchy_tail ? nlohmann::json(*summary.cauchy_tail)
                                          : nlohmann::json(nullptr)}};
  write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");

  for (const auto& w : trace.guard_warnings) log << "warning: " << w << '\n';
  for (const auto& a : result.audits) {
    log << (!a.asserted ? "[info] " : (a.passed ? "[pass] " : "[FAIL] ")) << a.name;
    if (!a.passed) log << " epoch " << (a.epoch ? std::to_string(*a.epoch) : "-") << ": "
                       << a.inequality << " (residual "
                       << (a.residual ? format_double(*a.residual) : "n/a") << ")";
    log << '\n';
  }
  log << result.status << ": T = " << T << ", min ||grad f||^2 = "
      << format_double(trace.terminal.min_grad_sq_so_far) << ", output in " << out_dir << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// report: re-derive the audits from stored files

struct ReportResult {
  int exit_code = kExitOk;
  std::vector<AuditOutcome> audits;
};

inline ReportResult report_from_directory(const std::string& out_dir, std::ostream& log) {
  namespace fs = std::filesystem;
  const fs::path dir(out_dir);
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("no manifest.json in " + out_dir);
  nlohmann::json manifest;
  in >> manifest;
  if (manifest.value("status", "") == "numeric_abort" ||
      manifest.value("status", "") == "config_error")
    throw ConfigError("run in " + out_dir + " did not complete (" +
                      manifest.value("status", "") + ")");

  const auto records = read_trace((dir / "trace.jsonl").string());
  if (records.empty()) throw ConfigError("empty trace in " + out_dir);
  const auto c = constants_from_json(manifest.at("constants"));
  const auto& resolved = manifest.at("resolved");
  const std::size_t T = resolved.at("optimizer").at("epochs").get<std::size_t>();
  const std::size_t every = resolved.at("output").at("record_every").get<std::size_t>();
  const TraceRecord terminal = record_from_json(manifest.at("terminal"));

  ReportResult out;
  out.audits.push_back(telescoping_outcome(records));

  if (every == 1 && records.front().R_k) {
    auto descent = descent_outcome(records, terminal, c);
    const auto audit = descent_audit(records, terminal, c);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].residual_descent && *records[i].residual_descent != audit.residuals[i])
        ++mismatches;
    descent.details["stored_residual_mismatches"] = mismatches;
    if (mismatches && descent.passed) {
      descent.passed = false;
      descent.asserted = true;
      descent.inequality = "re-derived descent residuals differ from the stored ones";
    }
    out.audits.push_back(descent);
  } else {
    AuditOutcome skipped("descent");
    skipped.details["unavailable"] =
        every != 1 ? "trace is thinned (record_every > 1)" : "trace has no proxy quantities";
    out.audits.push_back(skipped);
  }

  if (records.front().residual_b3) out.audits.push_back(appendix_b_outcome(records, c));

  const RateWindow window = default_rate_window(T);
  out.audits.push_back(rate_outcome(records, window, std::nullopt));

  ConvergenceSummary summary = convergence_summary(records, {}, T);
  if (manifest.contains("summary") && !manifest["summary"]["cauchy_tail"].is_null())
    summary.cauchy_tail = manifest["summary"]["cauchy_tail"].get<double>();
  out.audits.push_back(convergence_outcome(summary, AuditSelection{}));

  nlohmann::json report;
  for (const auto& a : out.audits) {
    report[a.name] = to_json(a);
    log << (!a.asserted ? "[info] " : (a.passed ? "[pass] " : "[FAIL] ")) << a.name;
    if (a.details.contains("slope")) log << " slope " << format_double(a.details["slope"]);
    if (a.details.contains("min_scaled_residual"))
      log << " min scaled residual " << format_double(a.details["min_scaled_residual"]);
    if (a.details.contains("unavailable"))
      log << " (" << a.details["unavailable"].get<std::string>() << ")";
    log << '\n';
    if (a.asserted && !a.passed) out.exit_code = kExitAudit;
  }
  write_text((dir / "report.json").string(), report.dump(2) + "\n");
  return out;
}

}  // namespace rrm::harness
