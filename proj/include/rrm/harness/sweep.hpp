#pragma once

// Grid sweeps. A sweep file is an experiment config plus sweep.* keys, each a
// comma-separated list:
//   sweep.beta     = 0, 0.5, 0.9
//   sweep.lambda   = 0, beta          (numbers, "beta" or "max")
//   sweep.batch    = 1, 2
//   sweep.schedule = constant, polynomial:0.6   (kind[:gamma])
//   sweep.seed     = 1..5             (list or inclusive range)
// Missing axes fall back to the base config. Cells whose resolved values
// coincide are run once.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "rrm/harness/config.hpp"
#include "rrm/harness/experiment.hpp"

namespace rrm::harness {

struct SweepCell {
  std::size_t index = 0;
  double beta = 0.0;
  double lambda = 0.0;
  std::size_t batch = 1;
  ScheduleKind schedule = ScheduleKind::Constant;
  double gamma = 1.0;
  std::uint64_t seed = 0;
  std::string schedule_label;
};

struct SweepPlan {
  ExperimentConfig base;
  std::vector<SweepCell> cells;
};

namespace detail {

inline std::vector<std::uint64_t> parse_seed_axis(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(text)) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(ConfigReader::parse_integer("sweep.seed", item));
      continue;
    }
    const auto lo = ConfigReader::parse_integer("sweep.seed", trim(item.substr(0, dots)));
    const auto hi = ConfigReader::parse_integer("sweep.seed", trim(item.substr(dots + 2)));
    if (hi < lo) throw ConfigError("sweep.seed: empty range " + item);
    if (hi - lo > 100000) throw ConfigError("sweep.seed: range too large");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  return out;
}

}  // namespace detail

inline SweepPlan plan_sweep(const KeyValues& kv, const std::filesystem::path& base_dir = {}) {
  SweepPlan plan;
  plan.base = parse_experiment(kv, base_dir, {"sweep."});
  for (const auto& [key, value] : kv) {
    if (key.rfind("sweep.", 0) != 0) continue;
    if (key != "sweep.beta" && key != "sweep.lambda" && key != "sweep.batch" &&
        key != "sweep.schedule" && key != "sweep.seed")
      throw ConfigError("unknown sweep axis '" + key + "'");
  }
  auto axis = [&](const std::string& key) -> std::vector<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return {};
    auto items = detail::split_list(it->second);
    if (items.empty()) throw ConfigError(key + ": empty list");
    return items;
  };
  const auto& o = plan.base.optimizer;

  std::vector<double> betas;
  for (const auto& v : axis("sweep.beta")) betas.push_back(ConfigReader::parse_real("sweep.beta", v));
  if (betas.empty()) betas.push_back(o.beta);

  auto lambdas = axis("sweep.lambda");
  if (lambdas.empty()) lambdas.push_back(plan.base.lambda_text);

  std::vector<std::size_t> batches;
  for (const auto& v : axis("sweep.batch"))
    batches.push_back(ConfigReader::parse_integer("sweep.batch", v));
  if (batches.empty()) batches.push_back(o.batch);

  struct ScheduleChoice {
    ScheduleKind kind;
    double gamma;
    std::string label;
  };
  std::vector<ScheduleChoice> schedules;
  for (const auto& v : axis("sweep.schedule")) {
    const auto colon = v.find(':');
    ScheduleChoice s{parse_schedule_kind(detail::trim(v.substr(0, colon))), o.schedule.gamma, v};
    if (s.kind == ScheduleKind::Custom) throw ConfigError("sweep.schedule: custom is not sweepable");
    if (colon != std::string::npos)
      s.gamma = ConfigReader::parse_real("sweep.schedule", detail::trim(v.substr(colon + 1)));
    if (s.kind == ScheduleKind::Constant) s.gamma = o.schedule.gamma;
    s.label = std::string(to_string(s.kind));
    if (s.kind == ScheduleKind::Polynomial) s.label += ":" + short_double(s.gamma);
    schedules.push_back(s);
  }
  if (schedules.empty()) {
    std::string label(to_string(o.schedule.kind));
    if (o.schedule.kind == ScheduleKind::Polynomial) label += ":" + short_double(o.schedule.gamma);
    schedules.push_back({o.schedule.kind, o.schedule.gamma, label});
  }

  std::vector<std::uint64_t> seeds;
  if (const auto it = kv.find("sweep.seed"); it != kv.end())
    seeds = detail::parse_seed_axis(it->second);
  if (seeds.empty()) seeds.push_back(o.seed);

  using Key = std::tuple<double, double, std::size_t, std::string, std::uint64_t>;
  std::vector<Key> seen;
  for (double beta : betas)
    for (const auto& lambda_text : lambdas) {
      double lambda = 0.0;
      try {
        lambda = resolve_lambda(lambda_text, beta);
      } catch (const ConfigError&) {
        throw ConfigError("sweep.lambda: expected a number, 'beta' or 'max', got '" +
                          lambda_text + "'");
      }
      for (auto batch : batches)
        for (const auto& s : schedules)
          for (auto seed : seeds) {
            const Key key{beta, lambda, batch, s.label, seed};
            if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
            seen.push_back(key);
            SweepCell cell;
            cell.index = plan.cells.size();
            cell.beta = beta;
            cell.lambda = lambda;
            cell.batch = batch;
            cell.schedule = s.kind;
            cell.gamma = s.gamma;
            cell.seed = seed;
            cell.schedule_label = s.label;
            plan.cells.push_back(cell);
          }
    }
  return plan;
}

inline ExperimentConfig cell_config(const SweepPlan& plan, const SweepCell& cell) {
  ExperimentConfig cfg = plan.base;
  cfg.optimizer.beta = cell.beta;
  cfg.optimizer.lambda = cell.lambda;
  cfg.lambda_text = format_double(cell.lambda);
  cfg.optimizer.batch = cell.batch;
  cfg.optimizer.schedule.kind = cell.schedule;
  cfg.optimizer.schedule.gamma = cell.gamma;
  cfg.optimizer.seed = cell.seed;
  cfg.source["sweep.cell"] = std::to_string(cell.index);
  cfg.source["optimizer.beta"] = format_double(cell.beta);
  cfg.source["optimizer.lambda"] = format_double(cell.lambda);
  cfg.source["optimizer.batch"] = std::to_string(cell.batch);
  cfg.source["schedule.kind"] = std::string(to_string(cell.schedule));
  cfg.source["schedule.gamma"] = format_double(cell.gamma);
  cfg.source["optimizer.seed"] = std::to_string(cell.seed);
  return cfg;
}

inline std::string cell_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cell_%03zu", index);
  return buf;
}

struct CellOutcome {
  int exit_code = kExitError;
  std::string status;
  std::optional<double> final_min_grad_sq;
  std::optional<double> slope;
  bool audit_pass = false;
};

/// RRM_WORKERS if set and positive, else the hardware thread count.
inline std::size_t sweep_workers() {
  if (const char* env = std::getenv("RRM_WORKERS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("RRM_WORKERS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

inline const char* kSummaryHeader =
    "cell,beta,lambda,batch,schedule,seed,status,exit_code,final_min_grad_sq,slope,audit_pass";

/// Runs every cell, one run per worker, and writes summary.csv. Returns 0 iff
/// every cell exited 0, else the exit code of the first failing cell.
inline int run_sweep(const SweepPlan& plan, const std::string& out_dir, std::size_t workers,
                     std::ostream& log) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir + ": " + ec.message());

  std::vector<CellOutcome> outcomes(plan.cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= plan.cells.size()) return;
      const auto& cell = plan.cells[i];
      const std::string dir = (fs::path(out_dir) / cell_name(cell.index)).string();
      CellOutcome out;
      std::ostringstream cell_log;
      try {
        const auto cfg = cell_config(plan, cell);
        auto res = run_experiment(cfg, dir, cell_log);
        out.exit_code = res.exit_code;
        out.status = res.status;
        out.audit_pass = res.exit_code == kExitOk;
        if (res.trace) {
          out.final_min_grad_sq = res.trace->terminal.min_grad_sq_so_far;
          try {
            out.slope = fit_rate(res.trace->records, default_rate_window(cfg.optimizer.epochs)).slope;
          } catch (const Error&) {
          }
        }
        fs::create_directories(dir);
        write_text((fs::path(dir) / "run.log").string(), cell_log.str());
      } catch (const std::exception& e) {
        out.exit_code = kExitError;
        out.status = std::string("error: ") + e.what();
      }
      outcomes[i] = out;
      std::lock_guard<std::mutex> lock(log_mutex);
      log << cell_name(cell.index) << " beta=" << short_double(cell.beta)
          << " lambda=" << short_double(cell.lambda) << " b=" << cell.batch
          << " schedule=" << cell.schedule_label << " seed=" << cell.seed << ": "
          << out.status << '\n';
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, plan.cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  csv << kSummaryHeader << '\n';
  int code = kExitOk;
  for (std::size_t i = 0; i < plan.cells.size(); ++i) {
    const auto& c = plan.cells[i];
    const auto& o = outcomes[i];
    std::string status = o.status;
    for (auto& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    csv << c.index << ',' << format_double(c.beta) << ',' << format_double(c.lambda) << ','
        << c.batch << ',' << c.schedule_label << ',' << c.seed << ',' << status << ','
        << o.exit_code << ',' << (o.final_min_grad_sq ? format_double(*o.final_min_grad_sq) : "")
        << ',' << (o.slope ? format_double(*o.slope) : "") << ','
        << (o.audit_pass ? "true" : "false") << '\n';
    if (code == kExitOk && o.exit_code != kExitOk) code = o.exit_code;
  }
  write_text((fs::path(out_dir) / "summary.csv").string(), csv.str());
  std::size_t passed = 0;
  for (const auto& o : outcomes) passed += o.exit_code == kExitOk;
  log << passed << "/" << plan.cells.size() << " cells passed; summary in "
      << (fs::path(out_dir) / "summary.csv").string() << '\n';
  return code;
}

}  // namespace rrm::harness
