// rrm: run, sweep, verify and report for random reshuffling with momentum.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "rrm/harness/config.hpp"
#include "rrm/harness/experiment.hpp"
#include "rrm/harness/sweep.hpp"
#include "rrm/harness/verify.hpp"
#include "rrm/version.hpp"

namespace {

using namespace rrm;
using namespace rrm::harness;

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool strict = false;
  bool lenient = false;
  bool dump_permutations = false;
};

void apply_overrides(ExperimentConfig& cfg, const CommonFlags& f) {
  if (f.seed) {
    cfg.optimizer.seed = *f.seed;
    cfg.source["optimizer.seed"] = std::to_string(*f.seed);
  }
  if (f.strict) cfg.optimizer.schedule.guard = TheoryGuard::Strict;
  if (f.lenient) cfg.optimizer.schedule.guard = TheoryGuard::Warn;
  if (f.strict || f.lenient)
    cfg.source["schedule.guard"] = std::string(to_string(cfg.optimizer.schedule.guard));
  if (f.dump_permutations) cfg.output.dump_permutations = true;
  if (!f.out.empty()) cfg.output.dir = f.out;
}

int cmd_run(const CommonFlags& f) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment(f.config);
    apply_overrides(cfg, f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    return run_experiment(cfg, cfg.output.dir, std::cout).exit_code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_sweep(const CommonFlags& f) {
  SweepPlan plan;
  std::size_t workers = 1;
  try {
    const auto kv = read_key_values(f.config);
    plan = plan_sweep(kv, std::filesystem::path(f.config).parent_path());
    apply_overrides(plan.base, f);
    if (f.seed) {
      if (kv.count("sweep.seed")) throw ConfigError("--seed conflicts with the sweep.seed axis");
      for (auto& cell : plan.cells) cell.seed = *f.seed;
    }
    workers = sweep_workers();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  std::cout << plan.cells.size() << " cells, " << workers << " worker(s)\n";
  try {
    return run_sweep(plan, plan.base.output.dir, workers, std::cout);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_verify() {
  return run_verify_suite(std::cout) ? kExitOk : kExitAudit;
}

int cmd_report(const std::string& dir) {
  try {
    return report_from_directory(dir, std::cout).exit_code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
}

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("-c,--config", f.config, "Config file (key = value)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--out", f.out, "Output directory (overrides output.dir)");
  sub->add_option("--seed", f.seed, "Optimizer seed (overrides optimizer.seed)");
  auto* strict = sub->add_flag("--strict", f.strict, "Refuse step sizes outside the theory range");
  auto* lenient = sub->add_flag("--lenient", f.lenient, "Warn on step sizes outside the theory range");
  strict->excludes(lenient);
  sub->add_flag("--dump-permutations", f.dump_permutations, "Write permutations.txt");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random reshuffling with momentum: experiments and audits"};
  app.set_version_flag("--version", rrm::kVersion);
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags;
  auto* run = app.add_subcommand("run", "Run one experiment and its audits");
  add_common(run, run_flags);
  auto* sweep = app.add_subcommand("sweep", "Run a grid of experiments");
  add_common(sweep, sweep_flags);
  app.add_subcommand("verify", "Run the fixed-seed oracle suite");
  std::string report_dir;
  auto* report = app.add_subcommand("report", "Re-derive audits from a stored run");
  report->add_option("-o,--out,dir", report_dir, "Run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (*run) return cmd_run(run_flags);
  if (*sweep) return cmd_sweep(sweep_flags);
  if (*report) return cmd_report(report_dir);
  return cmd_verify();
}
