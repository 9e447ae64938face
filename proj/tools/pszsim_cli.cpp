#include <cinttypes>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pszsim/experiment.hpp"
#include "pszsim/metrics.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int jobs = 0;
};

void attach_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("config", flags.config_path, "experiment config file (JSON)")
      ->required();
  cmd->add_option("--seed", flags.seed, "override the master seed");
  cmd->add_option("--out", flags.out, "override the output directory");
  cmd->add_option("--jobs", flags.jobs,
                  "worker count (never changes results; default: all cores, or "
                  "PSZSIM_JOBS)");
}

psz::ExperimentConfig load_with_overrides(const CommonFlags& flags) {
  psz::ExperimentConfig cfg = psz::load_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.output_dir = *flags.out;
  cfg.jobs = flags.jobs;
  return cfg;
}

psz::SteadyState curve_steady_state(const psz::ResultSet& rs, const std::string& algorithm,
                                    psz::PointSet ps, bool ac) {
  for (const psz::LearningCurve& c : rs.curves) {
    if (c.algorithm != algorithm || c.point_set != ps) continue;
    const auto& series = ac ? c.ac_mean_db : c.nmse_mean_db;
    const auto window = std::max<std::size_t>(1, series.size() / 10);
    return psz::steady_state(series, window);
  }
  throw psz::Error("no " + algorithm + " learning curve in the result set");
}

void print_run_summary(const psz::ResultSet& rs) {
  std::printf("%-10s %-12s %14s %14s\n", "algorithm", "point_set", "nmse_ss_db", "ac_ss_db");
  for (const char* alg : {"cpm", "dpmd"}) {
    bool found = false;
    for (const psz::LearningCurve& c : rs.curves)
      if (c.algorithm == alg) found = true;
    if (!found) continue;
    for (psz::PointSet ps : {psz::PointSet::control, psz::PointSet::validation}) {
      const auto nmse = curve_steady_state(rs, alg, ps, false);
      const auto ac = curve_steady_state(rs, alg, ps, true);
      std::printf("%-10s %-12s %14.2f %14.2f\n", alg,
                  ps == psz::PointSet::control ? "control" : "validation", nmse.mean_db,
                  ac.mean_db);
    }
  }
}

int cmd_run(const CommonFlags& flags) {
  psz::ExperimentConfig cfg = load_with_overrides(flags);
  if (cfg.frequencies.size() != 1)
    throw psz::ConfigError("run is single-frequency; use `sweep` for " +
                           std::to_string(cfg.frequencies.size()) + " frequencies");
  const psz::ResultSet rs = psz::run_monte_carlo(cfg);
  psz::write_results(rs, cfg.output_dir);
  std::printf("f = %g Hz, %d Monte Carlo runs (%d diverged), results in %s\n",
              cfg.frequencies[0], rs.monte_carlo_runs, rs.provenance.diverged_runs,
              cfg.output_dir.c_str());
  print_run_summary(rs);
  return 0;
}

int cmd_sweep(const CommonFlags& flags) {
  psz::ExperimentConfig cfg = load_with_overrides(flags);
  const psz::ResultSet rs = psz::frequency_sweep(cfg);
  psz::write_results(rs, cfg.output_dir);
  int failed = 0;
  for (const psz::SweepPoint& p : rs.sweep)
    if (p.failed) ++failed;
  std::printf("%zu sweep rows (%d failed bins), results in %s\n", rs.sweep.size(),
              failed, cfg.output_dir.c_str());
  return failed == 0 ? 0 : 1;
}

int cmd_complexity(const CommonFlags& flags) {
  psz::ExperimentConfig cfg = load_with_overrides(flags);
  const std::vector<psz::ComplexityRow> rows = psz::complexity_report(cfg);

  std::printf("%-6s %-9s %5s %16s %16s %14s %14s\n", "algo", "system", "node",
              "additions", "multiplications", "proc_adds", "proc_mults");
  for (const psz::ComplexityRow& r : rows) {
    std::printf("%-6s %-9s %5d %16.1f %16.1f %14.0f %14.0f\n", r.algorithm.c_str(),
                r.system.c_str(), r.node, r.model.additions(), r.model.multiplications(),
                r.model.proc_additions, r.model.proc_multiplications);
  }

  if (flags.out) {
    psz::ResultSet rs;
    rs.complexity = rows;
    rs.monte_carlo_runs = 0;
    const std::string canonical = psz::config_to_json(cfg);
    rs.provenance.config_json = canonical;
    rs.provenance.config_hash = psz::config_hash(canonical);
    rs.provenance.seed = cfg.seed;
    rs.provenance.code_version = psz::kVersion;
    psz::write_results(rs, *flags.out);
  }
  return 0;
}

int cmd_compare(const CommonFlags& flags) {
  psz::ExperimentConfig cfg = load_with_overrides(flags);
  cfg.algorithm = psz::Algorithm::both;
  if (cfg.frequencies.size() != 1)
    throw psz::ConfigError("compare is single-frequency; narrow the frequency list");
  const psz::ResultSet rs = psz::run_monte_carlo(cfg);

  const auto cpm_nmse = curve_steady_state(rs, "cpm", psz::PointSet::control, false);
  const auto cpm_ac = curve_steady_state(rs, "cpm", psz::PointSet::control, true);
  const auto dpmd_nmse = curve_steady_state(rs, "dpmd", psz::PointSet::control, false);
  const auto dpmd_ac = curve_steady_state(rs, "dpmd", psz::PointSet::control, true);

  std::printf("%-10s %14s %14s %16s %16s\n", "algorithm", "nmse_ss_db", "ac_ss_db",
              "delta_nmse_db", "delta_ac_db");
  std::printf("%-10s %14.2f %14.2f %16s %16s\n", "cpm", cpm_nmse.mean_db, cpm_ac.mean_db,
              "--", "--");
  std::printf("%-10s %14.2f %14.2f %16.2f %16.2f\n", "dpmd", dpmd_nmse.mean_db,
              dpmd_ac.mean_db, dpmd_nmse.mean_db - cpm_nmse.mean_db,
              dpmd_ac.mean_db - cpm_ac.mean_db);

  if (flags.out) psz::write_results(rs, *flags.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive pressure matching for personal sound zones: centralized "
               "(CPM) and diffusion-distributed (DPM-D) simulation"};
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags, complexity_flags, compare_flags;
  CLI::App* run = app.add_subcommand("run", "single-frequency Monte Carlo experiment");
  attach_common(run, run_flags);
  CLI::App* sweep = app.add_subcommand("sweep", "frequency sweep experiment");
  attach_common(sweep, sweep_flags);
  CLI::App* complexity =
      app.add_subcommand("complexity", "per-iteration computational cost report");
  attach_common(complexity, complexity_flags);
  CLI::App* compare =
      app.add_subcommand("compare", "CPM vs DPM-D steady-state summary");
  attach_common(compare, compare_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_flags);
    if (sweep->parsed()) return cmd_sweep(sweep_flags);
    if (complexity->parsed()) return cmd_complexity(complexity_flags);
    if (compare->parsed()) return cmd_compare(compare_flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
