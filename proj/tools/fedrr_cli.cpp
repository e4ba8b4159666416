// Command-line runner for the FedRR simulation and monitoring toolkit.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedrr/calibration.hpp"
#include "fedrr/experiment.hpp"
#include "json.hpp"

namespace {

// Relative output directories land under FEDRR_OUTPUT_ROOT when it is set.
std::string resolve_output_dir(const std::string& dir) {
  if (dir.empty()) return dir;
  std::filesystem::path p(dir);
  if (p.is_absolute()) return dir;
  const char* root = std::getenv("FEDRR_OUTPUT_ROOT");
  if (!root || !*root) return dir;
  return (std::filesystem::path(root) / p).string();
}

fedrr::ExperimentConfig load_config(const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
  fedrr::ConfigEntries entries;
  if (!config_path.empty()) {
    const fedrr::ExperimentConfig base = fedrr::parse_config_file(config_path);
    entries = fedrr::entries_from_config(base);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw fedrr::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    entries.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return fedrr::config_from_entries(entries);
}

int cmd_calibrate(const fedrr::CalibrationConfig& cfg, const std::string& json_path) {
  const fedrr::CalibrationResult res = fedrr::find_limit(cfg);
  nlohmann::ordered_json j;
  j["H"] = res.limit;
  j["arl"] = res.arl.mean;
  j["std_error"] = res.arl.std_error;
  j["M"] = cfg.replications;
  j["d"] = cfg.d;
  j["K"] = cfg.clients;
  const std::string text = j.dump(2);
  std::cout << text << "\n";
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw fedrr::ConfigError("cannot write " + json_path);
    out << text << "\n";
  }
  return 0;
}

int cmd_run(const fedrr::ExperimentConfig& cfg) {
  const fedrr::RunReport report = fedrr::run_experiment(cfg);
  std::printf("variant=%s d=%g H=%.4f replications=%zu\n", cfg.monitor.variant.c_str(),
              cfg.monitor.d, report.resolved_limit, report.replications.size());
  std::printf("alarmed=%d censored=%d\n", report.alarmed_count, report.censored_count);
  if (report.alarmed_count > 0) {
    std::printf("detection ARL = %.3f (std %.3f, se %.3f)\n", report.arl_mean, report.arl_std,
                report.arl_std_error);
    if (cfg.attack.kind != fedrr::AttackKind::none) {
      std::printf("correct flag rate = %.3f\n", report.correct_flag_rate);
    }
  }
  if (!report.replications.empty()) {
    std::printf("subspace dim q = %zu (first replication)\n",
                report.replications.front().subspace_dim);
  }
  if (!cfg.output_dir.empty()) {
    std::printf("outputs written to %s\n", cfg.output_dir.c_str());
  }
  return 0;
}

int cmd_lowrank(const fedrr::ExperimentConfig& cfg, const std::string& csv_path) {
  const fedrr::LowrankReport report = fedrr::run_lowrank_diagnostic(cfg);
  std::printf("%6s %8s %6s %6s %6s\n", "round", "columns", "q90", "q95", "q99");
  for (std::size_t i = 0; i < report.round.size(); ++i) {
    std::printf("%6d %8d %6d %6d %6d\n", report.round[i], report.columns[i],
                report.components90[i], report.components95[i], report.components99[i]);
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw fedrr::ConfigError("cannot write " + csv_path);
    out << fedrr::lowrank_to_csv(report);
    std::printf("csv written to %s\n", csv_path.c_str());
  }
  return 0;
}

int cmd_replay(const std::string& trace_path) {
  const fedrr::ReplayResult res = fedrr::replay_trace_file(trace_path);
  if (res.ok) {
    std::printf("trace ok: %d rounds verified\n", res.rounds);
    return 0;
  }
  std::fprintf(stderr, "trace audit failed: %s\n", res.message.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedRR: adversarial client detection for federated learning"};
  app.require_subcommand(1);

  // calibrate
  auto* calibrate = app.add_subcommand(
      "calibrate", "Find the control limit H for a target in-control ARL");
  fedrr::CalibrationConfig cal;
  calibrate->add_option("--clients,-K", cal.clients, "number of clients");
  calibrate->add_option("--d", cal.d, "CUSUM reference value");
  calibrate->add_option("--arl0", cal.target_arl0, "target in-control ARL");
  calibrate->add_option("--replications,-M", cal.replications, "Monte-Carlo replications");
  calibrate->add_option("--seed", cal.rng_seed, "rng seed");
  calibrate->add_option("--h-lo", cal.h_lo, "initial lower bracket");
  calibrate->add_option("--h-hi", cal.h_hi, "initial upper bracket");
  calibrate->add_option("--tolerance", cal.tolerance, "bracket width tolerance on H");
  calibrate->add_option("--max-rounds", cal.max_rounds, "per-replication round cap");
  calibrate->add_option("--threads", cal.threads, "worker threads (0 = all cores)");
  std::string cal_json;
  calibrate->add_option("--json", cal_json, "also write the result to this file");

  // run
  auto* run = app.add_subcommand("run", "Run a monitored federated learning experiment");
  std::string run_config;
  std::vector<std::string> run_sets;
  std::string run_output;
  run->add_option("--config,-c", run_config, "experiment config file");
  run->add_option("--set,-s", run_sets, "override a config key (key=value), repeatable");
  run->add_option("--output,-o", run_output, "output directory (overrides output_dir)");

  // lowrank
  auto* lowrank = app.add_subcommand(
      "lowrank", "Explained-variance profile of the Phase I update matrix");
  std::string lr_config, lr_csv;
  std::vector<std::string> lr_sets;
  lowrank->add_option("--config,-c", lr_config, "experiment config file");
  lowrank->add_option("--set,-s", lr_sets, "override a config key (key=value), repeatable");
  lowrank->add_option("--csv", lr_csv, "write the table to this csv file");

  // replay-trace
  auto* replay = app.add_subcommand("replay-trace", "Audit a Phase II trace file");
  std::string trace_path;
  replay->add_option("trace", trace_path, "trace.csv to audit")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (calibrate->parsed()) return cmd_calibrate(cal, cal_json);
    if (run->parsed()) {
      fedrr::ExperimentConfig cfg = load_config(run_config, run_sets);
      if (!run_output.empty()) cfg.output_dir = run_output;
      cfg.output_dir = resolve_output_dir(cfg.output_dir);
      return cmd_run(cfg);
    }
    if (lowrank->parsed()) {
      const fedrr::ExperimentConfig cfg = load_config(lr_config, lr_sets);
      return cmd_lowrank(cfg, lr_csv);
    }
    if (replay->parsed()) return cmd_replay(trace_path);
  } catch (const fedrr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const fedrr::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
