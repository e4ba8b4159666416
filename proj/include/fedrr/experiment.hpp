#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fedrr/attacks.hpp"
#include "fedrr/calibration.hpp"
#include "fedrr/common.hpp"
#include "fedrr/dataset.hpp"
#include "fedrr/fedsim.hpp"
#include "fedrr/monitor.hpp"

namespace fedrr {

struct ModelSpec {
  std::string kind = "mlp";  // logistic | mlp
  int input_dim = 20;
  int classes = 10;
  int hidden = 50;

  bool operator==(const ModelSpec&) const = default;
};

struct DataSpec {
  std::string kind = "synthetic";  // synthetic | mnist
  int samples_per_client = 128;
  double spread = 2.0;     // mixture class-mean scale
  double noise_std = 1.0;  // within-class scatter
  bool resample_each_round = false;
  std::string mnist_images;
  std::string mnist_labels;

  bool operator==(const DataSpec&) const = default;
};

struct MonitorSpec {
  std::string variant = "fedrr";  // fedrr | norm
  double d = 0.5;
  double limit = 0.0;  // H; 0 means calibrate for target_arl0 first
  double target_arl0 = 30.0;
  int calibration_replications = 10000;
  bool continue_after_alarm = false;
  bool exclude_flagged = false;

  bool operator==(const MonitorSpec&) const = default;
};

// Full declarative description of one simulation study. The flat key paths
// of the on-disk format mirror the nesting here (see entries_from_config).
struct ExperimentConfig {
  std::uint64_t seed = 1;
  int clients = 5;         // K
  int phase1_rounds = 50;  // T0
  int max_phase2_rounds = 1000;
  double variance_target = 0.95;
  int replications = 1;
  std::string output_dir;
  int threads = 0;

  ModelSpec model;
  DataSpec data;
  double learning_rate = 0.001;
  int epochs = 3;
  int batch = 128;
  MonitorSpec monitor;
  AttackSpec attack;

  void validate() const;
  TrainingConfig training_config() const;

  bool operator==(const ExperimentConfig&) const = default;
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ExperimentConfig config_from_entries(const ConfigEntries& entries);
ConfigEntries entries_from_config(const ExperimentConfig& cfg);

// Flat `key = value` text, one pair per line, '#' comments.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig parse_config_file(const std::string& path);
std::string emit_config(const ExperimentConfig& cfg);

struct ReplicationResult {
  int replication = 0;
  bool alarmed = false;
  bool censored = false;
  int detection_rounds = 0;  // rounds from T0+1 to the alarm, inclusive
  int alarm_round = 0;       // absolute communication round of the alarm
  int flagged_client = 0;    // 1-based, 0 when no alarm
  bool correct_flag = false;
  std::size_t subspace_dim = 0;
  std::vector<double> variance_profile;
};

struct RunReport {
  ExperimentConfig config;  // echo with the resolved control limit
  double resolved_limit = 0.0;
  bool calibrated = false;
  ArlEstimate calibration;  // only meaningful when calibrated
  std::vector<ReplicationResult> replications;
  int alarmed_count = 0;
  int censored_count = 0;
  double arl_mean = 0.0;  // over alarmed replications
  double arl_std = 0.0;
  double arl_std_error = 0.0;
  double correct_flag_rate = 0.0;  // among alarmed replications
};

// Executes the full two-phase pipeline for every replication: T0 Phase I
// rounds to collect the update matrix, PCA for the subspace, then monitored
// Phase II rounds until alarm or the round cap. When output_dir is set,
// writes report.json plus one directory per replication with its trace.csv
// and report.json.
RunReport run_experiment(const ExperimentConfig& cfg);

std::string report_to_json(const RunReport& report);

struct LowrankReport {
  std::vector<int> round;       // T = 1..T0
  std::vector<int> columns;     // T*K
  std::vector<int> components90;
  std::vector<int> components95;
  std::vector<int> components99;
  std::vector<double> final_profile;  // explained-variance profile at T = T0
};

// Phase-I-only study: how many principal components explain 90/95/99% of
// the variance of the first T*K update columns, for T = 1..T0.
LowrankReport run_lowrank_diagnostic(const ExperimentConfig& cfg);

std::string lowrank_to_csv(const LowrankReport& report);

struct ReplayResult {
  bool ok = true;
  int rounds = 0;
  std::string message;
};

// Re-derives every CUSUM row of a trace file from its Z column and checks
// ranks, statistics, max aggregation, and the alarm rule.
ReplayResult replay_trace_file(const std::string& path);

}  // namespace fedrr
