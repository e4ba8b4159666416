#include "fedrr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "fedrr/linalg.hpp"
#include "fedrr/model.hpp"
#include "fedrr/parallel.hpp"
#include "fedrr/stats.hpp"
#include "json.hpp"

namespace fedrr {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + value + "'");
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + value + "'");
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (clients < 2) throw ConfigError("clients must be at least 2");
  if (phase1_rounds < 1) throw ConfigError("phase1_rounds must be >= 1");
  if (max_phase2_rounds < 1) throw ConfigError("max_phase2_rounds must be >= 1");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw ConfigError("variance_target must lie in (0,1]");
  }
  if (replications < 1) throw ConfigError("replications must be >= 1");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (model.kind != "logistic" && model.kind != "mlp") {
    throw ConfigError("model.kind must be logistic or mlp");
  }
  if (model.input_dim < 1 || model.classes < 2 || model.hidden < 1) {
    throw ConfigError("model dimensions out of range");
  }
  if (data.kind == "synthetic") {
    if (data.samples_per_client < 1) {
      throw ConfigError("data.samples_per_client must be >= 1");
    }
    if (data.spread < 0.0 || data.noise_std < 0.0) {
      throw ConfigError("mixture parameters must be >= 0");
    }
  } else if (data.kind == "mnist") {
    if (data.mnist_images.empty() || data.mnist_labels.empty()) {
      throw ConfigError("mnist data requires data.mnist_images and data.mnist_labels");
    }
  } else {
    throw ConfigError("data.kind must be synthetic or mnist");
  }
  parse_stat_variant(monitor.variant);
  if (!(monitor.d > 0.0)) throw ConfigError("monitor.d must be positive");
  if (monitor.limit < 0.0) throw ConfigError("monitor.limit must be >= 0");
  if (monitor.limit == 0.0 && !(monitor.target_arl0 > 1.0)) {
    throw ConfigError("monitor.arl0 must exceed 1 when no limit is given");
  }
  if (monitor.calibration_replications < 1) {
    throw ConfigError("monitor.calibration_replications must be >= 1");
  }
  attack.validate(clients);
  if (attack.kind != AttackKind::none && attack.start_round <= phase1_rounds) {
    throw ConfigError("attack.start_round must exceed phase1_rounds (Phase I is attack-free)");
  }
}

TrainingConfig ExperimentConfig::training_config() const {
  TrainingConfig train;
  train.learning_rate = learning_rate;
  train.epochs_per_round = epochs;
  train.minibatch_size = batch;
  train.rounds = phase1_rounds + max_phase2_rounds;
  train.client_count = clients;
  train.rng_seed = seed;
  return train;
}

ExperimentConfig config_from_entries(const ConfigEntries& entries) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : entries) {
    if (key == "seed") cfg.seed = to_u64(key, value);
    else if (key == "clients") cfg.clients = to_int(key, value);
    else if (key == "phase1_rounds") cfg.phase1_rounds = to_int(key, value);
    else if (key == "max_phase2_rounds") cfg.max_phase2_rounds = to_int(key, value);
    else if (key == "variance_target") cfg.variance_target = to_double(key, value);
    else if (key == "replications") cfg.replications = to_int(key, value);
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "threads") cfg.threads = to_int(key, value);
    else if (key == "model.kind") cfg.model.kind = value;
    else if (key == "model.input_dim") cfg.model.input_dim = to_int(key, value);
    else if (key == "model.classes") cfg.model.classes = to_int(key, value);
    else if (key == "model.hidden") cfg.model.hidden = to_int(key, value);
    else if (key == "data.kind") cfg.data.kind = value;
    else if (key == "data.samples_per_client") cfg.data.samples_per_client = to_int(key, value);
    else if (key == "data.spread") cfg.data.spread = to_double(key, value);
    else if (key == "data.noise_std") cfg.data.noise_std = to_double(key, value);
    else if (key == "data.resample_each_round") cfg.data.resample_each_round = to_bool(key, value);
    else if (key == "data.mnist_images") cfg.data.mnist_images = value;
    else if (key == "data.mnist_labels") cfg.data.mnist_labels = value;
    else if (key == "train.learning_rate") cfg.learning_rate = to_double(key, value);
    else if (key == "train.epochs") cfg.epochs = to_int(key, value);
    else if (key == "train.batch") cfg.batch = to_int(key, value);
    else if (key == "monitor.variant") cfg.monitor.variant = value;
    else if (key == "monitor.d") cfg.monitor.d = to_double(key, value);
    else if (key == "monitor.limit") cfg.monitor.limit = to_double(key, value);
    else if (key == "monitor.arl0") cfg.monitor.target_arl0 = to_double(key, value);
    else if (key == "monitor.calibration_replications")
      cfg.monitor.calibration_replications = to_int(key, value);
    else if (key == "monitor.continue_after_alarm")
      cfg.monitor.continue_after_alarm = to_bool(key, value);
    else if (key == "monitor.exclude_flagged") cfg.monitor.exclude_flagged = to_bool(key, value);
    else if (key == "attack.kind") cfg.attack.kind = parse_attack_kind(value);
    else if (key == "attack.client") cfg.attack.target_client = to_int(key, value);
    else if (key == "attack.start_round") cfg.attack.start_round = to_int(key, value);
    else if (key == "attack.ratio") cfg.attack.ratio = to_double(key, value);
    else if (key == "attack.source_class") cfg.attack.source_class = to_int(key, value);
    else if (key == "attack.target_class")
      cfg.attack.target_class = (value == "random") ? -1 : to_int(key, value);
    else if (key == "attack.noise_mean") cfg.attack.noise_mean = to_double(key, value);
    else if (key == "attack.noise_param") cfg.attack.noise_param = to_double(key, value);
    else if (key == "attack.noise_param_is_variance")
      cfg.attack.noise_param_is_variance = to_bool(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  return cfg;
}

ConfigEntries entries_from_config(const ExperimentConfig& cfg) {
  ConfigEntries e;
  e.emplace_back("seed", std::to_string(cfg.seed));
  e.emplace_back("clients", std::to_string(cfg.clients));
  e.emplace_back("phase1_rounds", std::to_string(cfg.phase1_rounds));
  e.emplace_back("max_phase2_rounds", std::to_string(cfg.max_phase2_rounds));
  e.emplace_back("variance_target", fmt_double(cfg.variance_target));
  e.emplace_back("replications", std::to_string(cfg.replications));
  e.emplace_back("output_dir", cfg.output_dir);
  e.emplace_back("threads", std::to_string(cfg.threads));
  e.emplace_back("model.kind", cfg.model.kind);
  e.emplace_back("model.input_dim", std::to_string(cfg.model.input_dim));
  e.emplace_back("model.classes", std::to_string(cfg.model.classes));
  e.emplace_back("model.hidden", std::to_string(cfg.model.hidden));
  e.emplace_back("data.kind", cfg.data.kind);
  e.emplace_back("data.samples_per_client", std::to_string(cfg.data.samples_per_client));
  e.emplace_back("data.spread", fmt_double(cfg.data.spread));
  e.emplace_back("data.noise_std", fmt_double(cfg.data.noise_std));
  e.emplace_back("data.resample_each_round", cfg.data.resample_each_round ? "true" : "false");
  e.emplace_back("data.mnist_images", cfg.data.mnist_images);
  e.emplace_back("data.mnist_labels", cfg.data.mnist_labels);
  e.emplace_back("train.learning_rate", fmt_double(cfg.learning_rate));
  e.emplace_back("train.epochs", std::to_string(cfg.epochs));
  e.emplace_back("train.batch", std::to_string(cfg.batch));
  e.emplace_back("monitor.variant", cfg.monitor.variant);
  e.emplace_back("monitor.d", fmt_double(cfg.monitor.d));
  e.emplace_back("monitor.limit", fmt_double(cfg.monitor.limit));
  e.emplace_back("monitor.arl0", fmt_double(cfg.monitor.target_arl0));
  e.emplace_back("monitor.calibration_replications",
                 std::to_string(cfg.monitor.calibration_replications));
  e.emplace_back("monitor.continue_after_alarm",
                 cfg.monitor.continue_after_alarm ? "true" : "false");
  e.emplace_back("monitor.exclude_flagged", cfg.monitor.exclude_flagged ? "true" : "false");
  e.emplace_back("attack.kind", to_string(cfg.attack.kind));
  e.emplace_back("attack.client", std::to_string(cfg.attack.target_client));
  e.emplace_back("attack.start_round", std::to_string(cfg.attack.start_round));
  e.emplace_back("attack.ratio", fmt_double(cfg.attack.ratio));
  e.emplace_back("attack.source_class", std::to_string(cfg.attack.source_class));
  e.emplace_back("attack.target_class", cfg.attack.target_class < 0
                                            ? std::string("random")
                                            : std::to_string(cfg.attack.target_class));
  e.emplace_back("attack.noise_mean", fmt_double(cfg.attack.noise_mean));
  e.emplace_back("attack.noise_param", fmt_double(cfg.attack.noise_param));
  e.emplace_back("attack.noise_param_is_variance",
                 cfg.attack.noise_param_is_variance ? "true" : "false");
  return e;
}

ExperimentConfig parse_config(std::istream& in) {
  ConfigEntries entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config_from_entries(entries);
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in);
}

std::string emit_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, value] : entries_from_config(cfg)) {
    out << key << " = " << value << "\n";
  }
  return out.str();
}

// --------------------------------------------------------------------------
// Experiment execution
// --------------------------------------------------------------------------

namespace {

struct TraceRow {
  int round = 0;
  int client = 0;
  double residual = 0.0;
  int rank = 0;
  double z = 0.0;
  double s = 0.0;
  double max_s = 0.0;
  bool alarmed = false;
  int flagged = 0;
};

struct DataContext {
  bool is_mnist = false;
  MixtureSpec mixture;
  std::vector<ParamVector> means;
  ClientDataset mnist_pool;
};

DataContext make_data_context(const ExperimentConfig& cfg) {
  DataContext ctx;
  if (cfg.data.kind == "mnist") {
    ctx.is_mnist = true;
    ctx.mnist_pool = load_mnist(cfg.data.mnist_images, cfg.data.mnist_labels);
    if (ctx.mnist_pool.feature_dim != cfg.model.input_dim) {
      throw ConfigError("model.input_dim does not match the MNIST image size");
    }
    if (ctx.mnist_pool.num_classes != cfg.model.classes) {
      throw ConfigError("model.classes must be 10 for MNIST");
    }
    return ctx;
  }
  ctx.mixture.feature_dim = cfg.model.input_dim;
  ctx.mixture.num_classes = cfg.model.classes;
  ctx.mixture.spread = cfg.data.spread;
  ctx.mixture.noise_std = cfg.data.noise_std;
  RngStream means_rng(cfg.seed, "mixture-means");
  ctx.means = mixture_means(ctx.mixture, means_rng);
  return ctx;
}

std::vector<ClientDataset> fixed_datasets(const ExperimentConfig& cfg, const DataContext& ctx,
                                          int rep) {
  RngStream partition_rng(cfg.seed, "partition", {static_cast<std::uint64_t>(rep)});
  if (ctx.is_mnist) {
    auto shards = make_iid_partition(ctx.mnist_pool, cfg.clients, partition_rng);
    const auto keep = static_cast<std::size_t>(cfg.data.samples_per_client);
    for (auto& shard : shards) {
      if (keep > 0 && shard.size() > keep) {
        shard.labels.resize(keep);
        shard.features.resize(keep * static_cast<std::size_t>(shard.feature_dim));
      }
      if (shard.size() == 0) throw ConfigError("mnist shard is empty");
    }
    return shards;
  }
  RngStream data_rng(cfg.seed, "data", {static_cast<std::uint64_t>(rep)});
  const std::size_t total =
      static_cast<std::size_t>(cfg.data.samples_per_client) * cfg.clients;
  const ClientDataset pool = sample_mixture(ctx.mixture, ctx.means, total, data_rng);
  return make_iid_partition(pool, cfg.clients, partition_rng);
}

// Fresh IID draw for every (round, client), matching the per-round data
// indexing D_{t,k}.
std::vector<ClientDataset> round_datasets(const ExperimentConfig& cfg, const DataContext& ctx,
                                          int rep, int round) {
  if (ctx.is_mnist) {
    // Without-replacement resampling of the pool each round.
    RngStream partition_rng(cfg.seed, "partition",
                            {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(round)});
    auto shards = make_iid_partition(ctx.mnist_pool, cfg.clients, partition_rng);
    const auto keep = static_cast<std::size_t>(cfg.data.samples_per_client);
    for (auto& shard : shards) {
      if (keep > 0 && shard.size() > keep) {
        shard.labels.resize(keep);
        shard.features.resize(keep * static_cast<std::size_t>(shard.feature_dim));
      }
    }
    return shards;
  }
  std::vector<ClientDataset> out(static_cast<std::size_t>(cfg.clients));
  for (int k = 0; k < cfg.clients; ++k) {
    RngStream data_rng(cfg.seed, "data",
                       {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(round),
                        static_cast<std::uint64_t>(k + 1)});
    out[static_cast<std::size_t>(k)] = sample_mixture(
        ctx.mixture, ctx.means, static_cast<std::size_t>(cfg.data.samples_per_client), data_rng);
    out[static_cast<std::size_t>(k)].client_id = k + 1;
  }
  return out;
}

ReplicationResult run_single(const ExperimentConfig& cfg, const LossModel& model,
                             const DataContext& ctx, double limit, int rep,
                             std::vector<TraceRow>* trace) {
  const int clients = cfg.clients;
  const int t0 = cfg.phase1_rounds;
  const TrainingConfig train = cfg.training_config();
  const StatVariant variant = parse_stat_variant(cfg.monitor.variant);

  std::vector<RngStream> shuffles;
  shuffles.reserve(static_cast<std::size_t>(clients));
  for (int k = 0; k < clients; ++k) {
    shuffles.emplace_back(cfg.seed, "client-shuffle",
                          std::initializer_list<std::uint64_t>{
                              static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(k + 1)});
  }
  RngStream monitor_rng(cfg.seed, "monitor", {static_cast<std::uint64_t>(rep)});
  std::unique_ptr<Attacker> attacker;
  if (cfg.attack.kind != AttackKind::none) {
    attacker = std::make_unique<Attacker>(
        cfg.attack, RngStream(cfg.seed, "attack", {static_cast<std::uint64_t>(rep)}));
  }

  std::vector<ClientDataset> fixed;
  if (!cfg.data.resample_each_round) fixed = fixed_datasets(cfg, ctx, rep);
  std::vector<ClientDataset> scratch;
  auto data_for_round = [&](int t) -> const std::vector<ClientDataset>& {
    if (!cfg.data.resample_each_round) return fixed;
    scratch = round_datasets(cfg, ctx, rep, t);
    return scratch;
  };

  ParamVector global;
  {
    RngStream init_rng(cfg.seed, "init", {static_cast<std::uint64_t>(rep)});
    global = model.init_params(init_rng);
  }

  ReplicationResult result;
  result.replication = rep;

  UpdateBuffer buffer(static_cast<std::size_t>(t0) * clients);
  for (int t = 1; t <= t0; ++t) {
    RoundRecord rec =
        run_round(t, model, global, data_for_round(t), train, shuffles, attacker.get());
    for (auto& delta : rec.deltas) buffer.append(std::move(delta));
    global = std::move(rec.global_after);
  }
  const SubspaceBasis basis = truncated_pca(buffer, cfg.variance_target);
  result.variance_profile = explained_variance_profile(buffer);
  result.subspace_dim = basis.q;

  CusumBank bank(clients, cfg.monitor.d, limit);
  std::vector<double> residuals(static_cast<std::size_t>(clients));
  std::vector<double> scores(static_cast<std::size_t>(clients));
  std::vector<char> excluded(static_cast<std::size_t>(clients), 0);
  bool first_alarm_seen = false;

  for (int t = t0 + 1; t <= t0 + cfg.max_phase2_rounds; ++t) {
    RoundRecord rec =
        run_round(t, model, global, data_for_round(t), train, shuffles, attacker.get());
    for (int k = 0; k < clients; ++k) {
      residuals[static_cast<std::size_t>(k)] =
          phase2_statistic(rec.deltas[static_cast<std::size_t>(k)], basis, variant);
    }
    const RankVector ranks = rank_residuals(residuals, monitor_rng);
    for (int k = 0; k < clients; ++k) {
      scores[static_cast<std::size_t>(k)] =
          normal_score(ranks.ranks[static_cast<std::size_t>(k)], clients, monitor_rng);
    }
    const MonitorDecision decision = bank.step(scores);

    if (trace) {
      for (int k = 0; k < clients; ++k) {
        TraceRow row;
        row.round = t;
        row.client = k + 1;
        row.residual = residuals[static_cast<std::size_t>(k)];
        row.rank = ranks.ranks[static_cast<std::size_t>(k)];
        row.z = scores[static_cast<std::size_t>(k)];
        row.s = bank.stats()[static_cast<std::size_t>(k)];
        row.max_s = decision.max_stat;
        row.alarmed = decision.alarmed;
        row.flagged = decision.flagged_client;
        trace->push_back(row);
      }
    }

    if (decision.alarmed && !first_alarm_seen) {
      first_alarm_seen = true;
      result.alarmed = true;
      result.alarm_round = t;
      result.detection_rounds = t - t0;
      result.flagged_client = decision.flagged_client;
      result.correct_flag = cfg.attack.kind != AttackKind::none &&
                            decision.flagged_client == cfg.attack.target_client;
    }

    if (decision.alarmed && cfg.monitor.exclude_flagged) {
      excluded[static_cast<std::size_t>(decision.flagged_client - 1)] = 1;
    }

    // Aggregate for the next round, honoring exclusions when enabled.
    bool any_excluded = false;
    for (char e : excluded) any_excluded |= (e != 0);
    if (!any_excluded) {
      global = std::move(rec.global_after);
    } else {
      std::vector<ParamVector> kept;
      for (int k = 0; k < clients; ++k) {
        if (!excluded[static_cast<std::size_t>(k)]) {
          kept.push_back(std::move(rec.transmitted[static_cast<std::size_t>(k)]));
        }
      }
      if (kept.empty()) throw NumericalError("all clients excluded from aggregation");
      global = aggregate(kept);
    }

    if (decision.alarmed) {
      if (!cfg.monitor.continue_after_alarm) break;
      bank.reset_client(decision.flagged_client);
    }
  }

  if (!result.alarmed) {
    result.censored = true;
    result.detection_rounds = cfg.max_phase2_rounds;
  }
  return result;
}

void write_trace(const std::string& path, const ExperimentConfig& cfg, double limit, int rep,
                 const std::vector<TraceRow>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write trace file: " + path);
  out << "# fedrr trace v1\n";
  out << "# variant=" << cfg.monitor.variant << " clients=" << cfg.clients
      << " phase1_rounds=" << cfg.phase1_rounds << " d=" << fmt_double(cfg.monitor.d)
      << " limit=" << fmt_double(limit) << " seed=" << cfg.seed << " replication=" << rep
      << "\n";
  out << "round,client,residual,rank,z,s,max_s,alarmed,flagged_client\n";
  for (const auto& r : rows) {
    out << r.round << ',' << r.client << ',' << fmt_double(r.residual) << ',' << r.rank << ','
        << fmt_double(r.z) << ',' << fmt_double(r.s) << ',' << fmt_double(r.max_s) << ','
        << (r.alarmed ? 1 : 0) << ',' << r.flagged << "\n";
  }
}

nlohmann::ordered_json replication_json(const ReplicationResult& r, bool with_profile) {
  nlohmann::ordered_json j;
  j["replication"] = r.replication;
  j["alarmed"] = r.alarmed;
  j["censored"] = r.censored;
  j["detection_rounds"] = r.detection_rounds;
  j["alarm_round"] = r.alarm_round;
  j["flagged_client"] = r.flagged_client;
  j["correct_flag"] = r.correct_flag;
  j["subspace_dim"] = r.subspace_dim;
  if (with_profile) j["explained_variance_profile"] = r.variance_profile;
  return j;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  RunReport report;
  report.config = cfg;

  const auto model =
      make_model(cfg.model.kind, cfg.model.input_dim, cfg.model.classes, cfg.model.hidden);
  const DataContext ctx = make_data_context(cfg);

  double limit = cfg.monitor.limit;
  if (limit <= 0.0) {
    CalibrationConfig cal;
    cal.clients = cfg.clients;
    cal.d = cfg.monitor.d;
    cal.target_arl0 = cfg.monitor.target_arl0;
    cal.replications = cfg.monitor.calibration_replications;
    cal.rng_seed = cfg.seed;
    cal.threads = cfg.threads;
    const CalibrationResult res = find_limit(cal);
    limit = res.limit;
    report.calibrated = true;
    report.calibration = res.arl;
  }
  report.resolved_limit = limit;
  report.config.monitor.limit = limit;

  const auto reps = static_cast<std::size_t>(cfg.replications);
  report.replications.resize(reps);
  const bool keep_traces = !cfg.output_dir.empty();
  std::vector<std::vector<TraceRow>> traces(keep_traces ? reps : 0);

  parallel_for(reps, cfg.threads, [&](std::size_t r) {
    std::vector<TraceRow>* trace = keep_traces ? &traces[r] : nullptr;
    report.replications[r] =
        run_single(cfg, *model, ctx, limit, static_cast<int>(r), trace);
  });

  std::vector<double> detection;
  int correct = 0;
  for (const auto& r : report.replications) {
    if (r.censored) {
      ++report.censored_count;
    } else {
      ++report.alarmed_count;
      detection.push_back(r.detection_rounds);
      if (r.correct_flag) ++correct;
    }
  }
  const MeanStd ms = mean_std(detection);
  report.arl_mean = ms.mean;
  report.arl_std = ms.stddev;
  report.arl_std_error = ms.std_error;
  report.correct_flag_rate =
      report.alarmed_count > 0 ? static_cast<double>(correct) / report.alarmed_count : 0.0;

  if (keep_traces) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    for (std::size_t r = 0; r < reps; ++r) {
      char name[32];
      std::snprintf(name, sizeof(name), "rep_%03d", static_cast<int>(r));
      const fs::path rep_dir = fs::path(cfg.output_dir) / name;
      fs::create_directories(rep_dir);
      write_trace((rep_dir / "trace.csv").string(), cfg, limit, static_cast<int>(r), traces[r]);
      std::ofstream rep_out(rep_dir / "report.json");
      rep_out << replication_json(report.replications[r], true).dump(2) << "\n";
    }
    std::ofstream out(fs::path(cfg.output_dir) / "report.json");
    out << report_to_json(report) << "\n";
  }
  return report;
}

std::string report_to_json(const RunReport& report) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json cfg_json;
  for (const auto& [key, value] : entries_from_config(report.config)) {
    cfg_json[key] = value;
  }
  j["config"] = cfg_json;
  j["resolved_limit"] = report.resolved_limit;
  if (report.calibrated) {
    j["calibration"] = {{"arl_mean", report.calibration.mean},
                        {"arl_std_error", report.calibration.std_error},
                        {"replications", report.calibration.replications},
                        {"censored", report.calibration.censored}};
  }
  nlohmann::ordered_json agg;
  agg["replications"] = report.replications.size();
  agg["alarmed"] = report.alarmed_count;
  agg["censored"] = report.censored_count;
  agg["arl_mean"] = report.arl_mean;
  agg["arl_std"] = report.arl_std;
  agg["arl_std_error"] = report.arl_std_error;
  agg["correct_flag_rate"] = report.correct_flag_rate;
  j["aggregate"] = agg;
  if (!report.replications.empty()) {
    j["phase1"] = {{"subspace_dim", report.replications.front().subspace_dim},
                   {"explained_variance_profile", report.replications.front().variance_profile}};
  }
  nlohmann::ordered_json reps = nlohmann::ordered_json::array();
  for (const auto& r : report.replications) {
    reps.push_back(replication_json(r, false));
  }
  j["replications"] = reps;
  return j.dump(2);
}

LowrankReport run_lowrank_diagnostic(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.attack.kind != AttackKind::none) {
    throw ConfigError("lowrank diagnostic requires attack.kind = none");
  }
  const auto model =
      make_model(cfg.model.kind, cfg.model.input_dim, cfg.model.classes, cfg.model.hidden);
  const DataContext ctx = make_data_context(cfg);
  const TrainingConfig train = cfg.training_config();
  const int clients = cfg.clients;
  const int t0 = cfg.phase1_rounds;

  std::vector<RngStream> shuffles;
  for (int k = 0; k < clients; ++k) {
    shuffles.emplace_back(cfg.seed, "client-shuffle",
                          std::initializer_list<std::uint64_t>{0, static_cast<std::uint64_t>(k + 1)});
  }
  std::vector<ClientDataset> fixed;
  if (!cfg.data.resample_each_round) fixed = fixed_datasets(cfg, ctx, 0);
  std::vector<ClientDataset> scratch;

  ParamVector global;
  {
    RngStream init_rng(cfg.seed, "init", {0});
    global = model->init_params(init_rng);
  }
  std::vector<ParamVector> columns;
  columns.reserve(static_cast<std::size_t>(t0) * clients);
  for (int t = 1; t <= t0; ++t) {
    const std::vector<ClientDataset>* data = &fixed;
    if (cfg.data.resample_each_round) {
      scratch = round_datasets(cfg, ctx, 0, t);
      data = &scratch;
    }
    RoundRecord rec = run_round(t, *model, global, *data, train, shuffles, nullptr);
    for (auto& delta : rec.deltas) columns.push_back(std::move(delta));
    global = std::move(rec.global_after);
  }

  const std::size_t m = columns.size();
  const std::vector<double> gram = detail::gram_of_columns(columns);

  auto components_for = [](const std::vector<double>& spectrum, double frac) {
    double total = 0.0;
    for (double l : spectrum) total += l;
    double cum = 0.0;
    int count = 0;
    for (double l : spectrum) {
      if (l <= 0.0) break;
      cum += l;
      ++count;
      if (cum >= frac * total) break;
    }
    return count;
  };

  LowrankReport report;
  report.round.resize(static_cast<std::size_t>(t0));
  report.columns.resize(static_cast<std::size_t>(t0));
  report.components90.resize(static_cast<std::size_t>(t0));
  report.components95.resize(static_cast<std::size_t>(t0));
  report.components99.resize(static_cast<std::size_t>(t0));

  // Full spectrum first: the T = T0 entry and the final profile come from
  // it, and it is where a degenerate (all-zero) Phase I shows up.
  const std::vector<double> full_spectrum = detail::spectrum_from_gram(gram, m);
  {
    double total = 0.0;
    for (double l : full_spectrum) total += l;
    if (total <= 0.0) {
      throw NumericalError("degenerate training: Phase I updates are all zero");
    }
    double cum = 0.0;
    for (double l : full_spectrum) {
      if (l <= 0.0) break;
      cum += l;
      report.final_profile.push_back(cum / total);
    }
    report.round.back() = t0;
    report.columns.back() = static_cast<int>(m);
    report.components90.back() = components_for(full_spectrum, 0.90);
    report.components95.back() = components_for(full_spectrum, 0.95);
    report.components99.back() = components_for(full_spectrum, 0.99);
  }

  parallel_for(static_cast<std::size_t>(t0 - 1), cfg.threads, [&](std::size_t idx) {
    const int t = static_cast<int>(idx) + 1;
    const std::size_t n = static_cast<std::size_t>(t) * clients;
    std::vector<double> sub(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t jcol = 0; jcol < n; ++jcol) sub[i * n + jcol] = gram[i * m + jcol];
    }
    const std::vector<double> spectrum = detail::spectrum_from_gram(std::move(sub), n);
    report.round[idx] = t;
    report.columns[idx] = static_cast<int>(n);
    report.components90[idx] = components_for(spectrum, 0.90);
    report.components95[idx] = components_for(spectrum, 0.95);
    report.components99[idx] = components_for(spectrum, 0.99);
  });
  return report;
}

std::string lowrank_to_csv(const LowrankReport& report) {
  std::ostringstream out;
  out << "round,columns,components90,components95,components99\n";
  for (std::size_t i = 0; i < report.round.size(); ++i) {
    out << report.round[i] << ',' << report.columns[i] << ',' << report.components90[i] << ','
        << report.components95[i] << ',' << report.components99[i] << "\n";
  }
  return out.str();
}

// --------------------------------------------------------------------------
// Trace replay audit
// --------------------------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

ReplayResult replay_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace file: " + path);
  ReplayResult result;

  std::string line;
  double d = -1.0, limit = -1.0;
  int clients = 0;
  // Header: "# fedrr trace v1" then "# key=value ..." then the CSV header.
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      for (const auto& token : split(line.substr(1), ' ')) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = token.substr(0, eq);
        const std::string value = token.substr(eq + 1);
        if (key == "d") d = std::stod(value);
        else if (key == "limit") limit = std::stod(value);
        else if (key == "clients") clients = std::stoi(value);
      }
      continue;
    }
    break;  // CSV column header line
  }
  if (d <= 0.0 || limit <= 0.0 || clients < 2) {
    throw ConfigError("trace header is missing d/limit/clients metadata");
  }

  std::vector<double> s_prev(static_cast<std::size_t>(clients), 0.0);
  std::vector<double> residual(static_cast<std::size_t>(clients));
  std::vector<double> z(static_cast<std::size_t>(clients));
  std::vector<double> s(static_cast<std::size_t>(clients));
  std::vector<int> rank(static_cast<std::size_t>(clients));
  auto fail = [&](int round, const std::string& msg) {
    result.ok = false;
    result.message = "round " + std::to_string(round) + ": " + msg;
    return result;
  };

  int pending_reset = 0;  // continue-after-alarm zeroes the flagged chart
  while (in) {
    int round = -1;
    double max_s_stored = 0.0;
    int alarmed_stored = 0, flagged_stored = 0;
    for (int k = 0; k < clients; ++k) {
      if (!std::getline(in, line)) {
        if (k == 0) {
          return result;  // clean end of file
        }
        return fail(round, "truncated round block");
      }
      const auto f = split(line, ',');
      if (f.size() != 9) return fail(round, "expected 9 columns, got " + std::to_string(f.size()));
      const int row_round = std::stoi(f[0]);
      const int row_client = std::stoi(f[1]);
      if (k == 0) {
        round = row_round;
      } else if (row_round != round) {
        return fail(round, "round changed mid-block");
      }
      if (row_client != k + 1) return fail(round, "clients out of order");
      residual[static_cast<std::size_t>(k)] = std::stod(f[2]);
      rank[static_cast<std::size_t>(k)] = std::stoi(f[3]);
      z[static_cast<std::size_t>(k)] = std::stod(f[4]);
      s[static_cast<std::size_t>(k)] = std::stod(f[5]);
      max_s_stored = std::stod(f[6]);
      alarmed_stored = std::stoi(f[7]);
      flagged_stored = std::stoi(f[8]);
    }
    if (round < 0) break;
    ++result.rounds;

    if (pending_reset > 0) {
      s_prev[static_cast<std::size_t>(pending_reset - 1)] = 0.0;
      pending_reset = 0;
    }

    // Rank sanity: a permutation consistent with the residual ordering.
    std::vector<bool> seen(static_cast<std::size_t>(clients), false);
    for (int k = 0; k < clients; ++k) {
      const int r = rank[static_cast<std::size_t>(k)];
      if (r < 1 || r > clients || seen[static_cast<std::size_t>(r - 1)]) {
        return fail(round, "ranks are not a permutation");
      }
      seen[static_cast<std::size_t>(r - 1)] = true;
    }
    for (int a = 0; a < clients; ++a) {
      for (int b = 0; b < clients; ++b) {
        if (residual[a] < residual[b] && rank[a] > rank[b]) {
          return fail(round, "ranks disagree with residual ordering");
        }
      }
    }

    // CUSUM recursion, max aggregation, and the alarm rule.
    double max_s = -1.0;
    int argmax = 0;
    for (int k = 0; k < clients; ++k) {
      const double expect = std::max(0.0, s_prev[k] + z[k] - d);
      if (std::fabs(expect - s[k]) > 1e-9) {
        return fail(round, "CUSUM recursion mismatch for client " + std::to_string(k + 1));
      }
      if (s[k] > max_s) {
        max_s = s[k];
        argmax = k + 1;
      }
      s_prev[k] = s[k];
    }
    if (std::fabs(max_s - max_s_stored) > 1e-9) return fail(round, "max statistic mismatch");
    const bool alarmed = max_s > limit;
    if (alarmed != (alarmed_stored != 0)) return fail(round, "alarm flag mismatch");
    if (alarmed && flagged_stored != argmax) return fail(round, "flagged client mismatch");
    if (!alarmed && flagged_stored != 0) return fail(round, "flag set without alarm");
    if (alarmed) pending_reset = argmax;
  }
  return result;
}

}  // namespace fedrr
