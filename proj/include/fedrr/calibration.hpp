#pragma once

#include <cstdint>

namespace fedrr {

struct CalibrationConfig {
  int clients = 5;
  double d = 0.5;
  double target_arl0 = 30.0;
  int replications = 10000;
  long max_rounds = 1000000;  // per-replication cap; hitting it means H is too large
  double h_lo = 0.5;
  double h_hi = 6.0;
  double tolerance = 1e-3;  // bisection bracket width on H
  std::uint64_t rng_seed = 0;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const;
};

struct ArlEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  double std_dev = 0.0;
  int replications = 0;
  int censored = 0;  // replications stopped at max_rounds without an alarm
};

// Monte-Carlo in-control ARL for control limit H: each replication samples
// uniform random rank permutations round by round (no FL involved), applies
// the normal-score CUSUM until max_k S^(k) > H, and records the run length.
// Deterministic given the seed; replications run in parallel and reduce
// order-insensitively.
ArlEstimate estimate_arl(double limit, int clients, double d, int replications,
                         std::uint64_t rng_seed, long max_rounds = 1000000,
                         int threads = 0);

struct CalibrationResult {
  double limit = 0.0;
  ArlEstimate arl;  // estimate at the returned limit
};

// Bisection search for the limit H whose in-control ARL hits target_arl0.
// Every evaluation reuses the same replication streams (common random
// numbers), which makes the empirical ARL(H) curve monotone in H.
CalibrationResult find_limit(const CalibrationConfig& cfg);

}  // namespace fedrr
