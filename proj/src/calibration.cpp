#include "fedrr/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fedrr/common.hpp"
#include "fedrr/monitor.hpp"
#include "fedrr/parallel.hpp"
#include "fedrr/rng.hpp"
#include "fedrr/stats.hpp"

namespace fedrr {

void CalibrationConfig::validate() const {
  if (clients < 2) throw ConfigError("calibration: clients must be >= 2");
  if (!(d > 0.0)) throw ConfigError("calibration: d must be positive");
  if (!(target_arl0 > 1.0)) throw ConfigError("calibration: target ARL0 must exceed 1");
  if (replications < 1) throw ConfigError("calibration: replications must be >= 1");
  if (max_rounds < 1) throw ConfigError("calibration: max_rounds must be >= 1");
  if (!(h_lo > 0.0) || !(h_lo < h_hi)) {
    throw ConfigError("calibration: need 0 < h_lo < h_hi");
  }
  if (!(tolerance > 0.0)) throw ConfigError("calibration: tolerance must be positive");
}

ArlEstimate estimate_arl(double limit, int clients, double d, int replications,
                         std::uint64_t rng_seed, long max_rounds, int threads) {
  if (!(limit > 0.0)) throw ConfigError("estimate_arl: limit must be positive");
  std::vector<long> run_lengths(static_cast<std::size_t>(replications), 0);
  std::vector<char> censored(static_cast<std::size_t>(replications), 0);

  parallel_for(static_cast<std::size_t>(replications), threads, [&](std::size_t rep) {
    RngStream rng(rng_seed, "calibration", {static_cast<std::uint64_t>(rep)});
    CusumBank bank(clients, d, limit);
    std::vector<double> scores(static_cast<std::size_t>(clients));
    for (long t = 1; t <= max_rounds; ++t) {
      const std::vector<int> ranks = rng.permutation(clients);
      for (int k = 0; k < clients; ++k) {
        scores[static_cast<std::size_t>(k)] = normal_score(ranks[k], clients, rng);
      }
      if (bank.step(scores).alarmed) {
        run_lengths[rep] = t;
        return;
      }
    }
    run_lengths[rep] = max_rounds;
    censored[rep] = 1;
  });

  std::vector<double> lengths(run_lengths.begin(), run_lengths.end());
  const MeanStd ms = mean_std(lengths);
  ArlEstimate out;
  out.mean = ms.mean;
  out.std_dev = ms.stddev;
  out.std_error = ms.std_error;
  out.replications = replications;
  for (char c : censored) out.censored += c;
  return out;
}

CalibrationResult find_limit(const CalibrationConfig& cfg) {
  cfg.validate();
  // Replications far beyond the target carry no information about where the
  // target ARL sits, so evaluations run under a cap well above it: censored
  // means still certify "ARL > target" during bracketing, and near the
  // solution the cap is effectively unreachable (P ~ exp(-50)).
  const long eval_cap =
      std::min<long>(cfg.max_rounds,
                     std::max<long>(200, static_cast<long>(50.0 * cfg.target_arl0)));
  auto eval = [&](double limit) {
    return estimate_arl(limit, cfg.clients, cfg.d, cfg.replications, cfg.rng_seed,
                        eval_cap, cfg.threads);
  };

  double lo = cfg.h_lo;
  double hi = cfg.h_hi;
  int expansions = 0;
  while (eval(lo).mean >= cfg.target_arl0) {
    lo /= 2.0;
    if (++expansions > 60) {
      throw NumericalError("find_limit: could not bracket target ARL from below");
    }
  }
  expansions = 0;
  while (eval(hi).mean <= cfg.target_arl0) {
    hi *= 2.0;
    if (++expansions > 60) {
      throw NumericalError("find_limit: could not bracket target ARL from above");
    }
  }

  ArlEstimate est;
  double mid = 0.5 * (lo + hi);
  while (hi - lo > cfg.tolerance) {
    mid = 0.5 * (lo + hi);
    est = eval(mid);
    if (std::fabs(est.mean - cfg.target_arl0) <= 2.0 * est.std_error) break;
    if (est.mean < cfg.target_arl0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (hi - lo <= cfg.tolerance) {
    mid = 0.5 * (lo + hi);
    est = eval(mid);
  }
  if (est.censored > 0) {
    throw NumericalError(
        "find_limit: " + std::to_string(est.censored) +
        " replications were censored at the round cap; raise max_rounds or "
        "check the bracket");
  }
  return CalibrationResult{mid, est};
}

}  // namespace fedrr
