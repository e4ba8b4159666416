#pragma once

#include <string>
#include <vector>

#include "fedrr/common.hpp"
#include "fedrr/linalg.hpp"
#include "fedrr/rng.hpp"

namespace fedrr {

// Per-round residual ranks. ranks[k] is the ascending rank of client k+1's
// residual: 1 = smallest, K = largest.
struct RankVector {
  std::vector<int> ranks;

  bool is_permutation() const;
};

// Ascending ranks of the K per-client residuals. Ties are broken by a
// uniformly random permutation of the tied block so the permutation law
// stays uniform even in degenerate runs.
RankVector rank_residuals(const std::vector<double>& residuals, RngStream& rng);

// Randomized normal score Z = Phi^-1((rank - u) / K). With rank uniform on
// {1..K} and u ~ U(0,1) the score is exactly standard normal.
double normal_score(int rank, int clients, double u);

// Same, drawing u from the stream; one independent draw per client per round.
double normal_score(int rank, int clients, RngStream& rng);

struct MonitorDecision {
  bool alarmed = false;
  int flagged_client = 0;  // 1-based; 0 when not alarmed
  double max_stat = 0.0;
  int round = 0;           // rounds since monitoring started, 1-based
};

// Bank of per-client one-sided CUSUM statistics with reference value d and
// control limit H. Single-owner mutable state, advanced once per round.
class CusumBank {
 public:
  CusumBank(int clients, double d, double limit);

  // Applies the standard upward CUSUM recursion S_k <- (S_k + Z_k - d)+
  // for every client, then compares max_k S_k against the limit. Argmax
  // ties resolve to the lowest index.
  MonitorDecision step(const std::vector<double>& scores);

  const std::vector<double>& stats() const { return stats_; }
  double reference() const { return d_; }
  double limit() const { return limit_; }
  int clients() const { return static_cast<int>(stats_.size()); }
  int round() const { return round_; }

  // Continue-after-alarm support: zero one client's statistic.
  void reset_client(int client);

 private:
  std::vector<double> stats_;
  double d_;
  double limit_;
  int round_ = 0;
};

enum class StatVariant { fedrr, norm_benchmark };

StatVariant parse_stat_variant(const std::string& name);
std::string to_string(StatVariant v);

// Phase II per-client statistic: the subspace residual for fedrr, the plain
// Euclidean norm of the update for the benchmark chart.
double phase2_statistic(const ParamVector& delta, const SubspaceBasis& basis,
                        StatVariant variant);

}  // namespace fedrr
