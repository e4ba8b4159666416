#include "fedrr/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedrr/stats.hpp"

namespace fedrr {

bool RankVector::is_permutation() const {
  std::vector<bool> seen(ranks.size(), false);
  for (int r : ranks) {
    if (r < 1 || r > static_cast<int>(ranks.size()) || seen[r - 1]) return false;
    seen[r - 1] = true;
  }
  return true;
}

RankVector rank_residuals(const std::vector<double>& residuals, RngStream& rng) {
  const std::size_t k = residuals.size();
  if (k < 2) {
    throw NumericalError("rank_residuals: need at least 2 clients");
  }
  for (double r : residuals) {
    if (!std::isfinite(r)) {
      throw NumericalError("rank_residuals: non-finite residual");
    }
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return residuals[a] < residuals[b];
  });
  // Shuffle each tied block so every arrangement of equal residuals is
  // equally likely.
  std::size_t i = 0;
  while (i < k) {
    std::size_t j = i + 1;
    while (j < k && residuals[order[j]] == residuals[order[i]]) ++j;
    if (j - i > 1) {
      std::vector<std::size_t> block(order.begin() + i, order.begin() + j);
      rng.shuffle(block);
      std::copy(block.begin(), block.end(), order.begin() + i);
    }
    i = j;
  }
  RankVector out;
  out.ranks.assign(k, 0);
  for (std::size_t pos = 0; pos < k; ++pos) {
    out.ranks[order[pos]] = static_cast<int>(pos) + 1;
  }
  return out;
}

double normal_score(int rank, int clients, double u) {
  if (rank < 1 || rank > clients) {
    throw NumericalError("normal_score: rank out of range");
  }
  return normal_quantile((static_cast<double>(rank) - u) / clients);
}

double normal_score(int rank, int clients, RngStream& rng) {
  return normal_score(rank, clients, rng.uniform01());
}

CusumBank::CusumBank(int clients, double d, double limit)
    : stats_(static_cast<std::size_t>(clients), 0.0), d_(d), limit_(limit) {
  if (clients < 2) throw ConfigError("CusumBank: need at least 2 clients");
  if (!(d > 0.0)) throw ConfigError("CusumBank: reference value d must be positive");
  if (!(limit > 0.0)) throw ConfigError("CusumBank: control limit must be positive");
}

MonitorDecision CusumBank::step(const std::vector<double>& scores) {
  if (scores.size() != stats_.size()) {
    throw NumericalError("CusumBank: score count does not match client count");
  }
  ++round_;
  MonitorDecision decision;
  decision.round = round_;
  double max_stat = -1.0;
  int argmax = 0;
  for (std::size_t k = 0; k < stats_.size(); ++k) {
    stats_[k] = std::max(0.0, stats_[k] + scores[k] - d_);
    if (stats_[k] > max_stat) {
      max_stat = stats_[k];
      argmax = static_cast<int>(k) + 1;
    }
  }
  decision.max_stat = max_stat;
  if (max_stat > limit_) {
    decision.alarmed = true;
    decision.flagged_client = argmax;
  }
  return decision;
}

void CusumBank::reset_client(int client) {
  if (client < 1 || client > clients()) {
    throw NumericalError("CusumBank: client index out of range");
  }
  stats_[client - 1] = 0.0;
}

StatVariant parse_stat_variant(const std::string& name) {
  if (name == "fedrr") return StatVariant::fedrr;
  if (name == "norm" || name == "norm_benchmark") return StatVariant::norm_benchmark;
  throw ConfigError("unknown monitor variant: " + name);
}

std::string to_string(StatVariant v) {
  return v == StatVariant::fedrr ? "fedrr" : "norm";
}

double phase2_statistic(const ParamVector& delta, const SubspaceBasis& basis,
                        StatVariant variant) {
  if (variant == StatVariant::fedrr) {
    return project_residual(delta, basis);
  }
  return std::sqrt(detail::dot(delta.data(), delta.data(), delta.size()));
}

}  // namespace fedrr
