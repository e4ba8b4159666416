#include "doctest.h"

#include <cmath>
#include <map>

#include "fedrr/monitor.hpp"
#include "fedrr/stats.hpp"
#include "test_support.hpp"

using namespace fedrr;

TEST_CASE("ranks are ascending in the residuals") {
  RngStream rng(1, "ranks");
  CHECK(rank_residuals({0.1, 0.3, 0.2}, rng).ranks == std::vector<int>{1, 3, 2});
  CHECK(rank_residuals({5.0, 1.0}, rng).ranks == std::vector<int>{2, 1});
}

TEST_CASE("rank_residuals rejects bad input") {
  RngStream rng(2, "ranks");
  CHECK_THROWS_AS(rank_residuals({1.0}, rng), NumericalError);
  CHECK_THROWS_AS(rank_residuals({1.0, std::nan("")}, rng), NumericalError);
  CHECK_THROWS_AS(rank_residuals({1.0, INFINITY}, rng), NumericalError);
}

TEST_CASE("tied residuals break uniformly at random") {
  RngStream rng(3, "ties");
  std::map<std::vector<int>, long> counts;
  const int trials = 6000;
  for (int i = 0; i < trials; ++i) {
    counts[rank_residuals({2.0, 2.0, 2.0}, rng).ranks] += 1;
  }
  REQUIRE(counts.size() == 6);
  std::vector<long> cells;
  for (const auto& [perm, c] : counts) cells.push_back(c);
  const double stat = testsupport::chi2_uniform_stat(cells);
  CHECK(testsupport::chi2_sf(stat, 5) > 0.001);
}

TEST_CASE("raising one residual weakly raises its rank and lowers others") {
  RngStream rng(4, "mono");
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 3 + static_cast<int>(rng.uniform_index(5));
    std::vector<double> residuals(k);
    for (double& r : residuals) r = rng.uniform01();
    RngStream t1(5, "tie");
    const RankVector before = rank_residuals(residuals, t1);
    const int bumped = static_cast<int>(rng.uniform_index(k));
    std::vector<double> raised = residuals;
    raised[bumped] += rng.uniform01();
    RngStream t2(5, "tie");
    const RankVector after = rank_residuals(raised, t2);
    CHECK(after.ranks[bumped] >= before.ranks[bumped]);
    for (int i = 0; i < k; ++i) {
      if (i != bumped) CHECK(after.ranks[i] <= before.ranks[i]);
    }
  }
}

TEST_CASE("normal scores at pinned U values") {
  CHECK(normal_score(3, 5, 0.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(normal_score(5, 5, 0.5) == doctest::Approx(1.2815515655446004).epsilon(1e-12));
  CHECK_THROWS_AS(normal_score(0, 5, 0.5), NumericalError);
  CHECK_THROWS_AS(normal_score(6, 5, 0.5), NumericalError);
}

TEST_CASE("normal score of a uniform rank is standard normal") {
  RngStream rng(6, "zlaw");
  const int k = 5;
  std::vector<double> draws;
  draws.reserve(20000);
  for (int i = 0; i < 20000; ++i) {
    const int rank = 1 + static_cast<int>(rng.uniform_index(k));
    draws.push_back(normal_score(rank, k, rng));
  }
  CHECK(testsupport::ks_pvalue(draws, normal_cdf) > 0.001);
}

TEST_CASE("cusum recursion arithmetic") {
  // reference value subtracted in full, the convention behind the paper's
  // calibrated limits
  CusumBank bank(2, 0.5, 10.0);
  const MonitorDecision d1 = bank.step({0.25, 0.8});
  CHECK(bank.stats()[0] == doctest::Approx(0.0));  // 0 + d/2 - d <= 0
  CHECK(bank.stats()[1] == doctest::Approx(0.3));
  CHECK_FALSE(d1.alarmed);
  CHECK(d1.flagged_client == 0);

  CusumBank bank2(2, 0.5, 10.0);
  bank2.step({1.5, 0.0});  // S = (1.0, 0.0)
  bank2.step({0.8, 0.0});  // S1 = 1.0 + 0.8 - 0.5 = 1.3
  CHECK(bank2.stats()[0] == doctest::Approx(1.3).epsilon(1e-15));
}

TEST_CASE("alarm fires above the paper limit and flags the argmax") {
  // drive client 2 to S = 4.0 with H = 3.84 (Table 1 limit for d = 0.4)
  CusumBank bank(2, 0.4, 3.84);
  const MonitorDecision dec = bank.step({0.0, 4.4});
  CHECK(bank.stats()[0] == doctest::Approx(0.0));
  CHECK(bank.stats()[1] == doctest::Approx(4.0));
  CHECK(dec.alarmed);
  CHECK(dec.flagged_client == 2);
  CHECK(dec.max_stat == doctest::Approx(4.0));
}

TEST_CASE("argmax ties resolve to the lowest client index") {
  CusumBank bank(3, 0.2, 0.5);
  const MonitorDecision dec = bank.step({1.0, 1.0, 0.1});
  CHECK(dec.alarmed);
  CHECK(dec.flagged_client == 1);
}

TEST_CASE("cusum statistics stay nonnegative and reset exactly") {
  RngStream rng(7, "cusum");
  CusumBank bank(4, 0.5, 100.0);
  for (int t = 0; t < 200; ++t) {
    const std::vector<double> prev = bank.stats();
    std::vector<double> z(4);
    for (double& x : z) x = rng.normal(0.0, 1.0);
    bank.step(z);
    for (int k = 0; k < 4; ++k) {
      CHECK(bank.stats()[k] >= 0.0);
      if (prev[k] + z[k] - 0.5 <= 0.0) {
        CHECK(bank.stats()[k] == 0.0);
      } else {
        CHECK(bank.stats()[k] == doctest::Approx(prev[k] + z[k] - 0.5).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("reset_client zeroes a single chart") {
  CusumBank bank(2, 0.5, 100.0);
  bank.step({2.0, 3.0});
  bank.reset_client(2);
  CHECK(bank.stats()[0] > 0.0);
  CHECK(bank.stats()[1] == 0.0);
  CHECK_THROWS_AS(bank.reset_client(3), NumericalError);
}

TEST_CASE("bank construction validates its arguments") {
  CHECK_THROWS_AS(CusumBank(1, 0.5, 1.0), ConfigError);
  CHECK_THROWS_AS(CusumBank(3, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(CusumBank(3, 0.5, 0.0), ConfigError);
  CusumBank bank(3, 0.5, 1.0);
  CHECK_THROWS_AS(bank.step({1.0, 2.0}), NumericalError);
}

TEST_CASE("alarm path depends on residuals only through ranks") {
  // scaling every residual by c > 0 with the same stream state yields the
  // same ranks, the same U draws, and hence the same decisions
  RngStream rng(8, "scale");
  std::vector<double> residuals(5);
  for (double& r : residuals) r = rng.uniform01() + 0.1;

  auto drive = [&](double scale) {
    RngStream mon(9, "monitor");
    CusumBank bank(5, 0.5, 2.0);
    std::vector<double> decisions;
    std::vector<double> r = residuals;
    for (double& x : r) x *= scale;
    for (int t = 0; t < 20; ++t) {
      const RankVector ranks = rank_residuals(r, mon);
      std::vector<double> z(5);
      for (int k = 0; k < 5; ++k) z[k] = normal_score(ranks.ranks[k], 5, mon);
      const MonitorDecision dec = bank.step(z);
      decisions.push_back(dec.max_stat);
      decisions.push_back(dec.alarmed ? dec.flagged_client : 0.0);
    }
    return decisions;
  };
  CHECK(drive(1.0) == drive(7.25));
  CHECK(drive(1.0) == drive(1e-6));
}

TEST_CASE("phase2 statistic separates the two variants") {
  UpdateBuffer buf(2);
  buf.append({1.0, 0.0, 0.0});
  buf.append({0.0, 1.0, 0.0});
  const SubspaceBasis basis = truncated_pca(buf, 1.0);

  const ParamVector zero(3, 0.0);
  CHECK(phase2_statistic(zero, basis, StatVariant::norm_benchmark) == 0.0);

  const ParamVector in_span{2.0, -1.0, 0.0};
  CHECK(phase2_statistic(in_span, basis, StatVariant::fedrr) ==
        doctest::Approx(0.0).epsilon(1e-10));
  CHECK(phase2_statistic(in_span, basis, StatVariant::norm_benchmark) ==
        doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));

  const ParamVector out_of_span{1.0, 2.0, 3.0};
  CHECK(phase2_statistic(out_of_span, basis, StatVariant::fedrr) ==
        doctest::Approx(project_residual(out_of_span, basis)).epsilon(1e-15));
  CHECK_THROWS_AS(phase2_statistic({1.0}, basis, StatVariant::fedrr), NumericalError);
}

TEST_CASE("variant names parse and print") {
  CHECK(parse_stat_variant("fedrr") == StatVariant::fedrr);
  CHECK(parse_stat_variant("norm") == StatVariant::norm_benchmark);
  CHECK(parse_stat_variant("norm_benchmark") == StatVariant::norm_benchmark);
  CHECK_THROWS_AS(parse_stat_variant("ewma"), ConfigError);
  CHECK(to_string(StatVariant::fedrr) == "fedrr");
  CHECK(to_string(StatVariant::norm_benchmark) == "norm");
}
