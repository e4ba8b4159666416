#include "doctest.h"

#include <cmath>
#include <numeric>

#include "fedrr/fedsim.hpp"
#include "test_support.hpp"

using namespace fedrr;

namespace {

// Constant loss: gradient identically zero, so SGD is a fixed point.
class ConstantLoss : public LossModel {
 public:
  explicit ConstantLoss(std::size_t p) : p_(p) {}
  std::size_t parameter_count() const override { return p_; }
  int feature_dim() const override { return 1; }
  int num_classes() const override { return 2; }
  double loss(const ParamVector&, const ClientDataset&,
              std::span<const std::size_t>) const override {
    return 1.0;
  }
  ParamVector gradient(const ParamVector&, const ClientDataset&,
                       std::span<const std::size_t>) const override {
    return ParamVector(p_, 0.0);
  }
  ParamVector init_params(RngStream&) const override { return ParamVector(p_, 0.0); }

 private:
  std::size_t p_;
};

// Quadratic loss 0.5*||w||^2 independent of the data: gradient(w) = w.
class QuadraticLoss : public LossModel {
 public:
  explicit QuadraticLoss(std::size_t p) : p_(p) {}
  std::size_t parameter_count() const override { return p_; }
  int feature_dim() const override { return 1; }
  int num_classes() const override { return 2; }
  double loss(const ParamVector& w, const ClientDataset&,
              std::span<const std::size_t>) const override {
    double ss = 0.0;
    for (double x : w) ss += x * x;
    return 0.5 * ss;
  }
  ParamVector gradient(const ParamVector& w, const ClientDataset&,
                       std::span<const std::size_t>) const override {
    return w;
  }
  ParamVector init_params(RngStream&) const override { return ParamVector(p_, 0.0); }

 private:
  std::size_t p_;
};

ClientDataset dummy_data(int n) {
  ClientDataset data;
  data.feature_dim = 1;
  data.num_classes = 2;
  for (int i = 0; i < n; ++i) {
    data.labels.push_back(i % 2);
    data.features.push_back(static_cast<double>(i));
  }
  return data;
}

ClientDataset logistic_data(int n, int dim, int classes, RngStream& rng) {
  ClientDataset data;
  data.feature_dim = dim;
  data.num_classes = classes;
  for (int i = 0; i < n; ++i) {
    data.labels.push_back(static_cast<int>(rng.uniform_index(classes)));
    for (int j = 0; j < dim; ++j) data.features.push_back(rng.normal(0.0, 1.0));
  }
  return data;
}

}  // namespace

TEST_CASE("aggregate on hand-checked cases") {
  CHECK(aggregate({{1.0, 2.0}}) == ParamVector{1.0, 2.0});
  CHECK(aggregate({{1.0, -3.0}, {-1.0, 3.0}}) == ParamVector{0.0, 0.0});
  CHECK(aggregate({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}) == ParamVector{3.0, 4.0});
  CHECK_THROWS_AS(aggregate({{1.0}, {1.0, 2.0}}), NumericalError);
  CHECK_THROWS_AS(aggregate({}), NumericalError);
}

TEST_CASE("local_update is a fixed point under zero gradients") {
  const ConstantLoss model(4);
  const ClientDataset data = dummy_data(6);
  TrainingConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.epochs_per_round = 3;
  cfg.minibatch_size = 2;
  RngStream rng(1, "shuffle");
  const ParamVector start{1.0, -2.0, 3.0, 0.5};
  CHECK(local_update(model, start, data, cfg, rng) == start);
}

TEST_CASE("local_update takes the analytic gradient step on a quadratic") {
  const QuadraticLoss model(2);
  const ClientDataset data = dummy_data(1);
  TrainingConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs_per_round = 1;
  cfg.minibatch_size = 1;
  RngStream rng(2, "shuffle");
  const ParamVector out = local_update(model, {1.0, 0.0}, data, cfg, rng);
  CHECK(out[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("local_update rejects an empty dataset") {
  const ConstantLoss model(2);
  ClientDataset empty;
  empty.feature_dim = 1;
  empty.num_classes = 2;
  TrainingConfig cfg;
  RngStream rng(3, "shuffle");
  CHECK_THROWS_AS(local_update(model, {0.0, 0.0}, empty, cfg, rng), ConfigError);
}

TEST_CASE("local_update replays against a step-by-step oracle") {
  // Same shuffle stream, gradient steps applied one sample at a time by hand.
  const LogisticModel model(3, 2);
  RngStream data_rng(4, "data");
  const ClientDataset data = logistic_data(2, 3, 2, data_rng);
  TrainingConfig cfg;
  cfg.learning_rate = 0.2;
  cfg.epochs_per_round = 1;
  cfg.minibatch_size = 1;

  RngStream init(5, "init");
  const ParamVector start = model.init_params(init);

  RngStream run_rng(6, "shuffle");
  const ParamVector fast = local_update(model, start, data, cfg, run_rng);

  RngStream oracle_rng(6, "shuffle");
  std::vector<std::size_t> order{0, 1};
  oracle_rng.shuffle(order);
  ParamVector slow = start;
  for (std::size_t i : order) {
    const std::size_t one[] = {i};
    const ParamVector grad = model.gradient(slow, data, {one, 1});
    for (std::size_t j = 0; j < slow.size(); ++j) slow[j] -= cfg.learning_rate * grad[j];
  }
  for (std::size_t j = 0; j < slow.size(); ++j) {
    CHECK(fast[j] == doctest::Approx(slow[j]).epsilon(1e-15));
  }
}

TEST_CASE("run_round with constant loss keeps the global parameters") {
  const ConstantLoss model(3);
  const std::vector<ClientDataset> clients{dummy_data(4), dummy_data(4)};
  TrainingConfig cfg;
  cfg.client_count = 2;
  std::vector<RngStream> streams{RngStream(7, "s", {1}), RngStream(7, "s", {2})};
  const ParamVector global{0.5, -0.5, 1.0};
  const RoundRecord rec = run_round(1, model, global, clients, cfg, streams, nullptr);
  CHECK(rec.global_after == global);
  for (const auto& d : rec.deltas) {
    for (double x : d) CHECK(x == 0.0);
  }
}

TEST_CASE("model poisoning hook shifts only the transmitted copy") {
  // Hook contract: transmitted parameters differ from the locally computed
  // ones by exactly the injected vector.
  class FixedShift : public RoundHook {
   public:
    void on_transmit(int, int client, ParamVector& params) override {
      if (client == 2) {
        for (double& x : params) x += 0.25;
      }
    }
  };
  const QuadraticLoss model(2);
  const std::vector<ClientDataset> clients{dummy_data(2), dummy_data(2)};
  TrainingConfig cfg;
  cfg.client_count = 2;
  cfg.minibatch_size = 2;
  cfg.epochs_per_round = 1;
  std::vector<RngStream> streams{RngStream(8, "s", {1}), RngStream(8, "s", {2})};
  FixedShift hook;
  const RoundRecord rec = run_round(1, model, {1.0, 2.0}, clients, cfg, streams, &hook);
  CHECK(rec.transmitted[0] == rec.local_params[0]);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rec.transmitted[1][i] == doctest::Approx(rec.local_params[1][i] + 0.25).epsilon(1e-15));
  }
}

TEST_CASE("round aggregation matches the closed form on a quadratic") {
  // gradient(w) = w, so each client contracts w by (1-eta) per step; with
  // identical data sizes both clients agree and so does the average.
  const QuadraticLoss model(2);
  const std::vector<ClientDataset> clients{dummy_data(3), dummy_data(3)};
  TrainingConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs_per_round = 2;
  cfg.minibatch_size = 3;  // one step per epoch
  cfg.client_count = 2;
  std::vector<RngStream> streams{RngStream(9, "s", {1}), RngStream(9, "s", {2})};
  const ParamVector global{1.0, -2.0};
  const RoundRecord rec = run_round(1, model, global, clients, cfg, streams, nullptr);
  const double contraction = std::pow(0.9, 2);
  CHECK(rec.global_after[0] == doctest::Approx(contraction * 1.0).epsilon(1e-14));
  CHECK(rec.global_after[1] == doctest::Approx(contraction * -2.0).epsilon(1e-14));
}

TEST_CASE("round record satisfies the aggregation invariant") {
  RngStream data_rng(10, "data");
  const LogisticModel model(3, 3);
  std::vector<ClientDataset> clients;
  for (int k = 0; k < 3; ++k) clients.push_back(logistic_data(9, 3, 3, data_rng));
  TrainingConfig cfg;
  cfg.client_count = 3;
  cfg.minibatch_size = 4;
  std::vector<RngStream> streams;
  for (int k = 0; k < 3; ++k) streams.emplace_back(11, "s", std::initializer_list<std::uint64_t>{static_cast<std::uint64_t>(k)});
  RngStream init(12, "init");
  const ParamVector global = model.init_params(init);
  const RoundRecord rec = run_round(1, model, global, clients, cfg, streams, nullptr);
  const ParamVector mean = aggregate(rec.transmitted);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    CHECK(testsupport::rel_err(rec.global_after[i], mean[i]) < 1e-10);
  }
  // deltas are transmitted - global_before
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
      CHECK(rec.deltas[k][i] ==
            doctest::Approx(rec.transmitted[k][i] - global[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("identical data and streams give identical client updates") {
  RngStream data_rng(13, "data");
  const LogisticModel model(2, 2);
  const ClientDataset shared = logistic_data(6, 2, 2, data_rng);
  const std::vector<ClientDataset> clients{shared, shared, shared};
  TrainingConfig cfg;
  cfg.client_count = 3;
  cfg.minibatch_size = 2;
  // same stream construction for every client
  std::vector<RngStream> streams{RngStream(14, "same"), RngStream(14, "same"),
                                 RngStream(14, "same")};
  RngStream init(15, "init");
  const ParamVector global = model.init_params(init);
  const RoundRecord rec = run_round(1, model, global, clients, cfg, streams, nullptr);
  CHECK(rec.deltas[0] == rec.deltas[1]);
  CHECK(rec.deltas[1] == rec.deltas[2]);
}

TEST_CASE("rounds are deterministic given the seeds") {
  RngStream data_rng(16, "data");
  const LogisticModel model(3, 2);
  std::vector<ClientDataset> clients;
  for (int k = 0; k < 2; ++k) clients.push_back(logistic_data(8, 3, 2, data_rng));
  TrainingConfig cfg;
  cfg.client_count = 2;
  cfg.minibatch_size = 4;
  RngStream init(17, "init");
  const ParamVector global = model.init_params(init);

  auto run_once = [&]() {
    std::vector<RngStream> streams{RngStream(18, "s", {1}), RngStream(18, "s", {2})};
    ParamVector w = global;
    std::vector<ParamVector> all;
    for (int t = 1; t <= 5; ++t) {
      RoundRecord rec = run_round(t, model, w, clients, cfg, streams, nullptr);
      w = rec.global_after;
      all.push_back(w);
    }
    return all;
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("sgd trends the training loss downward") {
  RngStream data_rng(19, "data");
  const LogisticModel model(4, 3);
  std::vector<ClientDataset> clients;
  for (int k = 0; k < 2; ++k) clients.push_back(logistic_data(30, 4, 3, data_rng));
  TrainingConfig cfg;
  cfg.client_count = 2;
  cfg.learning_rate = 0.05;
  cfg.minibatch_size = 10;
  cfg.epochs_per_round = 1;
  std::vector<RngStream> streams{RngStream(20, "s", {1}), RngStream(20, "s", {2})};
  RngStream init(21, "init");
  ParamVector w = model.init_params(init);

  std::vector<double> losses;
  for (int t = 1; t <= 50; ++t) {
    double total = 0.0;
    for (const auto& c : clients) total += model.dataset_loss(w, c);
    losses.push_back(total / 2.0);
    RoundRecord rec = run_round(t, model, w, clients, cfg, streams, nullptr);
    w = rec.global_after;
  }
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += losses[i];
    tail += losses[losses.size() - 1 - i];
  }
  CHECK(tail < head);
}
