#include "fedrr/fedsim.hpp"

#include <numeric>

namespace fedrr {

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (epochs_per_round < 1) throw ConfigError("epochs_per_round must be positive");
  if (minibatch_size < 1) throw ConfigError("minibatch_size must be positive");
  if (rounds < 1) throw ConfigError("rounds must be positive");
  if (client_count < 2) throw ConfigError("client_count must be at least 2");
}

ParamVector local_update(const LossModel& model, const ParamVector& start,
                         const ClientDataset& data, const TrainingConfig& cfg,
                         RngStream& rng) {
  if (start.size() != model.parameter_count()) {
    throw ConfigError("local_update: parameter length mismatch");
  }
  if (data.size() == 0) throw ConfigError("local_update: empty dataset");

  ParamVector params = start;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = static_cast<std::size_t>(cfg.minibatch_size);
  for (int epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size(); pos += batch) {
      const std::size_t count = std::min(batch, order.size() - pos);
      const ParamVector grad =
          model.gradient(params, data, {order.data() + pos, count});
      for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] -= cfg.learning_rate * grad[i];
      }
    }
  }
  return params;
}

ParamVector aggregate(const std::vector<ParamVector>& updates) {
  if (updates.empty()) throw NumericalError("aggregate: no updates");
  const std::size_t p = updates.front().size();
  for (const auto& u : updates) {
    if (u.size() != p) throw NumericalError("aggregate: dimension mismatch");
  }
  ParamVector mean(p, 0.0);
  for (const auto& u : updates) {
    for (std::size_t i = 0; i < p; ++i) mean[i] += u[i];
  }
  const double inv = 1.0 / static_cast<double>(updates.size());
  for (double& x : mean) x *= inv;
  return mean;
}

RoundRecord run_round(int round, const LossModel& model, const ParamVector& global,
                      const std::vector<ClientDataset>& clients, const TrainingConfig& cfg,
                      std::vector<RngStream>& client_streams, RoundHook* hook) {
  if (round < 1) throw ConfigError("run_round: round index must be >= 1");
  if (clients.size() != static_cast<std::size_t>(cfg.client_count) ||
      client_streams.size() != clients.size()) {
    throw ConfigError("run_round: client count mismatch");
  }
  RoundRecord rec;
  rec.round = round;
  rec.global_before = global;
  rec.local_params.resize(clients.size());
  rec.transmitted.resize(clients.size());
  rec.deltas.resize(clients.size());

  for (std::size_t k = 0; k < clients.size(); ++k) {
    const int client = static_cast<int>(k) + 1;
    const ClientDataset* data = &clients[k];
    ClientDataset poisoned;
    if (hook && hook->poisons_data(round, client)) {
      poisoned = hook->poison_data(round, client, clients[k]);
      data = &poisoned;
    }
    rec.local_params[k] = local_update(model, global, *data, cfg, client_streams[k]);
    rec.transmitted[k] = rec.local_params[k];
    if (hook) hook->on_transmit(round, client, rec.transmitted[k]);
    rec.deltas[k].resize(global.size());
    for (std::size_t i = 0; i < global.size(); ++i) {
      rec.deltas[k][i] = rec.transmitted[k][i] - global[i];
    }
  }
  rec.global_after = aggregate(rec.transmitted);
  return rec;
}

}  // namespace fedrr
