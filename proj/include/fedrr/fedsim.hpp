#pragma once

#include <cstdint>
#include <vector>

#include "fedrr/common.hpp"
#include "fedrr/dataset.hpp"
#include "fedrr/model.hpp"
#include "fedrr/rng.hpp"

namespace fedrr {

struct TrainingConfig {
  double learning_rate = 0.001;
  int epochs_per_round = 3;
  int minibatch_size = 128;
  int rounds = 100;       // T
  int client_count = 5;   // K
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Everything the server saw in one communication round. local_params holds
// what each client computed; transmitted holds what actually arrived (they
// differ only under a model-poisoning hook).
struct RoundRecord {
  int round = 0;
  ParamVector global_before;
  std::vector<ParamVector> local_params;
  std::vector<ParamVector> transmitted;
  std::vector<ParamVector> deltas;  // transmitted[k] - global_before
  ParamVector global_after;
};

// Injection points for adversarial behavior inside a round. Data attacks
// rewrite a client's training set before local SGD; model attacks rewrite
// the transmitted parameters afterwards. Clients are 1-based.
class RoundHook {
 public:
  virtual ~RoundHook() = default;
  virtual bool poisons_data(int round, int client) const {
    (void)round;
    (void)client;
    return false;
  }
  virtual ClientDataset poison_data(int round, int client, const ClientDataset& clean) {
    (void)round;
    (void)client;
    return clean;
  }
  virtual void on_transmit(int round, int client, ParamVector& params) {
    (void)round;
    (void)client;
    (void)params;
  }
};

// epochs_per_round passes of minibatch SGD over the client's data, with a
// fresh shuffle per epoch drawn from the client's stream. The final partial
// minibatch is kept.
ParamVector local_update(const LossModel& model, const ParamVector& start,
                         const ClientDataset& data, const TrainingConfig& cfg,
                         RngStream& rng);

// Coordinatewise arithmetic mean (FedAvg aggregation, unweighted).
ParamVector aggregate(const std::vector<ParamVector>& updates);

// One communication round: transmit -> local update per client -> optional
// hook mutation -> aggregate.
RoundRecord run_round(int round, const LossModel& model, const ParamVector& global,
                      const std::vector<ClientDataset>& clients, const TrainingConfig& cfg,
                      std::vector<RngStream>& client_streams, RoundHook* hook);

}  // namespace fedrr
