#pragma once

#include <string>

#include "fedrr/common.hpp"
#include "fedrr/dataset.hpp"
#include "fedrr/fedsim.hpp"
#include "fedrr/rng.hpp"

namespace fedrr {

enum class AttackKind { none, label_flip, sample_poison, model_poison };

AttackKind parse_attack_kind(const std::string& name);
std::string to_string(AttackKind kind);

// Declarative description of one persistent attacker. The Gaussian noise
// parameter follows the N(mean, param) notation with param read as a
// VARIANCE by default; set noise_param_is_variance=false to read it as a
// standard deviation instead.
struct AttackSpec {
  AttackKind kind = AttackKind::none;
  int target_client = 1;  // 1-based
  int start_round = 1;
  // label_flip
  double ratio = 1.0;
  int source_class = 0;
  int target_class = -1;  // -1 = uniformly random different class
  // sample_poison / model_poison
  double noise_mean = 0.0;
  double noise_param = 0.0;
  bool noise_param_is_variance = true;

  double noise_std() const;
  void validate(int client_count) const;

  bool operator==(const AttackSpec&) const = default;
};

// Flips ceil(ratio * n_source) labels of the source class to a different
// class: target_class if given, otherwise uniformly random per sample.
ClientDataset flip_labels(const ClientDataset& data, double ratio, int source_class,
                          int target_class, RngStream& rng);

// Adds i.i.d. Normal(mean, std^2) noise to every feature entry.
ClientDataset poison_samples(const ClientDataset& data, double mean, double std,
                             RngStream& rng);

// Perturbs every parameter coordinate with i.i.d. Normal(0, std^2) noise.
ParamVector poison_model(const ParamVector& params, double std, RngStream& rng);

// RoundHook that applies the spec to its target client from start_round on,
// fresh each round.
class Attacker : public RoundHook {
 public:
  Attacker(AttackSpec spec, RngStream rng);

  bool poisons_data(int round, int client) const override;
  ClientDataset poison_data(int round, int client, const ClientDataset& clean) override;
  void on_transmit(int round, int client, ParamVector& params) override;

  const AttackSpec& spec() const { return spec_; }

 private:
  bool active(int round, int client) const;

  AttackSpec spec_;
  RngStream rng_;
};

}  // namespace fedrr
