#include "fedrr/attacks.hpp"

#include <cmath>

namespace fedrr {

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "none") return AttackKind::none;
  if (name == "label_flip") return AttackKind::label_flip;
  if (name == "sample_poison") return AttackKind::sample_poison;
  if (name == "model_poison") return AttackKind::model_poison;
  throw ConfigError("unknown attack kind: " + name);
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::none: return "none";
    case AttackKind::label_flip: return "label_flip";
    case AttackKind::sample_poison: return "sample_poison";
    case AttackKind::model_poison: return "model_poison";
  }
  return "none";
}

double AttackSpec::noise_std() const {
  return noise_param_is_variance ? std::sqrt(noise_param) : noise_param;
}

void AttackSpec::validate(int client_count) const {
  if (kind == AttackKind::none) return;
  if (start_round < 1) throw ConfigError("attack: start_round must be >= 1");
  if (target_client < 1 || target_client > client_count) {
    throw ConfigError("attack: target_client out of range");
  }
  if (kind == AttackKind::label_flip) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("attack: ratio must lie in (0,1]");
    if (source_class < 0) throw ConfigError("attack: source_class must be >= 0");
  } else {
    if (noise_param < 0.0) throw ConfigError("attack: noise parameter must be >= 0");
  }
}

ClientDataset flip_labels(const ClientDataset& data, double ratio, int source_class,
                          int target_class, RngStream& rng) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("flip_labels: ratio must lie in (0,1]");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == source_class) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw ConfigError("flip_labels: nothing to flip (no samples of the source class)");
  }
  const auto flip_count = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(candidates.size())));
  rng.shuffle(candidates);

  ClientDataset out = data;
  for (std::size_t i = 0; i < flip_count; ++i) {
    int label;
    if (target_class >= 0 && target_class != source_class) {
      label = target_class;
    } else {
      // uniformly random class different from the source
      label = static_cast<int>(rng.uniform_index(data.num_classes - 1));
      if (label >= source_class) ++label;
    }
    out.labels[candidates[i]] = label;
  }
  return out;
}

ClientDataset poison_samples(const ClientDataset& data, double mean, double std,
                             RngStream& rng) {
  if (std < 0.0) throw ConfigError("poison_samples: std must be >= 0");
  ClientDataset out = data;
  for (double& x : out.features) x += rng.normal(mean, std);
  return out;
}

ParamVector poison_model(const ParamVector& params, double std, RngStream& rng) {
  if (std < 0.0) throw ConfigError("poison_model: std must be >= 0");
  ParamVector out = params;
  for (double& x : out) x += rng.normal(0.0, std);
  return out;
}

Attacker::Attacker(AttackSpec spec, RngStream rng) : spec_(spec), rng_(rng) {}

bool Attacker::active(int round, int client) const {
  return spec_.kind != AttackKind::none && client == spec_.target_client &&
         round >= spec_.start_round;
}

bool Attacker::poisons_data(int round, int client) const {
  return active(round, client) &&
         (spec_.kind == AttackKind::label_flip || spec_.kind == AttackKind::sample_poison);
}

ClientDataset Attacker::poison_data(int round, int client, const ClientDataset& clean) {
  if (!poisons_data(round, client)) return clean;
  if (spec_.kind == AttackKind::label_flip) {
    return flip_labels(clean, spec_.ratio, spec_.source_class, spec_.target_class, rng_);
  }
  return poison_samples(clean, spec_.noise_mean, spec_.noise_std(), rng_);
}

void Attacker::on_transmit(int round, int client, ParamVector& params) {
  if (!active(round, client) || spec_.kind != AttackKind::model_poison) return;
  params = poison_model(params, spec_.noise_std(), rng_);
}

}  // namespace fedrr
