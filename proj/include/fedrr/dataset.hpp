#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedrr/common.hpp"
#include "fedrr/rng.hpp"

namespace fedrr {

// Labeled samples owned by one client. Features are stored row-major,
// one row per sample.
struct ClientDataset {
  int client_id = 0;  // 1-based
  int feature_dim = 0;
  int num_classes = 0;
  std::vector<double> features;  // size() == labels.size() * feature_dim
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  const double* sample(std::size_t i) const {
    return features.data() + i * static_cast<std::size_t>(feature_dim);
  }
  double* sample(std::size_t i) {
    return features.data() + i * static_cast<std::size_t>(feature_dim);
  }
  void validate() const;
};

// Random equal-size disjoint partition of a pooled dataset into K client
// shards; the remainder after dividing by K is dropped. Deterministic
// given the stream.
std::vector<ClientDataset> make_iid_partition(const ClientDataset& pool, int clients,
                                              RngStream& rng);

// Spherical Gaussian mixture with one component per class: class means are
// drawn once from N(0, spread^2 I) and samples scatter around them with
// N(0, noise_std^2 I) noise. Labels are uniform over the classes.
struct MixtureSpec {
  int feature_dim = 20;
  int num_classes = 10;
  double spread = 2.0;
  double noise_std = 1.0;
};

std::vector<ParamVector> mixture_means(const MixtureSpec& spec, RngStream& rng);

ClientDataset sample_mixture(const MixtureSpec& spec,
                             const std::vector<ParamVector>& means, std::size_t count,
                             RngStream& rng);

// MNIST IDX readers. Big-endian headers: images carry magic 0x00000803 and
// three dims (count, rows, cols); labels carry magic 0x00000801 and one.
// Pixels are unsigned bytes scaled to [0,1].
ClientDataset load_mnist(const std::string& image_path, const std::string& label_path,
                         std::size_t limit = 0);

}  // namespace fedrr
