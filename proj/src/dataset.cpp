#include "fedrr/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fedrr {

void ClientDataset::validate() const {
  if (labels.empty()) throw ConfigError("dataset is empty");
  if (feature_dim <= 0) throw ConfigError("dataset feature_dim must be positive");
  if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (features.size() != labels.size() * static_cast<std::size_t>(feature_dim)) {
    throw ConfigError("dataset feature storage does not match sample count");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ConfigError("dataset label out of range");
  }
}

std::vector<ClientDataset> make_iid_partition(const ClientDataset& pool, int clients,
                                              RngStream& rng) {
  pool.validate();
  if (clients < 1) throw ConfigError("partition: need at least one client");
  const std::size_t n = pool.size();
  if (n < static_cast<std::size_t>(clients)) {
    throw ConfigError("partition: fewer samples than clients");
  }
  const std::size_t per_client = n / static_cast<std::size_t>(clients);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<ClientDataset> shards(static_cast<std::size_t>(clients));
  std::size_t pos = 0;
  for (int k = 0; k < clients; ++k) {
    ClientDataset& shard = shards[static_cast<std::size_t>(k)];
    shard.client_id = k + 1;
    shard.feature_dim = pool.feature_dim;
    shard.num_classes = pool.num_classes;
    shard.labels.reserve(per_client);
    shard.features.reserve(per_client * static_cast<std::size_t>(pool.feature_dim));
    for (std::size_t i = 0; i < per_client; ++i, ++pos) {
      const std::size_t s = order[pos];
      shard.labels.push_back(pool.labels[s]);
      const double* row = pool.sample(s);
      shard.features.insert(shard.features.end(), row, row + pool.feature_dim);
    }
  }
  return shards;
}

std::vector<ParamVector> mixture_means(const MixtureSpec& spec, RngStream& rng) {
  std::vector<ParamVector> means(static_cast<std::size_t>(spec.num_classes));
  for (auto& mu : means) {
    mu.resize(static_cast<std::size_t>(spec.feature_dim));
    for (double& x : mu) x = rng.normal(0.0, spec.spread);
  }
  return means;
}

ClientDataset sample_mixture(const MixtureSpec& spec,
                             const std::vector<ParamVector>& means, std::size_t count,
                             RngStream& rng) {
  if (means.size() != static_cast<std::size_t>(spec.num_classes)) {
    throw ConfigError("sample_mixture: means do not match class count");
  }
  ClientDataset out;
  out.feature_dim = spec.feature_dim;
  out.num_classes = spec.num_classes;
  out.labels.resize(count);
  out.features.resize(count * static_cast<std::size_t>(spec.feature_dim));
  for (std::size_t i = 0; i < count; ++i) {
    const int y = static_cast<int>(rng.uniform_index(spec.num_classes));
    out.labels[i] = y;
    const ParamVector& mu = means[static_cast<std::size_t>(y)];
    double* row = out.sample(i);
    for (int j = 0; j < spec.feature_dim; ++j) {
      row[j] = mu[static_cast<std::size_t>(j)] + rng.normal(0.0, spec.noise_std);
    }
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& path) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw ConfigError("mnist: truncated header in " + path);
  }
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

ClientDataset load_mnist(const std::string& image_path, const std::string& label_path,
                         std::size_t limit) {
  std::ifstream images(image_path, std::ios::binary);
  if (!images) throw ConfigError("mnist: cannot open " + image_path);
  std::ifstream labels(label_path, std::ios::binary);
  if (!labels) throw ConfigError("mnist: cannot open " + label_path);

  if (read_be32(images, image_path) != 0x00000803u) {
    throw ConfigError("mnist: bad image magic in " + image_path);
  }
  const std::uint32_t image_count = read_be32(images, image_path);
  const std::uint32_t rows = read_be32(images, image_path);
  const std::uint32_t cols = read_be32(images, image_path);

  if (read_be32(labels, label_path) != 0x00000801u) {
    throw ConfigError("mnist: bad label magic in " + label_path);
  }
  const std::uint32_t label_count = read_be32(labels, label_path);
  if (label_count != image_count) {
    throw ConfigError("mnist: image/label counts disagree");
  }

  std::size_t n = image_count;
  if (limit > 0) n = std::min(n, limit);
  const std::size_t dim = static_cast<std::size_t>(rows) * cols;

  ClientDataset out;
  out.feature_dim = static_cast<int>(dim);
  out.num_classes = 10;
  out.labels.resize(n);
  out.features.resize(n * dim);
  std::vector<unsigned char> pixel(dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (!images.read(reinterpret_cast<char*>(pixel.data()), static_cast<std::streamsize>(dim))) {
      throw ConfigError("mnist: truncated image data in " + image_path);
    }
    double* row = out.sample(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = pixel[j] / 255.0;
    char y;
    if (!labels.read(&y, 1)) {
      throw ConfigError("mnist: truncated label data in " + label_path);
    }
    out.labels[i] = static_cast<unsigned char>(y);
  }
  out.validate();
  return out;
}

}  // namespace fedrr
