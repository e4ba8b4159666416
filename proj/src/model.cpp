#include "fedrr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace fedrr {

namespace {

// Writes softmax probabilities into probs and returns -log p[label].
double softmax_xent(std::vector<double>& logits, int label, std::vector<double>& probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  probs.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - mx);
    sum += probs[c];
  }
  for (double& p : probs) p /= sum;
  return -(logits[static_cast<std::size_t>(label)] - mx - std::log(sum));
}

void check_data(const LossModel& model, const ClientDataset& data) {
  if (data.feature_dim != model.feature_dim() || data.num_classes != model.num_classes()) {
    throw ConfigError("model/dataset shape mismatch");
  }
}

}  // namespace

double LossModel::dataset_loss(const ParamVector& params, const ClientDataset& data) const {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return loss(params, data, all);
}

LogisticModel::LogisticModel(int feature_dim, int num_classes)
    : dim_(feature_dim), classes_(num_classes) {
  if (feature_dim < 1 || num_classes < 2) {
    throw ConfigError("logistic model: bad dimensions");
  }
}

std::size_t LogisticModel::parameter_count() const {
  return static_cast<std::size_t>(classes_) * (static_cast<std::size_t>(dim_) + 1);
}

double LogisticModel::loss(const ParamVector& params, const ClientDataset& data,
                           std::span<const std::size_t> indices) const {
  check_data(*this, data);
  if (indices.empty()) throw ConfigError("loss: empty minibatch");
  const double* w = params.data();                                  // classes_ x dim_
  const double* b = params.data() + std::size_t(classes_) * dim_;   // classes_
  std::vector<double> logits(static_cast<std::size_t>(classes_));
  std::vector<double> probs;
  double total = 0.0;
  for (std::size_t i : indices) {
    const double* x = data.sample(i);
    for (int c = 0; c < classes_; ++c) {
      const double* row = w + std::size_t(c) * dim_;
      double z = b[c];
      for (int j = 0; j < dim_; ++j) z += row[j] * x[j];
      logits[static_cast<std::size_t>(c)] = z;
    }
    total += softmax_xent(logits, data.labels[i], probs);
  }
  return total / static_cast<double>(indices.size());
}

ParamVector LogisticModel::gradient(const ParamVector& params, const ClientDataset& data,
                                    std::span<const std::size_t> indices) const {
  check_data(*this, data);
  if (indices.empty()) throw ConfigError("gradient: empty minibatch");
  const double* w = params.data();
  const double* b = params.data() + std::size_t(classes_) * dim_;
  ParamVector grad(parameter_count(), 0.0);
  double* gw = grad.data();
  double* gb = grad.data() + std::size_t(classes_) * dim_;
  std::vector<double> logits(static_cast<std::size_t>(classes_));
  std::vector<double> probs;
  for (std::size_t i : indices) {
    const double* x = data.sample(i);
    for (int c = 0; c < classes_; ++c) {
      const double* row = w + std::size_t(c) * dim_;
      double z = b[c];
      for (int j = 0; j < dim_; ++j) z += row[j] * x[j];
      logits[static_cast<std::size_t>(c)] = z;
    }
    softmax_xent(logits, data.labels[i], probs);
    for (int c = 0; c < classes_; ++c) {
      const double dz = probs[static_cast<std::size_t>(c)] - (c == data.labels[i] ? 1.0 : 0.0);
      double* grow = gw + std::size_t(c) * dim_;
      for (int j = 0; j < dim_; ++j) grow[j] += dz * x[j];
      gb[c] += dz;
    }
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& g : grad) g *= inv;
  return grad;
}

ParamVector LogisticModel::init_params(RngStream& rng) const {
  ParamVector params(parameter_count(), 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (std::size_t i = 0; i < std::size_t(classes_) * dim_; ++i) {
    params[i] = rng.normal(0.0, scale);
  }
  return params;  // biases start at zero
}

MlpModel::MlpModel(int feature_dim, int hidden_units, int num_classes)
    : dim_(feature_dim), hidden_(hidden_units), classes_(num_classes) {
  if (feature_dim < 1 || hidden_units < 1 || num_classes < 2) {
    throw ConfigError("mlp model: bad dimensions");
  }
}

std::size_t MlpModel::parameter_count() const {
  return std::size_t(hidden_) * dim_ + hidden_ + std::size_t(classes_) * hidden_ + classes_;
}

namespace {

struct MlpView {
  const double* w1;  // hidden x dim
  const double* b1;  // hidden
  const double* w2;  // classes x hidden
  const double* b2;  // classes
};

MlpView mlp_view(const double* p, int dim, int hidden, int classes) {
  MlpView v;
  v.w1 = p;
  v.b1 = v.w1 + std::size_t(hidden) * dim;
  v.w2 = v.b1 + hidden;
  v.b2 = v.w2 + std::size_t(classes) * hidden;
  return v;
}

void mlp_forward(const MlpView& v, const double* x, int dim, int hidden, int classes,
                 std::vector<double>& hid, std::vector<double>& logits) {
  hid.resize(static_cast<std::size_t>(hidden));
  for (int h = 0; h < hidden; ++h) {
    const double* row = v.w1 + std::size_t(h) * dim;
    double z = v.b1[h];
    for (int j = 0; j < dim; ++j) z += row[j] * x[j];
    hid[static_cast<std::size_t>(h)] = std::tanh(z);
  }
  logits.resize(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const double* row = v.w2 + std::size_t(c) * hidden;
    double z = v.b2[c];
    for (int h = 0; h < hidden; ++h) z += row[h] * hid[static_cast<std::size_t>(h)];
    logits[static_cast<std::size_t>(c)] = z;
  }
}

}  // namespace

double MlpModel::loss(const ParamVector& params, const ClientDataset& data,
                      std::span<const std::size_t> indices) const {
  check_data(*this, data);
  if (indices.empty()) throw ConfigError("loss: empty minibatch");
  const MlpView v = mlp_view(params.data(), dim_, hidden_, classes_);
  std::vector<double> hid, logits, probs;
  double total = 0.0;
  for (std::size_t i : indices) {
    mlp_forward(v, data.sample(i), dim_, hidden_, classes_, hid, logits);
    total += softmax_xent(logits, data.labels[i], probs);
  }
  return total / static_cast<double>(indices.size());
}

ParamVector MlpModel::gradient(const ParamVector& params, const ClientDataset& data,
                               std::span<const std::size_t> indices) const {
  check_data(*this, data);
  if (indices.empty()) throw ConfigError("gradient: empty minibatch");
  const MlpView v = mlp_view(params.data(), dim_, hidden_, classes_);
  ParamVector grad(parameter_count(), 0.0);
  double* gw1 = grad.data();
  double* gb1 = gw1 + std::size_t(hidden_) * dim_;
  double* gw2 = gb1 + hidden_;
  double* gb2 = gw2 + std::size_t(classes_) * hidden_;

  std::vector<double> hid, logits, probs;
  std::vector<double> dhid(static_cast<std::size_t>(hidden_));
  for (std::size_t i : indices) {
    const double* x = data.sample(i);
    mlp_forward(v, x, dim_, hidden_, classes_, hid, logits);
    softmax_xent(logits, data.labels[i], probs);
    std::fill(dhid.begin(), dhid.end(), 0.0);
    for (int c = 0; c < classes_; ++c) {
      const double dz = probs[static_cast<std::size_t>(c)] - (c == data.labels[i] ? 1.0 : 0.0);
      const double* row = v.w2 + std::size_t(c) * hidden_;
      double* grow = gw2 + std::size_t(c) * hidden_;
      for (int h = 0; h < hidden_; ++h) {
        grow[h] += dz * hid[static_cast<std::size_t>(h)];
        dhid[static_cast<std::size_t>(h)] += dz * row[h];
      }
      gb2[c] += dz;
    }
    for (int h = 0; h < hidden_; ++h) {
      const double hv = hid[static_cast<std::size_t>(h)];
      const double dpre = dhid[static_cast<std::size_t>(h)] * (1.0 - hv * hv);
      double* grow = gw1 + std::size_t(h) * dim_;
      for (int j = 0; j < dim_; ++j) grow[j] += dpre * x[j];
      gb1[h] += dpre;
    }
  }
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (double& g : grad) g *= inv;
  return grad;
}

ParamVector MlpModel::init_params(RngStream& rng) const {
  ParamVector params(parameter_count(), 0.0);
  double* p = params.data();
  const double s1 = 1.0 / std::sqrt(static_cast<double>(dim_));
  for (std::size_t i = 0; i < std::size_t(hidden_) * dim_; ++i) p[i] = rng.normal(0.0, s1);
  p += std::size_t(hidden_) * dim_ + hidden_;  // skip b1 (zeros)
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (std::size_t i = 0; i < std::size_t(classes_) * hidden_; ++i) p[i] = rng.normal(0.0, s2);
  return params;
}

std::unique_ptr<LossModel> make_model(const std::string& kind, int feature_dim,
                                      int num_classes, int hidden_units) {
  if (kind == "logistic") {
    return std::make_unique<LogisticModel>(feature_dim, num_classes);
  }
  if (kind == "mlp") {
    return std::make_unique<MlpModel>(feature_dim, hidden_units, num_classes);
  }
  throw ConfigError("unknown model kind: " + kind);
}

}  // namespace fedrr
