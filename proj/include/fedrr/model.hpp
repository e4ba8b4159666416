#pragma once

#include <memory>
#include <span>
#include <string>

#include "fedrr/common.hpp"
#include "fedrr/dataset.hpp"
#include "fedrr/rng.hpp"

namespace fedrr {

// Differentiable classification loss over a flat parameter vector.
// Implementations must keep loss and gradient consistent: the gradient is
// checked against central finite differences in the test suite.
class LossModel {
 public:
  virtual ~LossModel() = default;

  virtual std::size_t parameter_count() const = 0;
  virtual int feature_dim() const = 0;
  virtual int num_classes() const = 0;

  // Mean cross-entropy loss over the indexed samples.
  virtual double loss(const ParamVector& params, const ClientDataset& data,
                      std::span<const std::size_t> indices) const = 0;

  // Mean gradient over the indexed samples.
  virtual ParamVector gradient(const ParamVector& params, const ClientDataset& data,
                               std::span<const std::size_t> indices) const = 0;

  virtual ParamVector init_params(RngStream& rng) const = 0;

  double dataset_loss(const ParamVector& params, const ClientDataset& data) const;
};

// Multinomial logistic regression: parameters are the class weight matrix
// followed by the per-class biases.
class LogisticModel : public LossModel {
 public:
  LogisticModel(int feature_dim, int num_classes);

  std::size_t parameter_count() const override;
  int feature_dim() const override { return dim_; }
  int num_classes() const override { return classes_; }
  double loss(const ParamVector& params, const ClientDataset& data,
              std::span<const std::size_t> indices) const override;
  ParamVector gradient(const ParamVector& params, const ClientDataset& data,
                       std::span<const std::size_t> indices) const override;
  ParamVector init_params(RngStream& rng) const override;

 private:
  int dim_;
  int classes_;
};

// One-hidden-layer perceptron with tanh activation and softmax output.
// The hidden width is the over-parametrization knob: with a few hundred
// units the parameter count reaches the 10^4..10^5 range.
class MlpModel : public LossModel {
 public:
  MlpModel(int feature_dim, int hidden_units, int num_classes);

  std::size_t parameter_count() const override;
  int feature_dim() const override { return dim_; }
  int num_classes() const override { return classes_; }
  int hidden_units() const { return hidden_; }
  double loss(const ParamVector& params, const ClientDataset& data,
              std::span<const std::size_t> indices) const override;
  ParamVector gradient(const ParamVector& params, const ClientDataset& data,
                       std::span<const std::size_t> indices) const override;
  ParamVector init_params(RngStream& rng) const override;

 private:
  int dim_;
  int hidden_;
  int classes_;
};

std::unique_ptr<LossModel> make_model(const std::string& kind, int feature_dim,
                                      int num_classes, int hidden_units);

}  // namespace fedrr
