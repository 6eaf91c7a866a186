#pragma once

#include "dalab/core.hpp"
#include "dalab/forward_model.hpp"

#include <memory>

namespace dalab {

/// Data y with independent Gaussian noise of standard deviation sigma per
/// component, observed through a forward model.
class Likelihood {
public:
  Likelihood(std::shared_ptr<const ForwardModel> model, Vector y, Vector sigma)
      : model_(std::move(model)), y_(std::move(y)), sigma_(std::move(sigma)) {
    require(model_ != nullptr, "Likelihood: null forward model");
    require(y_.size() == model_->observation_size(), "Likelihood: data length does not match the forward output");
    require(sigma_.size() == y_.size(), "Likelihood: noise length does not match the data");
    require((sigma_.array() > 0.0).all() && sigma_.allFinite(), "Likelihood: noise deviations must be positive");
  }

  const ForwardModel& model() const { return *model_; }
  std::shared_ptr<const ForwardModel> model_ptr() const { return model_; }
  const Vector& data() const { return y_; }
  const Vector& sigma() const { return sigma_; }
  Vector variances() const { return sigma_.cwiseAbs2(); }
  Eigen::Index size() const { return y_.size(); }

  /// Gamma^{-1/2} (g - y).
  Vector whitened_residual(const Vector& prediction) const {
    return (prediction - y_).cwiseQuotient(sigma_);
  }

  double misfit(const Vector& prediction) const { return 0.5 * whitened_residual(prediction).squaredNorm(); }

  /// Phi(u, y); one forward evaluation.
  double phi(const Vector& u) const { return misfit(model_->evaluate(u)); }
  double operator()(const Vector& u) const { return phi(u); }

  /// Same model and noise with different data (perturbed observations).
  Likelihood with_data(Vector y) const { return Likelihood(model_, std::move(y), sigma_); }

private:
  std::shared_ptr<const ForwardModel> model_;
  Vector y_;
  Vector sigma_;
};

}  // namespace dalab
