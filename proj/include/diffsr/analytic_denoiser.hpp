#pragma once

#include <memory>
#include <vector>

#include "diffsr/denoiser.hpp"
#include "diffsr/schedule.hpp"

namespace diffsr {

/// Exact noise predictor for diagonal Gaussian data N(mu0, diag(v0)).
///
/// With m = (sqrt(abar) v0 x_t + (1 - abar) mu0) / (abar v0 + 1 - abar) the
/// posterior mean E[x0 | x_t], the prediction is
/// (x_t - sqrt(abar) m) / sqrt(1 - abar).
class AnalyticGaussianDenoiser final : public Denoiser {
 public:
  /// Scalar parameters broadcast to any input shape.
  AnalyticGaussianDenoiser(std::shared_ptr<const NoiseSchedule> schedule, double mean,
                           double variance);
  /// Per-element parameters; inputs must have `mean.shape()`.
  AnalyticGaussianDenoiser(std::shared_ptr<const NoiseSchedule> schedule, ImageTensor mean,
                           ImageTensor variance);

  ImageTensor predict_noise(const ImageTensor& x_t, int t) override;
  std::optional<Shape> native_shape() const override;

  /// Posterior mean E[x0 | x_t] under the Gaussian prior.
  ImageTensor posterior_x0(const ImageTensor& x_t, int t) const;

  const ImageTensor& mean() const noexcept { return mean_; }
  const ImageTensor& variance() const noexcept { return variance_; }

 private:
  double mean_at(std::size_t i) const noexcept { return per_element_ ? mean_[i] : mean_[0]; }
  double var_at(std::size_t i) const noexcept { return per_element_ ? variance_[i] : variance_[0]; }

  std::shared_ptr<const NoiseSchedule> schedule_;
  ImageTensor mean_;
  ImageTensor variance_;
  bool per_element_ = false;
};

struct GaussianFit {
  ImageTensor mean;
  ImageTensor variance;
};

/// Per-element sample mean and (population) variance of same-shape images,
/// variance floored at `variance_floor`.
GaussianFit fit_gaussian(const std::vector<ImageTensor>& images, double variance_floor = 1e-6);

/// Returns all zeros; the trivial baseline predictor.
class ZeroDenoiser final : public Denoiser {
 public:
  ImageTensor predict_noise(const ImageTensor& x_t, int) override {
    return ImageTensor(x_t.shape(), 0.0, x_t.range());
  }
};

}  // namespace diffsr
