#include "diffsr/analytic_denoiser.hpp"

#include <cmath>

#include "diffsr/errors.hpp"

namespace diffsr {

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(std::shared_ptr<const NoiseSchedule> schedule,
                                                   double mean, double variance)
    : schedule_(std::move(schedule)),
      mean_(ImageTensor::scalar(mean)),
      variance_(ImageTensor::scalar(variance)) {
  if (!schedule_) throw UsageError("analytic denoiser needs a schedule");
  if (!(variance >= 0.0)) throw ConfigError("denoiser.variance", "must be >= 0");
}

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(std::shared_ptr<const NoiseSchedule> schedule,
                                                   ImageTensor mean, ImageTensor variance)
    : schedule_(std::move(schedule)),
      mean_(std::move(mean)),
      variance_(std::move(variance)),
      per_element_(true) {
  if (!schedule_) throw UsageError("analytic denoiser needs a schedule");
  require_same_shape(mean_, variance_, "analytic denoiser parameters");
  for (double v : variance_.data())
    if (!(v >= 0.0)) throw ConfigError("denoiser.variance", "must be >= 0 elementwise");
}

std::optional<Shape> AnalyticGaussianDenoiser::native_shape() const {
  if (per_element_) return mean_.shape();
  return std::nullopt;
}

ImageTensor AnalyticGaussianDenoiser::posterior_x0(const ImageTensor& x_t, int t) const {
  if (per_element_) require_same_shape(x_t, mean_, "analytic denoiser input");
  if (t < 1) throw RangeError("analytic denoiser requires t >= 1");
  const double ab = schedule_->alpha_bar(t);
  const double a = std::sqrt(ab);
  ImageTensor m(x_t.shape(), 0.0, x_t.range());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double v0 = var_at(i);
    m[i] = (a * v0 * x_t[i] + (1.0 - ab) * mean_at(i)) / (ab * v0 + (1.0 - ab));
  }
  return m;
}

ImageTensor AnalyticGaussianDenoiser::predict_noise(const ImageTensor& x_t, int t) {
  ImageTensor m = posterior_x0(x_t, t);
  const double ab = schedule_->alpha_bar(t);
  const double a = std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < x_t.size(); ++i) m[i] = (x_t[i] - a * m[i]) / s;
  return m;
}

GaussianFit fit_gaussian(const std::vector<ImageTensor>& images, double variance_floor) {
  if (images.empty()) throw UsageError("fit_gaussian needs at least one image");
  const Shape shape = images.front().shape();
  ImageTensor mean(shape, 0.0);
  ImageTensor var(shape, 0.0);
  for (const auto& img : images) {
    require_same_shape(img, images.front(), "fit_gaussian");
    for (std::size_t i = 0; i < img.size(); ++i) mean[i] += img[i];
  }
  const double n = static_cast<double>(images.size());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] /= n;
  for (const auto& img : images)
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double d = img[i] - mean[i];
      var[i] += d * d;
    }
  for (std::size_t i = 0; i < var.size(); ++i) var[i] = std::max(var[i] / n, variance_floor);
  return {std::move(mean), std::move(var)};
}

}  // namespace diffsr
