#include "diffsr/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "diffsr/errors.hpp"

namespace diffsr {

void require_native_shape(const Denoiser& denoiser, const Shape& shape) {
  if (auto native = denoiser.native_shape(); native && *native != shape)
    throw ShapeError("input " + shape.to_string() + " does not match denoiser native resolution " +
                     native->to_string());
}

ImageTensor forward_step_sample(const ImageTensor& x_prev, int t, const NoiseSchedule& schedule,
                                Rng& rng) {
  ImageTensor eps(x_prev.shape());
  rng.fill_normal(eps.data());
  return forward_step_sample(x_prev, t, schedule, eps);
}

ImageTensor forward_step_sample(const ImageTensor& x_prev, int t, const NoiseSchedule& schedule,
                                const ImageTensor& eps) {
  require_same_shape(x_prev, eps, "forward_step_sample");
  const double b = schedule.beta(t);
  const double keep = std::sqrt(1.0 - b);
  const double scale = std::sqrt(b);
  ImageTensor out(x_prev.shape(), 0.0, x_prev.range());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x_prev[i] + scale * eps[i];
  return out;
}

NoisedSample forward_marginal_sample(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                                     Rng& rng) {
  schedule.alpha_bar(t);
  ImageTensor eps(x0.shape());
  rng.fill_normal(eps.data());
  ImageTensor x_t = forward_marginal_sample(x0, t, schedule, eps);
  return {std::move(x_t), std::move(eps)};
}

ImageTensor forward_marginal_sample(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                                    const ImageTensor& eps) {
  require_same_shape(x0, eps, "forward_marginal_sample");
  const double ab = schedule.alpha_bar(t);
  if (t == 0) return x0;
  const double a = std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  ImageTensor out(x0.shape(), 0.0, x0.range());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
  return out;
}

X0Estimate predict_x0(const ImageTensor& x_t, int t, const ImageTensor& eps_hat,
                      const NoiseSchedule& schedule, bool clamp) {
  require_same_shape(x_t, eps_hat, "predict_x0");
  if (t < 1) throw RangeError("predict_x0 requires t >= 1, got " + std::to_string(t));
  const double ab = schedule.alpha_bar(t);
  const double inv = 1.0 / std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  X0Estimate est{ImageTensor(x_t.shape(), 0.0, x_t.range()), false};
  const double lo = x_t.range().lo;
  const double hi = x_t.range().hi;
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    double v = (x_t[i] - s * eps_hat[i]) * inv;
    if (clamp) v = std::clamp(v, lo, hi);
    est.x0[i] = v;
  }
  est.ill_conditioned = !clamp && ab < kIllConditionedAlphaBar;
  return est;
}

ImageTensor posterior_mean(const ImageTensor& x_t, const ImageTensor& x0, int t,
                           const NoiseSchedule& schedule) {
  require_same_shape(x_t, x0, "posterior_mean");
  if (t < 1) throw RangeError("posterior_mean requires t >= 1, got " + std::to_string(t));
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const double b = schedule.beta(t);
  const double c0 = std::sqrt(ab_prev) * b / (1.0 - ab);
  const double ct = std::sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab);
  ImageTensor out(x_t.shape(), 0.0, x_t.range());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0[i] + ct * x_t[i];
  return out;
}

SamplerFamily parse_sampler_family(std::string_view name) {
  if (name == "ddpm") return SamplerFamily::ddpm;
  if (name == "ddim") return SamplerFamily::ddim;
  throw ConfigError("sampler.family", "unknown sampler '" + std::string(name) +
                                          "' (expected ddpm or ddim)");
}

std::string_view to_string(SamplerFamily family) {
  return family == SamplerFamily::ddpm ? "ddpm" : "ddim";
}

void validate(const SamplerConfig& config) {
  if (!(config.ddim_eta >= 0.0) || !std::isfinite(config.ddim_eta))
    throw ConfigError("sampler.ddim_eta", "must be a finite value >= 0");
  if (config.ddim_substeps && *config.ddim_substeps < 1)
    throw ConfigError("sampler.ddim_substeps", "must be >= 1");
}

double ddim_variance(int t, int t_prev, double eta, const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  return eta * eta * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
}

ImageTensor reverse_step(const ImageTensor& x_t, int t, int t_prev, Denoiser& denoiser,
                         const SamplerConfig& config, const NoiseSchedule& schedule, Rng& rng) {
  if (t < 1 || t > schedule.steps())
    throw RangeError("reverse_step: t = " + std::to_string(t) + " outside [1, " +
                     std::to_string(schedule.steps()) + "]");
  if (t_prev < 0 || t_prev >= t)
    throw RangeError("reverse_step: t_prev = " + std::to_string(t_prev) + " must lie in [0, t)");
  if (config.family == SamplerFamily::ddpm && t_prev != t - 1)
    throw UsageError("DDPM reverse step requires t_prev = t - 1 (got t = " + std::to_string(t) +
                     ", t_prev = " + std::to_string(t_prev) + ")");

  const ImageTensor eps_hat = denoiser.predict_noise(x_t, t);
  if (eps_hat.shape() != x_t.shape())
    throw DenoiserError("prediction shape " + eps_hat.shape().to_string() + " != input shape " +
                        x_t.shape().to_string());
  const X0Estimate est = predict_x0(x_t, t, eps_hat, schedule, config.clamp_x0);
  ImageTensor out(x_t.shape(), 0.0, x_t.range());

  if (config.family == SamplerFamily::ddpm) {
    ImageTensor mean = posterior_mean(x_t, est.x0, t, schedule);
    const double sigma = std::sqrt(schedule.sampling_variance(t));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mean[i] + sigma * rng.normal();
  } else {
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    const double var = ddim_variance(t, t_prev, config.ddim_eta, schedule);
    const double sigma = std::sqrt(var);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - var));
    const double a_prev = std::sqrt(ab_prev);
    const double a = std::sqrt(ab);
    const double s = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < out.size(); ++i) {
      // Noise direction consistent with the (possibly clamped) x0 estimate.
      const double e = config.clamp_x0 ? (x_t[i] - a * est.x0[i]) / s : eps_hat[i];
      double v = a_prev * est.x0[i] + dir * e;
      if (sigma > 0.0) v += sigma * rng.normal();
      out[i] = v;
    }
  }
  if (!out.all_finite()) throw NumericalError(t, "reverse step produced non-finite values");
  return out;
}

std::vector<int> reverse_sequence(int t, const SamplerConfig& config) {
  std::vector<int> seq;
  if (t <= 0) return {0};
  if (config.family == SamplerFamily::ddpm || !config.ddim_substeps || *config.ddim_substeps >= t) {
    seq.reserve(t + 1);
    for (int s = t; s >= 0; --s) seq.push_back(s);
    return seq;
  }
  const int k = *config.ddim_substeps;
  for (int j = 0; j <= k; ++j) {
    const int s = static_cast<int>(std::lround(static_cast<double>(t) * (k - j) / k));
    if (seq.empty() || seq.back() != s) seq.push_back(s);
  }
  return seq;
}

ImageTensor reverse_from(const ImageTensor& x_t, int t, Denoiser& denoiser,
                         const SamplerConfig& config, const NoiseSchedule& schedule, Rng& rng,
                         SamplerDiagnostics* diagnostics) {
  if (t < 0 || t > schedule.steps())
    throw RangeError("reverse_from: t = " + std::to_string(t) + " outside [0, " +
                     std::to_string(schedule.steps()) + "]");
  validate(config);
  if (t == 0) return x_t;
  const std::vector<int> seq = reverse_sequence(t, config);
  ImageTensor x = x_t;
  for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
    try {
      x = reverse_step(x, seq[k], seq[k + 1], denoiser, config, schedule, rng);
    } catch (const DenoiserError& e) {
      if (e.step()) throw;
      throw e.with_step(seq[k]);
    }
    if (diagnostics) {
      ++diagnostics->denoiser_calls;
      const double ab = schedule.alpha_bar(seq[k]);
      if (!config.clamp_x0 && ab < kIllConditionedAlphaBar) ++diagnostics->ill_conditioned_steps;
    }
  }
  return x;
}

}  // namespace diffsr
