#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "diffsr/denoiser.hpp"
#include "diffsr/image.hpp"
#include "diffsr/rng.hpp"
#include "diffsr/schedule.hpp"

namespace diffsr {

/// sqrt(1 - beta_t) * x_prev + sqrt(beta_t) * eps with eps drawn from `rng`.
ImageTensor forward_step_sample(const ImageTensor& x_prev, int t, const NoiseSchedule& schedule,
                                Rng& rng);
/// Same step with caller-supplied noise.
ImageTensor forward_step_sample(const ImageTensor& x_prev, int t, const NoiseSchedule& schedule,
                                const ImageTensor& eps);

struct NoisedSample {
  ImageTensor x_t;
  ImageTensor eps;
};

/// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps. Returns the noise drawn.
NoisedSample forward_marginal_sample(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                                     Rng& rng);
ImageTensor forward_marginal_sample(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                                    const ImageTensor& eps);

/// Below this alpha_bar the inversion is flagged as ill-conditioned.
inline constexpr double kIllConditionedAlphaBar = 1e-12;

struct X0Estimate {
  ImageTensor x0;
  /// alpha_bar_t < 1e-12 and no clamping was applied.
  bool ill_conditioned = false;
};

/// (x_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t), optionally clamped to
/// the input's value range.
X0Estimate predict_x0(const ImageTensor& x_t, int t, const ImageTensor& eps_hat,
                      const NoiseSchedule& schedule, bool clamp = false);

/// Posterior mean of q(x_{t-1} | x_t, x0).
ImageTensor posterior_mean(const ImageTensor& x_t, const ImageTensor& x0, int t,
                           const NoiseSchedule& schedule);

enum class SamplerFamily { ddpm, ddim };

SamplerFamily parse_sampler_family(std::string_view name);
std::string_view to_string(SamplerFamily family);

struct SamplerConfig {
  SamplerFamily family = SamplerFamily::ddim;
  double ddim_eta = 0.0;
  /// Number of reverse steps for DDIM; nullopt runs every step.
  std::optional<int> ddim_substeps;
  std::uint64_t seed = 0;
  bool clamp_x0 = true;
};

/// Throws ConfigError on invalid settings.
void validate(const SamplerConfig& config);

/// DDIM sigma^2 = eta^2 * (1 - abar_prev)/(1 - abar_t) * (1 - abar_t/abar_prev).
double ddim_variance(int t, int t_prev, double eta, const NoiseSchedule& schedule);

/// One reverse transition t -> t_prev. DDPM requires t_prev == t - 1.
ImageTensor reverse_step(const ImageTensor& x_t, int t, int t_prev, Denoiser& denoiser,
                         const SamplerConfig& config, const NoiseSchedule& schedule, Rng& rng);

/// Descending step sequence starting at t and ending at 0. DDPM visits every
/// step; DDIM with substeps = k uses round(t * (k - j) / k) for j = 0..k,
/// deduplicated.
std::vector<int> reverse_sequence(int t, const SamplerConfig& config);

struct SamplerDiagnostics {
  int denoiser_calls = 0;
  int ill_conditioned_steps = 0;
};

/// Runs reverse_step along reverse_sequence(t). t = 0 returns the input.
/// Denoiser failures are rethrown with the step attached.
ImageTensor reverse_from(const ImageTensor& x_t, int t, Denoiser& denoiser,
                         const SamplerConfig& config, const NoiseSchedule& schedule, Rng& rng,
                         SamplerDiagnostics* diagnostics = nullptr);

}  // namespace diffsr
