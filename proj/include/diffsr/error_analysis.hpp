#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "diffsr/denoiser.hpp"
#include "diffsr/image.hpp"
#include "diffsr/rng.hpp"
#include "diffsr/schedule.hpp"

namespace diffsr {

/// Reverse-process variance used in the per-step weight.
///   ddpm:          beta_tilde_i
///   ddim_ratio:    ((1 - abar_{i-1})/(1 - abar_i)) * ((1 - abar_i)/abar_{i-1})
///   ddim_standard: eta^2 * beta_tilde_i (adjacent-step DDIM sigma^2)
enum class VarianceModel { ddpm, ddim_ratio, ddim_standard };

/// Prior term C_t of the cumulative bound.
///   zero:        C_t = 0
///   gaussian_kl: per-element mean of KL(q(x_t | x0) || N(0, I))
enum class PriorModel { zero, gaussian_kl };

/// Forward-gap KL form.
///   standard: abar |d|^2 / (2 (1 - abar)), A_t = 0
///   expanded: A_t + K_t |d|^2 with A_t = K_t (|x0|^2 + |x_hat0|^2)
enum class KlFormulation { standard, expanded };

/// What to do with a non-positive reverse variance (beta_tilde_1 is 0).
///   clip_next: reuse the variance of step i + 1
///   absolute:  floor at NoiseSchedule::kVarianceFloor
enum class VarianceFloor { clip_next, absolute };

VarianceModel parse_variance_model(std::string_view name);
PriorModel parse_prior_model(std::string_view name);
KlFormulation parse_kl_formulation(std::string_view name);
VarianceFloor parse_variance_floor(std::string_view name);
std::string_view to_string(VarianceModel v);
std::string_view to_string(PriorModel v);
std::string_view to_string(KlFormulation v);
std::string_view to_string(VarianceFloor v);

struct ErrorModelConfig {
  /// Converged per-element training loss |eps - eps_theta|^2.
  double e0 = 0.05;
  /// Decoder term L_0, a constant offset.
  double l0_const = 0.0;
  double omega = 0.004;
  VarianceModel variance_model = VarianceModel::ddpm;
  double ddim_eta = 1.0;
  PriorModel prior_model = PriorModel::zero;
  KlFormulation formulation = KlFormulation::standard;
  VarianceFloor floor = VarianceFloor::clip_next;
};

/// Throws ConfigError naming the field.
void validate(const ErrorModelConfig& config);

/// Reverse variance |Sigma_i|^2 for the model, after flooring. Throws
/// NumericalError(i) if it is still not positive.
double reverse_variance(int i, const NoiseSchedule& schedule, VarianceModel model, double eta,
                        VarianceFloor floor);

/// (1 - alpha_i)^2 / (2 alpha_i (1 - abar_i) |Sigma_i|^2), 1 <= i <= T - 1.
double per_step_weight(int i, const NoiseSchedule& schedule, VarianceModel model,
                       double eta = 1.0, VarianceFloor floor = VarianceFloor::clip_next);
double per_step_weight(int i, const NoiseSchedule& schedule, const ErrorModelConfig& config);

/// C_t under the prior model; x0_mean_square is the per-element mean of x0^2.
double prior_term(int t, const NoiseSchedule& schedule, PriorModel model, double x0_mean_square);

/// C_t + sum_{i=1}^{t-1} w_i E0 + L0, 1 <= t <= T.
double cumulative_bound(int t, const ErrorModelConfig& config, const NoiseSchedule& schedule,
                        double x0_mean_square = 0.0);

struct KlResult {
  double kl = 0.0;
  double k_t = 0.0;
  double a_t = 0.0;
};

/// KL between q(x_t | x0) and q(x_t | x_hat0). Norms are per-element means.
/// At t = 0 the result is +inf when the images differ and 0 otherwise.
KlResult forward_gap_kl(const ImageTensor& x0, const ImageTensor& x_hat0, int t,
                        const NoiseSchedule& schedule,
                        KlFormulation formulation = KlFormulation::standard);
/// Same from per-element statistics: mean (x0 - x_hat0)^2, mean x0^2, mean x_hat0^2.
KlResult forward_gap_kl_from_stats(double delta_ms, double x0_ms, double x_hat0_ms, int t,
                                   const NoiseSchedule& schedule, KlFormulation formulation);

/// Per-step curves over t = 0..T.
struct LossCurve {
  int steps = 0;
  double omega = 0.0;
  std::vector<double> signature;
  std::vector<double> fidelity;
  std::vector<double> weighted_fidelity;
  std::vector<double> total;
  std::vector<double> k;
  std::vector<double> a;

  double noise_level(int t) const { return static_cast<double>(t) / steps; }
  /// CSV: t,noise_level,signature,fidelity,weighted_fidelity,total,K_t,A_t.
  void write_csv(std::ostream& out) const;
};

/// Statistics the curve depends on, all per-element means.
struct PairStats {
  double delta_ms = 0.0;
  double x0_ms = 0.0;
  double x_hat0_ms = 0.0;
};

PairStats pair_stats(const ImageTensor& x0, const ImageTensor& x_hat0);

/// signature[t] = cumulative bound (L0 alone at t = 0), fidelity[t] =
/// forward-gap KL, total = signature + omega * fidelity.
LossCurve loss_curve(const ImageTensor& x0, const ImageTensor& x_hat0,
                     const ErrorModelConfig& config, const NoiseSchedule& schedule);
LossCurve loss_curve_from_stats(const PairStats& stats, const ErrorModelConfig& config,
                                const NoiseSchedule& schedule);

struct E0Estimate {
  /// Mean over trials of the summed squared error (element count for a zero predictor).
  double total = 0.0;
  /// `total` divided by the element count.
  double per_element = 0.0;
  double standard_error = 0.0;
};

/// Monte Carlo mean of |eps - eps_theta(sqrt(abar) x0 + sqrt(1 - abar) eps, t)|^2
/// with x0 drawn uniformly from `samples` and t uniformly from [1, T].
E0Estimate estimate_e0(Denoiser& denoiser, const std::vector<ImageTensor>& samples,
                       const NoiseSchedule& schedule, Rng& rng, int trials);

}  // namespace diffsr
