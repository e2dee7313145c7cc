#pragma once

#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "diffsr/error_analysis.hpp"
#include "diffsr/image.hpp"
#include "diffsr/schedule.hpp"

namespace diffsr {

/// absolute: the threshold is used as given.
/// relative: signature threshold = value * signature[T];
///           fidelity threshold  = value * weighted_fidelity[1].
enum class ThresholdMode { absolute, relative };

ThresholdMode parse_threshold_mode(std::string_view name);
std::string_view to_string(ThresholdMode mode);

struct PrfConfig {
  double c_s = 0.62;
  ThresholdMode signature_mode = ThresholdMode::relative;
  double c_f = 2.57e-5;
  ThresholdMode fidelity_mode = ThresholdMode::absolute;
};

void validate(const PrfConfig& config);

/// Inclusive step range [lo, hi].
struct StepInterval {
  int lo = 0;
  int hi = 0;
  bool operator==(const StepInterval&) const = default;
};

struct PrfDiagnostics {
  double signature_min = 0.0;
  double signature_max = 0.0;
  double weighted_fidelity_min = 0.0;
  double weighted_fidelity_max = 0.0;
};

struct PrfResult {
  int steps = 0;
  std::vector<StepInterval> feasible_set;
  std::optional<int> t_star;
  bool feasible = false;
  /// Thresholds after resolving relative modes.
  double signature_threshold = 0.0;
  double fidelity_threshold = 0.0;
  PrfDiagnostics diagnostics;

  bool contains(int t) const;
};

/// Feasible set {t : signature[t] <= C_S and weighted_fidelity[t] <= C_F} and
/// the argmin of total over it, ties to the smaller t. NaN entries are
/// infeasible.
PrfResult compute_prf(const LossCurve& curve, const PrfConfig& config);

/// Source of the |x - x_hat0|^2 statistic.
enum class DegradationMode { oracle, proxy };

DegradationMode parse_degradation_mode(std::string_view name);

/// Spectral extrapolation factor used by the proxy: the ratio of sum r^-2
/// over radial frequencies r >= fc to the same sum over fc/2 <= r < fc, on an
/// h x w DFT grid with fc = 0.5 / scale.
double proxy_extrapolation_factor(int h, int w, double scale);

/// Blind estimate of the statistics of (x, x_hat) when x is unknown.
///
/// The energy lost by downsampling at `scale` lies above the cut-off
/// fc = 0.5 / scale. It is extrapolated from the energy x_hat still carries in
/// the octave just below the cut-off, [fc/2, fc), assuming a 1/r^2 power
/// spectrum. x0_ms is estimated by the x_hat mean square. scale <= 1 yields a
/// zero difference.
PairStats proxy_degradation(const ImageTensor& x_hat, double scale);

struct Selection {
  PairStats stats;
  LossCurve curve;
  PrfResult prf;
};

/// Loss curve from the given statistics followed by compute_prf.
Selection select_injection_step(const PairStats& stats, const ErrorModelConfig& error_config,
                                const PrfConfig& prf_config, const NoiseSchedule& schedule);
/// Oracle form using the ground truth x0.
Selection select_injection_step(const ImageTensor& x0, const ImageTensor& x_hat,
                                const ErrorModelConfig& error_config, const PrfConfig& prf_config,
                                const NoiseSchedule& schedule);

/// JSON report: feasible, t_star, noise_level, intervals (steps and noise-level
/// fractions), thresholds, diagnostics.
nlohmann::json to_json(const PrfResult& result);

/// CSV: t,noise_level,signature_margin,fidelity_margin,feasible where a
/// margin is threshold minus curve value.
void write_margins_csv(std::ostream& out, const LossCurve& curve, const PrfResult& result);

}  // namespace diffsr
