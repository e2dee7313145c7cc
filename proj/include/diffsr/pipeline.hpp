#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "diffsr/diffusion.hpp"
#include "diffsr/error_analysis.hpp"
#include "diffsr/metrics.hpp"
#include "diffsr/prf.hpp"
#include "diffsr/resample.hpp"

namespace diffsr {

struct DegradeSpec {
  double scale = 2.0;
  ResampleMethod down = ResampleMethod::bicubic;
  ResampleMethod up = ResampleMethod::bicubic;
};

/// Downsample to round(dim / scale) (at least 1) and restore the input size.
/// Throws RangeError for scale < 1.
ImageTensor degrade(const ImageTensor& hr, const DegradeSpec& spec);

/// Inject t steps of forward noise into lr_native and reverse-diffuse back to
/// step 0. t = 0 returns the input. The shape is checked against the
/// denoiser before any sampling.
ImageTensor super_resolve(const ImageTensor& lr_native, int t, Denoiser& denoiser,
                          const SamplerConfig& sampler, const NoiseSchedule& schedule, Rng& rng,
                          SamplerDiagnostics* diagnostics = nullptr);

struct QualityMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  FreqSplit freq;
};

/// Metrics on the [0, 1] representation (PSNR peak 1).
QualityMetrics evaluate_quality(const ImageTensor& output, const ImageTensor& reference,
                                const FreqSplitSpec& freq = {});

/// Settings shared by the in-memory and file-based entry points.
struct SrSettings {
  /// Explicit injection step; nullopt selects it through the PRF.
  std::optional<int> t;
  DegradationMode degradation = DegradationMode::proxy;
  SamplerConfig sampler;
  ErrorModelConfig error_model;
  PrfConfig prf;
  FreqSplitSpec freq;
  /// Used to bring a deployment-mode input to the native resolution.
  ResampleMethod up_method = ResampleMethod::bicubic;
};

struct SrTimings {
  double load_ms = 0.0;
  double degrade_ms = 0.0;
  double select_ms = 0.0;
  double sample_ms = 0.0;
  double metrics_ms = 0.0;
  double total_ms = 0.0;
};

struct SrReport {
  std::string mode;  // "evaluation" or "deployment"
  std::optional<int> t;
  int steps = 0;
  std::optional<double> scale;
  std::optional<QualityMetrics> input_quality;   // degraded input vs ground truth
  std::optional<QualityMetrics> output_quality;  // recovered image vs ground truth
  std::optional<PrfResult> prf;
  std::optional<PairStats> degradation_stats;
  std::string degradation_source;
  /// True when auto mode found no feasible step and fell back to t = 0.
  bool prf_fallback = false;
  std::uint64_t seed = 0;
  std::string schedule_fingerprint;
  SamplerDiagnostics sampler;
  SrTimings timings;
  /// Last stage that completed: loaded, degraded, selected, sampled, measured, written.
  std::string stage = "started";
  std::optional<std::string> error;
  std::optional<std::string> output_path;
  /// Filled by external tooling; always null here.
  std::optional<double> fid;

  bool ok() const noexcept { return !error.has_value(); }
  nlohmann::json to_json() const;
};

struct SrOutcome {
  SrReport report;
  std::optional<ImageTensor> image;
};

/// Evaluation mode: `hr` is degraded by `spec` and serves as ground truth.
SrOutcome run_evaluation(const ImageTensor& hr, const DegradeSpec& spec, const SrSettings& settings,
                         Denoiser& denoiser, const NoiseSchedule& schedule);

/// Deployment mode: `lr` is upsampled to `native` with settings.up_method.
/// `scale` feeds the blind degradation estimate; `ground_truth`, when given,
/// is only used for metrics and the oracle degradation source.
SrOutcome run_deployment(const ImageTensor& lr, const Shape& native, double scale,
                         const std::optional<ImageTensor>& ground_truth,
                         const SrSettings& settings, Denoiser& denoiser,
                         const NoiseSchedule& schedule);

/// File-based request. In evaluation mode `input` is the high-resolution
/// image; otherwise it is the low-resolution input and `ground_truth` is
/// optional and is the only other file read.
struct SrRequest {
  std::filesystem::path input;
  std::optional<DegradeSpec> degrade;
  std::optional<std::filesystem::path> ground_truth;
  /// Deployment: native resolution; defaults to the denoiser's, then the
  /// ground truth's, then input dims times `scale`.
  std::optional<Shape> native;
  /// Deployment: upscale factor; defaults to native height / input height.
  std::optional<double> scale;
  SrSettings settings;
  std::optional<std::filesystem::path> output;
  std::optional<std::filesystem::path> report;
  int bit_depth = 8;
};

/// Never throws for runtime failures; they are recorded in the report, which
/// is still written when a report path is set.
SrOutcome run_request(const SrRequest& request, Denoiser& denoiser, const NoiseSchedule& schedule);

}  // namespace diffsr
