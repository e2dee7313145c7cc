#include "diffsr/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "diffsr/errors.hpp"
#include "diffsr/image_io.hpp"

namespace diffsr {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

nlohmann::json quality_json(const QualityMetrics& q) {
  return {{"psnr", q.psnr},
          {"ssim", q.ssim},
          {"low_freq_error", q.freq.low},
          {"high_freq_error", q.freq.high},
          {"total_freq_error", q.freq.total}};
}

template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  if (!v) return nullptr;
  return *v;
}

// Shared tail of both modes: x_hat is already at native resolution.
void run_core(SrOutcome& out, const ImageTensor& x_hat, const ImageTensor* ground_truth,
              std::optional<double> scale, const SrSettings& settings, Denoiser& denoiser,
              const NoiseSchedule& schedule) {
  SrReport& rep = out.report;
  rep.steps = schedule.steps();
  rep.seed = settings.sampler.seed;
  rep.schedule_fingerprint = schedule.fingerprint();
  rep.scale = scale;

  require_native_shape(denoiser, x_hat.shape());

  if (ground_truth) {
    const auto t0 = Clock::now();
    rep.input_quality = evaluate_quality(x_hat, *ground_truth, settings.freq);
    rep.timings.metrics_ms += ms_since(t0);
  }

  const auto t_sel = Clock::now();
  int t = 0;
  if (settings.t) {
    t = *settings.t;
    schedule.noise_level(t);
  } else {
    PairStats stats;
    if (settings.degradation == DegradationMode::oracle) {
      if (!ground_truth)
        throw ConfigError("prf.degradation", "oracle degradation needs a ground-truth image");
      stats = pair_stats(*ground_truth, x_hat);
      rep.degradation_source = "oracle";
    } else {
      stats = proxy_degradation(x_hat, scale.value_or(1.0));
      rep.degradation_source = "proxy";
    }
    Selection sel = select_injection_step(stats, settings.error_model, settings.prf, schedule);
    rep.degradation_stats = stats;
    rep.prf = sel.prf;
    if (sel.prf.t_star) {
      t = *sel.prf.t_star;
    } else {
      rep.prf_fallback = true;
    }
  }
  rep.t = t;
  rep.timings.select_ms = ms_since(t_sel);
  rep.stage = "selected";

  const auto t_sample = Clock::now();
  Rng rng(settings.sampler.seed);
  ImageTensor result =
      super_resolve(x_hat, t, denoiser, settings.sampler, schedule, rng, &rep.sampler);
  rep.timings.sample_ms = ms_since(t_sample);
  rep.stage = "sampled";

  if (ground_truth) {
    const auto t0 = Clock::now();
    rep.output_quality = evaluate_quality(result, *ground_truth, settings.freq);
    rep.timings.metrics_ms += ms_since(t0);
    rep.stage = "measured";
  }
  out.image = std::move(result);
}

template <class F>
void guarded(SrOutcome& out, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    out.report.error = e.what();
  }
}

}  // namespace

ImageTensor degrade(const ImageTensor& hr, const DegradeSpec& spec) {
  if (!(spec.scale >= 1.0) || !std::isfinite(spec.scale))
    throw RangeError("degrade: scale must be >= 1, got " + std::to_string(spec.scale));
  const int h = scaled_dimension(hr.height(), spec.scale);
  const int w = scaled_dimension(hr.width(), spec.scale);
  const ImageTensor small = resize(hr, h, w, spec.down);
  return resize(small, hr.height(), hr.width(), spec.up);
}

ImageTensor super_resolve(const ImageTensor& lr_native, int t, Denoiser& denoiser,
                          const SamplerConfig& sampler, const NoiseSchedule& schedule, Rng& rng,
                          SamplerDiagnostics* diagnostics) {
  require_native_shape(denoiser, lr_native.shape());
  if (t < 0 || t > schedule.steps())
    throw RangeError("super_resolve: t = " + std::to_string(t) + " outside [0, " +
                     std::to_string(schedule.steps()) + "]");
  validate(sampler);
  if (t == 0) return lr_native;
  NoisedSample noised = forward_marginal_sample(lr_native, t, schedule, rng);
  return reverse_from(noised.x_t, t, denoiser, sampler, schedule, rng, diagnostics);
}

QualityMetrics evaluate_quality(const ImageTensor& output, const ImageTensor& reference,
                                const FreqSplitSpec& freq) {
  const ImageTensor a = to_unit_range(output);
  const ImageTensor b = to_unit_range(reference);
  QualityMetrics q;
  q.psnr = psnr(a, b, 1.0);
  q.ssim = ssim(a, b);
  q.freq = freq_split_error(a, b, freq);
  return q;
}

nlohmann::json SrReport::to_json() const {
  nlohmann::json j;
  j["mode"] = mode;
  j["t"] = opt(t);
  j["noise_level"] = t && steps > 0 ? nlohmann::json(static_cast<double>(*t) / steps) : nullptr;
  j["steps"] = steps;
  j["scale"] = opt(scale);
  if (output_quality) {
    const auto q = quality_json(*output_quality);
    for (auto it = q.begin(); it != q.end(); ++it) j[it.key()] = it.value();
  } else {
    for (const char* k : {"psnr", "ssim", "low_freq_error", "high_freq_error", "total_freq_error"})
      j[k] = nullptr;
  }
  j["input_metrics"] = input_quality ? quality_json(*input_quality) : nlohmann::json(nullptr);
  if (prf) {
    j["prf"] = diffsr::to_json(*prf);
    j["prf"]["fallback_to_t0"] = prf_fallback;
  } else {
    j["prf"] = nullptr;
  }
  if (degradation_stats)
    j["degradation"] = {{"source", degradation_source},
                        {"delta_mean_square", degradation_stats->delta_ms},
                        {"x0_mean_square", degradation_stats->x0_ms},
                        {"x_hat_mean_square", degradation_stats->x_hat0_ms}};
  else
    j["degradation"] = nullptr;
  j["seed"] = seed;
  j["schedule_fingerprint"] = schedule_fingerprint;
  j["denoiser_calls"] = sampler.denoiser_calls;
  j["timings_ms"] = {{"load", timings.load_ms},     {"degrade", timings.degrade_ms},
                     {"select", timings.select_ms}, {"sample", timings.sample_ms},
                     {"metrics", timings.metrics_ms}, {"total", timings.total_ms}};
  j["stage"] = stage;
  j["error"] = opt(error);
  j["output_path"] = opt(output_path);
  j["fid"] = opt(fid);
  return j;
}

SrOutcome run_evaluation(const ImageTensor& hr, const DegradeSpec& spec, const SrSettings& settings,
                         Denoiser& denoiser, const NoiseSchedule& schedule) {
  SrOutcome out;
  out.report.mode = "evaluation";
  const auto start = Clock::now();
  guarded(out, [&] {
    const auto t0 = Clock::now();
    const ImageTensor x_hat = degrade(hr, spec);
    out.report.timings.degrade_ms = ms_since(t0);
    out.report.stage = "degraded";
    run_core(out, x_hat, &hr, spec.scale, settings, denoiser, schedule);
  });
  out.report.timings.total_ms = ms_since(start);
  return out;
}

SrOutcome run_deployment(const ImageTensor& lr, const Shape& native, double scale,
                         const std::optional<ImageTensor>& ground_truth,
                         const SrSettings& settings, Denoiser& denoiser,
                         const NoiseSchedule& schedule) {
  SrOutcome out;
  out.report.mode = "deployment";
  const auto start = Clock::now();
  guarded(out, [&] {
    if (native.channels != lr.channels())
      throw ShapeError("input has " + std::to_string(lr.channels()) +
                       " channels, native resolution expects " + std::to_string(native.channels));
    if (ground_truth && ground_truth->shape() != native)
      throw ShapeError("ground truth " + ground_truth->shape().to_string() +
                       " does not match native resolution " + native.to_string());
    const auto t0 = Clock::now();
    const ImageTensor x_hat = resize(lr, native.height, native.width, settings.up_method);
    out.report.timings.degrade_ms = ms_since(t0);
    out.report.stage = "upsampled";
    run_core(out, x_hat, ground_truth ? &*ground_truth : nullptr, scale, settings, denoiser,
             schedule);
  });
  out.report.timings.total_ms = ms_since(start);
  return out;
}

SrOutcome run_request(const SrRequest& req, Denoiser& denoiser, const NoiseSchedule& schedule) {
  SrOutcome out;
  const auto start = Clock::now();
  guarded(out, [&] {
    const auto t0 = Clock::now();
    const ImageTensor input = read_png(req.input);
    std::optional<ImageTensor> gt;
    if (req.ground_truth) gt = read_png(*req.ground_truth);
    const double load_ms = ms_since(t0);

    if (req.degrade) {
      out = run_evaluation(input, *req.degrade, req.settings, denoiser, schedule);
    } else {
      Shape native{};
      if (req.native)
        native = *req.native;
      else if (auto dn = denoiser.native_shape())
        native = *dn;
      else if (gt)
        native = gt->shape();
      else if (req.scale)
        native = Shape{static_cast<int>(std::lround(input.height() * *req.scale)),
                       static_cast<int>(std::lround(input.width() * *req.scale)),
                       input.channels()};
      else
        throw ConfigError("sr.native", "cannot infer the native resolution; set it or a scale");
      const double scale =
          req.scale.value_or(static_cast<double>(native.height) / input.height());
      out = run_deployment(input, native, scale, gt, req.settings, denoiser, schedule);
    }
    out.report.timings.load_ms = load_ms;
    if (!out.report.ok()) return;
    if (req.output && out.image) {
      write_png(*req.output, *out.image, req.bit_depth);
      out.report.output_path = req.output->string();
      out.report.stage = "written";
    }
  });
  if (out.report.mode.empty()) out.report.mode = req.degrade ? "evaluation" : "deployment";
  out.report.timings.total_ms = ms_since(start);
  if (req.report) {
    std::ofstream f(*req.report);
    if (f) f << out.report.to_json().dump(2) << '\n';
    if (!f && out.report.ok()) out.report.error = "cannot write report '" + req.report->string() + "'";
  }
  return out;
}

}  // namespace diffsr
