#include "diffsr/prf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "diffsr/errors.hpp"
#include "diffsr/fft.hpp"

namespace diffsr {
namespace {

std::string fmt17(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// JSON cannot hold infinities.
nlohmann::json number_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

}  // namespace

ThresholdMode parse_threshold_mode(std::string_view name) {
  if (name == "absolute") return ThresholdMode::absolute;
  if (name == "relative") return ThresholdMode::relative;
  throw ConfigError("prf.mode",
                    "unknown threshold mode '" + std::string(name) + "' (expected absolute, relative)");
}

std::string_view to_string(ThresholdMode mode) {
  return mode == ThresholdMode::absolute ? "absolute" : "relative";
}

DegradationMode parse_degradation_mode(std::string_view name) {
  if (name == "oracle") return DegradationMode::oracle;
  if (name == "proxy") return DegradationMode::proxy;
  throw ConfigError("prf.degradation",
                    "unknown degradation source '" + std::string(name) + "' (expected oracle, proxy)");
}

void validate(const PrfConfig& c) {
  if (!(c.c_s > 0.0) || !std::isfinite(c.c_s)) throw ConfigError("prf.c_s", "must be > 0");
  if (!(c.c_f > 0.0) || !std::isfinite(c.c_f)) throw ConfigError("prf.c_f", "must be > 0");
}

bool PrfResult::contains(int t) const {
  return std::any_of(feasible_set.begin(), feasible_set.end(),
                     [t](const StepInterval& iv) { return t >= iv.lo && t <= iv.hi; });
}

PrfResult compute_prf(const LossCurve& curve, const PrfConfig& config) {
  validate(config);
  const int n = curve.steps;
  if (n < 1 || curve.signature.size() != static_cast<std::size_t>(n) + 1 ||
      curve.weighted_fidelity.size() != curve.signature.size() ||
      curve.total.size() != curve.signature.size())
    throw ShapeError("compute_prf: curve does not cover t = 0..T");

  PrfResult r;
  r.steps = n;
  r.signature_threshold =
      config.signature_mode == ThresholdMode::relative ? config.c_s * curve.signature[n] : config.c_s;
  r.fidelity_threshold = config.fidelity_mode == ThresholdMode::relative
                             ? config.c_f * curve.weighted_fidelity[1]
                             : config.c_f;

  auto& d = r.diagnostics;
  d.signature_min = d.weighted_fidelity_min = std::numeric_limits<double>::infinity();
  d.signature_max = d.weighted_fidelity_max = -std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t <= n; ++t) {
    const double s = curve.signature[t];
    const double f = curve.weighted_fidelity[t];
    d.signature_min = std::min(d.signature_min, s);
    d.signature_max = std::max(d.signature_max, s);
    d.weighted_fidelity_min = std::min(d.weighted_fidelity_min, f);
    d.weighted_fidelity_max = std::max(d.weighted_fidelity_max, f);
    const bool ok = s <= r.signature_threshold && f <= r.fidelity_threshold;
    if (!ok) continue;
    if (!r.feasible_set.empty() && r.feasible_set.back().hi == t - 1)
      r.feasible_set.back().hi = t;
    else
      r.feasible_set.push_back({t, t});
    const double tot = curve.total[t];
    if (!r.t_star || tot < best) {
      best = tot;
      r.t_star = t;
    }
  }
  r.feasible = r.t_star.has_value();
  return r;
}

double proxy_extrapolation_factor(int h, int w, double scale) {
  const double fc = 0.5 / scale;
  double above = 0.0;
  double band = 0.0;
  for (int y = 0; y < h; ++y) {
    const double fy = bin_frequency(y, h);
    for (int x = 0; x < w; ++x) {
      const double fx = bin_frequency(x, w);
      const double r2 = fy * fy + fx * fx;
      if (r2 == 0.0) continue;
      const double r = std::sqrt(r2);
      if (r >= fc)
        above += 1.0 / r2;
      else if (r >= 0.5 * fc)
        band += 1.0 / r2;
    }
  }
  if (band == 0.0) return 0.0;
  return above / band;
}

PairStats proxy_degradation(const ImageTensor& x_hat, double scale) {
  PairStats s;
  s.x_hat0_ms = x_hat.mean_square();
  s.x0_ms = s.x_hat0_ms;
  if (!(scale > 1.0)) return s;

  const int h = x_hat.height();
  const int w = x_hat.width();
  const double fc = 0.5 / scale;
  const double grid = static_cast<double>(h) * w;
  double band = 0.0;
  double ac = 0.0;
  bool band_has_bins = false;
  for (int c = 0; c < x_hat.channels(); ++c) {
    const auto spec = dft2(x_hat, c);
    for (int y = 0; y < h; ++y) {
      const double fy = bin_frequency(y, h);
      for (int x = 0; x < w; ++x) {
        const double fx = bin_frequency(x, w);
        const double r = std::sqrt(fy * fy + fx * fx);
        if (r == 0.0) continue;
        const double e = std::norm(spec[static_cast<std::size_t>(y) * w + x]) / grid;
        ac += e;
        if (r >= 0.5 * fc && r < fc) {
          band += e;
          band_has_bins = true;
        }
      }
    }
  }
  const double elements = static_cast<double>(x_hat.size());
  if (!band_has_bins) {
    s.delta_ms = ac / elements;
    return s;
  }
  s.delta_ms = band / elements * proxy_extrapolation_factor(h, w, scale);
  return s;
}

Selection select_injection_step(const PairStats& stats, const ErrorModelConfig& error_config,
                                const PrfConfig& prf_config, const NoiseSchedule& schedule) {
  Selection sel;
  sel.stats = stats;
  sel.curve = loss_curve_from_stats(stats, error_config, schedule);
  sel.prf = compute_prf(sel.curve, prf_config);
  return sel;
}

Selection select_injection_step(const ImageTensor& x0, const ImageTensor& x_hat,
                                const ErrorModelConfig& error_config, const PrfConfig& prf_config,
                                const NoiseSchedule& schedule) {
  return select_injection_step(pair_stats(x0, x_hat), error_config, prf_config, schedule);
}

nlohmann::json to_json(const PrfResult& r) {
  nlohmann::json j;
  j["feasible"] = r.feasible;
  j["steps"] = r.steps;
  if (r.t_star) {
    j["t_star"] = *r.t_star;
    j["noise_level"] = static_cast<double>(*r.t_star) / r.steps;
  } else {
    j["t_star"] = nullptr;
    j["noise_level"] = nullptr;
  }
  auto intervals = nlohmann::json::array();
  for (const auto& iv : r.feasible_set)
    intervals.push_back({{"t_lo", iv.lo},
                         {"t_hi", iv.hi},
                         {"noise_level_lo", static_cast<double>(iv.lo) / r.steps},
                         {"noise_level_hi", static_cast<double>(iv.hi) / r.steps}});
  j["intervals"] = std::move(intervals);
  j["signature_threshold"] = number_or_null(r.signature_threshold);
  j["fidelity_threshold"] = number_or_null(r.fidelity_threshold);
  j["diagnostics"] = {{"signature_min", number_or_null(r.diagnostics.signature_min)},
                      {"signature_max", number_or_null(r.diagnostics.signature_max)},
                      {"weighted_fidelity_min", number_or_null(r.diagnostics.weighted_fidelity_min)},
                      {"weighted_fidelity_max", number_or_null(r.diagnostics.weighted_fidelity_max)}};
  return j;
}

void write_margins_csv(std::ostream& out, const LossCurve& curve, const PrfResult& r) {
  out << "t,noise_level,signature_margin,fidelity_margin,feasible\n";
  for (int t = 0; t <= curve.steps; ++t) {
    out << t << ',' << fmt17(curve.noise_level(t)) << ','
        << fmt17(r.signature_threshold - curve.signature[t]) << ','
        << fmt17(r.fidelity_threshold - curve.weighted_fidelity[t]) << ','
        << (r.contains(t) ? 1 : 0) << '\n';
  }
}

}  // namespace diffsr
