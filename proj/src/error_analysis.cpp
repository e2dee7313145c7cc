#include "diffsr/error_analysis.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "diffsr/diffusion.hpp"
#include "diffsr/errors.hpp"

namespace diffsr {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double raw_variance(int i, const NoiseSchedule& s, VarianceModel model, double eta) {
  switch (model) {
    case VarianceModel::ddpm: return s.beta_tilde(i);
    case VarianceModel::ddim_ratio: {
      const double ab = s.alpha_bar(i);
      const double ab_prev = s.alpha_bar(i - 1);
      return ((1.0 - ab_prev) / (1.0 - ab)) * ((1.0 - ab) / ab_prev);
    }
    case VarianceModel::ddim_standard: return eta * eta * s.beta_tilde(i);
  }
  return 0.0;
}

std::string fmt17(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

VarianceModel parse_variance_model(std::string_view name) {
  if (name == "ddpm") return VarianceModel::ddpm;
  if (name == "ddim_ratio") return VarianceModel::ddim_ratio;
  if (name == "ddim_standard") return VarianceModel::ddim_standard;
  throw ConfigError("error.variance_model",
                    "unknown model '" + std::string(name) +
                        "' (expected ddpm, ddim_ratio, ddim_standard)");
}

PriorModel parse_prior_model(std::string_view name) {
  if (name == "zero") return PriorModel::zero;
  if (name == "gaussian_kl") return PriorModel::gaussian_kl;
  throw ConfigError("error.prior_model",
                    "unknown model '" + std::string(name) + "' (expected zero, gaussian_kl)");
}

KlFormulation parse_kl_formulation(std::string_view name) {
  if (name == "standard") return KlFormulation::standard;
  if (name == "expanded") return KlFormulation::expanded;
  throw ConfigError("error.formulation",
                    "unknown formulation '" + std::string(name) + "' (expected standard, expanded)");
}

VarianceFloor parse_variance_floor(std::string_view name) {
  if (name == "clip_next") return VarianceFloor::clip_next;
  if (name == "absolute") return VarianceFloor::absolute;
  throw ConfigError("error.variance_floor",
                    "unknown floor '" + std::string(name) + "' (expected clip_next, absolute)");
}

std::string_view to_string(VarianceModel v) {
  switch (v) {
    case VarianceModel::ddpm: return "ddpm";
    case VarianceModel::ddim_ratio: return "ddim_ratio";
    case VarianceModel::ddim_standard: return "ddim_standard";
  }
  return "?";
}

std::string_view to_string(PriorModel v) {
  return v == PriorModel::zero ? "zero" : "gaussian_kl";
}

std::string_view to_string(KlFormulation v) {
  return v == KlFormulation::standard ? "standard" : "expanded";
}

std::string_view to_string(VarianceFloor v) {
  return v == VarianceFloor::clip_next ? "clip_next" : "absolute";
}

void validate(const ErrorModelConfig& c) {
  if (!(c.e0 >= 0.0) || !std::isfinite(c.e0)) throw ConfigError("error.e0", "must be >= 0");
  if (!std::isfinite(c.l0_const)) throw ConfigError("error.l0_const", "must be finite");
  if (!(c.omega > 0.0) || !std::isfinite(c.omega)) throw ConfigError("error.omega", "must be > 0");
  if (!(c.ddim_eta >= 0.0) || !std::isfinite(c.ddim_eta))
    throw ConfigError("error.ddim_eta", "must be >= 0");
}

double reverse_variance(int i, const NoiseSchedule& schedule, VarianceModel model, double eta,
                        VarianceFloor floor) {
  double v = raw_variance(i, schedule, model, eta);
  if (!(v > 0.0)) {
    if (floor == VarianceFloor::clip_next) {
      if (i + 1 <= schedule.steps()) v = raw_variance(i + 1, schedule, model, eta);
    } else {
      v = std::max(v, NoiseSchedule::kVarianceFloor);
    }
  }
  if (!(v > 0.0) || !std::isfinite(v))
    throw NumericalError(i, "reverse variance underflow (" + std::string(to_string(model)) +
                                ", value " + fmt17(v) + ")");
  return v;
}

double per_step_weight(int i, const NoiseSchedule& schedule, VarianceModel model, double eta,
                       VarianceFloor floor) {
  if (i < 1 || i > schedule.steps() - 1)
    throw RangeError("per_step_weight: i = " + std::to_string(i) + " outside [1, " +
                     std::to_string(schedule.steps() - 1) + "]");
  const double b = schedule.beta(i);
  const double a = 1.0 - b;
  const double var = reverse_variance(i, schedule, model, eta, floor);
  return b * b / (2.0 * a * (1.0 - schedule.alpha_bar(i)) * var);
}

double per_step_weight(int i, const NoiseSchedule& schedule, const ErrorModelConfig& config) {
  return per_step_weight(i, schedule, config.variance_model, config.ddim_eta, config.floor);
}

double prior_term(int t, const NoiseSchedule& schedule, PriorModel model, double x0_mean_square) {
  const double ab = schedule.alpha_bar(t);
  if (model == PriorModel::zero) return 0.0;
  if (t == 0) return kInf;
  // KL(N(sqrt(ab) x0, (1 - ab)) || N(0, 1)) averaged over elements.
  return 0.5 * (ab * x0_mean_square + (1.0 - ab) - 1.0 - std::log(1.0 - ab));
}

double cumulative_bound(int t, const ErrorModelConfig& config, const NoiseSchedule& schedule,
                        double x0_mean_square) {
  if (t < 1 || t > schedule.steps())
    throw RangeError("cumulative_bound: t = " + std::to_string(t) + " outside [1, " +
                     std::to_string(schedule.steps()) + "]");
  double sum = 0.0;
  for (int i = 1; i <= t - 1; ++i) sum += per_step_weight(i, schedule, config);
  return prior_term(t, schedule, config.prior_model, x0_mean_square) + sum * config.e0 +
         config.l0_const;
}

KlResult forward_gap_kl_from_stats(double delta_ms, double x0_ms, double x_hat0_ms, int t,
                                   const NoiseSchedule& schedule, KlFormulation formulation) {
  const double ab = schedule.alpha_bar(t);
  KlResult r;
  if (t == 0) {
    r.k_t = kInf;
    if (formulation == KlFormulation::expanded)
      r.a_t = (x0_ms + x_hat0_ms) > 0.0 ? kInf : 0.0;
    r.kl = (delta_ms > 0.0 || r.a_t > 0.0) ? kInf : 0.0;
    return r;
  }
  r.k_t = ab / (1.0 - ab);
  if (formulation == KlFormulation::standard) {
    r.kl = 0.5 * r.k_t * delta_ms;
  } else {
    r.a_t = r.k_t * (x0_ms + x_hat0_ms);
    r.kl = r.a_t + r.k_t * delta_ms;
  }
  return r;
}

PairStats pair_stats(const ImageTensor& x0, const ImageTensor& x_hat0) {
  require_same_shape(x0, x_hat0, "pair_stats");
  return {mean_squared_difference(x0, x_hat0), x0.mean_square(), x_hat0.mean_square()};
}

KlResult forward_gap_kl(const ImageTensor& x0, const ImageTensor& x_hat0, int t,
                        const NoiseSchedule& schedule, KlFormulation formulation) {
  const PairStats s = pair_stats(x0, x_hat0);
  return forward_gap_kl_from_stats(s.delta_ms, s.x0_ms, s.x_hat0_ms, t, schedule, formulation);
}

LossCurve loss_curve_from_stats(const PairStats& stats, const ErrorModelConfig& config,
                                const NoiseSchedule& schedule) {
  validate(config);
  const int n = schedule.steps();
  LossCurve c;
  c.steps = n;
  c.omega = config.omega;
  c.signature.resize(n + 1);
  c.fidelity.resize(n + 1);
  c.weighted_fidelity.resize(n + 1);
  c.total.resize(n + 1);
  c.k.resize(n + 1);
  c.a.resize(n + 1);

  double weight_sum = 0.0;  // sum_{i=1}^{t-1} w_i
  for (int t = 0; t <= n; ++t) {
    if (t == 0) {
      c.signature[0] = config.l0_const;
    } else {
      if (t >= 2) weight_sum += per_step_weight(t - 1, schedule, config);
      c.signature[t] = prior_term(t, schedule, config.prior_model, stats.x0_ms) +
                       weight_sum * config.e0 + config.l0_const;
    }
    const KlResult kl = forward_gap_kl_from_stats(stats.delta_ms, stats.x0_ms, stats.x_hat0_ms, t,
                                                  schedule, config.formulation);
    c.fidelity[t] = kl.kl;
    c.k[t] = kl.k_t;
    c.a[t] = kl.a_t;
    c.weighted_fidelity[t] = config.omega * kl.kl;
    c.total[t] = c.signature[t] + c.weighted_fidelity[t];
  }
  return c;
}

LossCurve loss_curve(const ImageTensor& x0, const ImageTensor& x_hat0,
                     const ErrorModelConfig& config, const NoiseSchedule& schedule) {
  return loss_curve_from_stats(pair_stats(x0, x_hat0), config, schedule);
}

void LossCurve::write_csv(std::ostream& out) const {
  out << "t,noise_level,signature,fidelity,weighted_fidelity,total,K_t,A_t\n";
  for (int t = 0; t <= steps; ++t) {
    out << t << ',' << fmt17(noise_level(t)) << ',' << fmt17(signature[t]) << ','
        << fmt17(fidelity[t]) << ',' << fmt17(weighted_fidelity[t]) << ',' << fmt17(total[t])
        << ',' << fmt17(k[t]) << ',' << fmt17(a[t]) << '\n';
  }
}

E0Estimate estimate_e0(Denoiser& denoiser, const std::vector<ImageTensor>& samples,
                       const NoiseSchedule& schedule, Rng& rng, int trials) {
  if (trials < 1) throw ConfigError("e0.trials", "must be >= 1");
  if (samples.empty()) throw UsageError("estimate_e0 needs at least one sample");
  double sum = 0.0;
  double sum_sq = 0.0;
  const double elements = static_cast<double>(samples.front().size());
  for (int k = 0; k < trials; ++k) {
    const auto& x0 = samples[rng.uniform_int(0, static_cast<int>(samples.size()) - 1)];
    const int t = rng.uniform_int(1, schedule.steps());
    auto [x_t, eps] = forward_marginal_sample(x0, t, schedule, rng);
    const ImageTensor pred = denoiser.predict_noise(x_t, t);
    require_same_shape(pred, eps, "estimate_e0 prediction");
    double err = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const double d = eps[i] - pred[i];
      err += d * d;
    }
    sum += err;
    sum_sq += err * err;
  }
  E0Estimate e;
  e.total = sum / trials;
  e.per_element = e.total / elements;
  if (trials > 1) {
    const double var = std::max(0.0, (sum_sq - trials * e.total * e.total) / (trials - 1));
    e.standard_error = std::sqrt(var / trials);
  }
  return e;
}

}  // namespace diffsr
