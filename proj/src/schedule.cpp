#include "diffsr/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "diffsr/errors.hpp"

namespace diffsr {
namespace {

std::vector<double> linear_betas(int n, double start, double end) {
  std::vector<double> b(n + 1, 0.0);
  for (int i = 1; i <= n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i - 1) / (n - 1);
    b[i] = start + (end - start) * f;
  }
  return b;
}

std::vector<double> scaled_linear_betas(int n, double start, double end) {
  std::vector<double> b(n + 1, 0.0);
  const double s0 = std::sqrt(start);
  const double s1 = std::sqrt(end);
  for (int i = 1; i <= n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i - 1) / (n - 1);
    const double s = s0 + (s1 - s0) * f;
    b[i] = s * s;
  }
  return b;
}

std::vector<double> sigmoid_betas(int n, double start, double end, double range) {
  std::vector<double> b(n + 1, 0.0);
  if (n == 1) {
    b[1] = start;
    return b;
  }
  std::vector<double> s(n + 1);
  for (int i = 1; i <= n; ++i) {
    const double x = -range + 2.0 * range * static_cast<double>(i - 1) / (n - 1);
    s[i] = 1.0 / (1.0 + std::exp(-x));
  }
  const double lo = s[1];
  const double hi = s[n];
  for (int i = 1; i <= n; ++i) b[i] = start + (end - start) * (s[i] - lo) / (hi - lo);
  return b;
}

std::vector<double> cosine_betas(int n, double offset, double max_beta) {
  auto f = [&](int t) {
    const double u = (static_cast<double>(t) / n + offset) / (1.0 + offset);
    const double c = std::cos(u * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> b(n + 1, 0.0);
  const double f0 = f(0);
  for (int i = 1; i <= n; ++i) {
    const double prev = f(i - 1) / f0;
    const double cur = f(i) / f0;
    b[i] = std::min(1.0 - cur / prev, max_beta);
  }
  return b;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "scaled_linear") return ScheduleKind::scaled_linear;
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "sigmoid") return ScheduleKind::sigmoid;
  if (name == "squared_cosine") return ScheduleKind::squared_cosine;
  throw ConfigError("schedule.kind", "unknown schedule kind '" + std::string(name) +
                                         "' (expected linear, scaled_linear, cosine, sigmoid, "
                                         "squared_cosine)");
}

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::scaled_linear: return "scaled_linear";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::sigmoid: return "sigmoid";
    case ScheduleKind::squared_cosine: return "squared_cosine";
  }
  return "?";
}

NoiseSchedule::NoiseSchedule(const ScheduleSpec& spec) : spec_(spec) {
  const int n = spec.steps;
  if (n < 1) throw ConfigError("schedule.steps", "must be >= 1, got " + std::to_string(n));
  const bool beta_kind = spec.kind == ScheduleKind::linear ||
                         spec.kind == ScheduleKind::scaled_linear ||
                         spec.kind == ScheduleKind::sigmoid;
  if (beta_kind) {
    if (!(spec.beta_start > 0.0 && spec.beta_start < 1.0))
      throw ConfigError("schedule.beta_start", "must lie in (0, 1), got " + fmt17(spec.beta_start));
    if (!(spec.beta_end > 0.0 && spec.beta_end < 1.0))
      throw ConfigError("schedule.beta_end", "must lie in (0, 1), got " + fmt17(spec.beta_end));
    if (spec.beta_start > spec.beta_end)
      throw ConfigError("schedule.beta_end", "must be >= beta_start");
  } else {
    if (!(spec.extra.cosine_offset > 0.0))
      throw ConfigError("schedule.cosine_offset", "must be > 0");
    if (!(spec.extra.max_beta > 0.0 && spec.extra.max_beta < 1.0))
      throw ConfigError("schedule.max_beta", "must lie in (0, 1)");
  }
  if (spec.kind == ScheduleKind::sigmoid && !(spec.extra.sigmoid_range > 0.0))
    throw ConfigError("schedule.sigmoid_range", "must be > 0");

  switch (spec.kind) {
    case ScheduleKind::linear: beta_ = linear_betas(n, spec.beta_start, spec.beta_end); break;
    case ScheduleKind::scaled_linear:
      beta_ = scaled_linear_betas(n, spec.beta_start, spec.beta_end);
      break;
    case ScheduleKind::sigmoid:
      beta_ = sigmoid_betas(n, spec.beta_start, spec.beta_end, spec.extra.sigmoid_range);
      break;
    case ScheduleKind::cosine:
    case ScheduleKind::squared_cosine:
      beta_ = cosine_betas(n, spec.extra.cosine_offset, spec.extra.max_beta);
      break;
  }

  alpha_bar_.assign(n + 1, 1.0);
  beta_tilde_.assign(n + 1, 0.0);
  for (int t = 1; t <= n; ++t) {
    if (!(beta_[t] > 0.0 && beta_[t] < 1.0))
      throw ConfigError("schedule.beta", "beta[" + std::to_string(t) + "] = " + fmt17(beta_[t]) +
                                             " outside (0, 1)");
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
    beta_tilde_[t] = (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * beta_[t];
  }
}

void NoiseSchedule::check_step(int t, int lo) const {
  if (t < lo || t > spec_.steps)
    throw RangeError("step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                     std::to_string(spec_.steps) + "]");
}

double NoiseSchedule::beta(int t) const {
  check_step(t, 1);
  return beta_[t];
}

double NoiseSchedule::alpha(int t) const {
  check_step(t, 1);
  return 1.0 - beta_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_step(t, 0);
  return alpha_bar_[t];
}

double NoiseSchedule::beta_tilde(int t) const {
  check_step(t, 1);
  return beta_tilde_[t];
}

double NoiseSchedule::sampling_variance(int t) const {
  return std::max(beta_tilde(t), kVarianceFloor);
}

double NoiseSchedule::noise_level(int t) const {
  check_step(t, 0);
  return static_cast<double>(t) / spec_.steps;
}

int NoiseSchedule::step_for_noise_level(double level) const {
  if (!(level >= 0.0 && level <= 1.0))
    throw RangeError("noise level " + fmt17(level) + " outside [0, 1]");
  return static_cast<int>(std::lround(level * spec_.steps));
}

void NoiseSchedule::write_csv(std::ostream& out) const {
  out << "t,beta,alpha,alpha_bar,beta_tilde\n";
  for (int t = 1; t <= spec_.steps; ++t) {
    out << t << ',' << fmt17(beta_[t]) << ',' << fmt17(1.0 - beta_[t]) << ','
        << fmt17(alpha_bar_[t]) << ',' << fmt17(beta_tilde_[t]) << '\n';
  }
}

std::string NoiseSchedule::canonical_string() const {
  return std::string(to_string(spec_.kind)) + "|" + std::to_string(spec_.steps) + "|" +
         fmt17(spec_.beta_start) + "|" + fmt17(spec_.beta_end) + "|" +
         fmt17(spec_.extra.cosine_offset) + "|" + fmt17(spec_.extra.max_beta) + "|" +
         fmt17(spec_.extra.sigmoid_range);
}

std::string NoiseSchedule::fingerprint() const {
  const std::string s = canonical_string();
  return hex64(fnv1a64(s.data(), s.size()));
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace diffsr
