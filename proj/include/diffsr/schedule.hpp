#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace diffsr {

enum class ScheduleKind { linear, scaled_linear, cosine, sigmoid, squared_cosine };

/// Parses a kind name; throws ConfigError("schedule.kind") for unknown names.
ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Kind-specific knobs. Defaults are the conventional published choices.
struct ScheduleParams {
  /// Offset s in f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2) for the cosine kinds.
  double cosine_offset = 0.008;
  /// Per-step beta cap for the cosine kinds.
  double max_beta = 0.999;
  /// Logistic ramp covers [-sigmoid_range, sigmoid_range].
  double sigmoid_range = 6.0;
};

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ScheduleParams extra{};
};

/// Precomputed forward-process quantities. Steps are 1-based for beta, alpha
/// and beta_tilde; alpha_bar(0) == 1 stands for the clean image.
/// Immutable after construction.
class NoiseSchedule {
 public:
  /// Smallest variance handed to a sampler.
  static constexpr double kVarianceFloor = 1e-20;

  explicit NoiseSchedule(const ScheduleSpec& spec);

  const ScheduleSpec& spec() const noexcept { return spec_; }
  int steps() const noexcept { return spec_.steps; }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  /// Posterior variance ((1 - abar[t-1]) / (1 - abar[t])) * beta[t]; zero at t = 1.
  double beta_tilde(int t) const;
  /// beta_tilde(t) floored at kVarianceFloor.
  double sampling_variance(int t) const;

  /// t / T; throws RangeError for t outside [0, T].
  double noise_level(int t) const;
  /// round(level * T) for level in [0, 1].
  int step_for_noise_level(double level) const;

  const std::vector<double>& alpha_bar_table() const noexcept { return alpha_bar_; }

  /// CSV dump: t,beta,alpha,alpha_bar,beta_tilde with 17 significant digits.
  void write_csv(std::ostream& out) const;

  /// FNV-1a 64-bit hash (16 hex digits) of the canonical parameter string
  /// "kind|T|beta_start|beta_end|cosine_offset|max_beta|sigmoid_range".
  std::string fingerprint() const;
  std::string canonical_string() const;

 private:
  void check_step(int t, int lo) const;

  ScheduleSpec spec_;
  std::vector<double> beta_;       // index 1..T, [0] unused
  std::vector<double> alpha_bar_;  // index 0..T
  std::vector<double> beta_tilde_;
};

/// FNV-1a 64-bit over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;
std::string hex64(std::uint64_t value);

}  // namespace diffsr
