#include <doctest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "diffsr/analytic_denoiser.hpp"
#include "diffsr/error_analysis.hpp"
#include "diffsr/errors.hpp"
#include "support.hpp"

using namespace diffsr;

namespace {

NoiseSchedule linear(int steps = 1000) {
  ScheduleSpec s;
  s.steps = steps;
  return NoiseSchedule(s);
}

// KL(N(m1, v) || N(m2, v)) by Simpson integration of p log(p / q).
double kl_by_integration(double m1, double m2, double v) {
  const double sd = std::sqrt(v);
  const double lo = std::min(m1, m2) - 14 * sd;
  const double hi = std::max(m1, m2) + 14 * sd;
  const int n = 200000;
  const double h = (hi - lo) / n;
  auto f = [&](double x) {
    const double lp = -0.5 * (x - m1) * (x - m1) / v;
    const double lq = -0.5 * (x - m2) * (x - m2) / v;
    return std::exp(lp) / std::sqrt(2 * M_PI * v) * (lp - lq);
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(lo + i * h);
  return s * h / 3;
}

// Weight written from its definition with beta_tilde as the variance.
double oracle_weight(const NoiseSchedule& s, int i) {
  const int j = i == 1 ? 2 : i;  // beta_tilde_1 = 0 borrows step 2
  const double bt = (1 - s.alpha_bar(j - 1)) / (1 - s.alpha_bar(j)) * s.beta(j);
  return s.beta(i) * s.beta(i) / (2 * (1 - s.beta(i)) * (1 - s.alpha_bar(i)) * bt);
}

class PerfectDenoiser final : public Denoiser {
 public:
  PerfectDenoiser(const NoiseSchedule& s, ImageTensor x0) : s_(s), x0_(std::move(x0)) {}
  ImageTensor predict_noise(const ImageTensor& x_t, int t) override {
    ImageTensor e(x_t.shape());
    const double a = std::sqrt(s_.alpha_bar(t)), b = std::sqrt(1 - s_.alpha_bar(t));
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (x_t[i] - a * x0_[i]) / b;
    return e;
  }

 private:
  const NoiseSchedule& s_;
  ImageTensor x0_;
};

}  // namespace

TEST_CASE("per-step weight matches its definition") {
  const NoiseSchedule s = linear();
  CHECK(per_step_weight(500, s, VarianceModel::ddpm) ==
        doctest::Approx(oracle_weight(s, 500)).epsilon(1e-12));
  for (int i = 2; i < 1000; ++i) REQUIRE(per_step_weight(i, s, VarianceModel::ddpm) > 0.0);
  CHECK_THROWS_AS(per_step_weight(0, s, VarianceModel::ddpm), RangeError);
  CHECK_THROWS_AS(per_step_weight(1000, s, VarianceModel::ddpm), RangeError);
}

TEST_CASE("small constant beta: the DDPM weight tends to 1 / (2 (i - 1))") {
  // beta_tilde scales with beta, so the weight does not vanish with beta.
  for (double beta : {1e-3, 1e-6, 1e-9}) {
    ScheduleSpec sp;
    sp.steps = 10;
    sp.beta_start = sp.beta_end = beta;
    const NoiseSchedule s(sp);
    for (int i = 2; i < 10; ++i)
      CHECK(per_step_weight(i, s, VarianceModel::ddpm) ==
            doctest::Approx(1.0 / (2 * (i - 1))).epsilon(10 * i * beta + 1e-6));
  }
}

TEST_CASE("variance models and floors") {
  const NoiseSchedule s = linear(100);
  // ddim_standard with eta = 1 is the DDPM variance.
  for (int i = 2; i < 100; i += 7)
    CHECK(reverse_variance(i, s, VarianceModel::ddim_standard, 1.0, VarianceFloor::clip_next) ==
          doctest::Approx(s.beta_tilde(i)).epsilon(1e-14));
  const double ratio = (1 - s.alpha_bar(9)) / (1 - s.alpha_bar(10)) * (1 - s.alpha_bar(10)) / s.alpha_bar(9);
  CHECK(reverse_variance(10, s, VarianceModel::ddim_ratio, 1.0, VarianceFloor::clip_next) ==
        doctest::Approx(ratio).epsilon(1e-14));
  CHECK(reverse_variance(1, s, VarianceModel::ddpm, 1.0, VarianceFloor::clip_next) ==
        s.beta_tilde(2));
  CHECK(reverse_variance(1, s, VarianceModel::ddpm, 1.0, VarianceFloor::absolute) ==
        NoiseSchedule::kVarianceFloor);
  CHECK_THROWS_AS(reverse_variance(5, s, VarianceModel::ddim_standard, 0.0, VarianceFloor::clip_next),
                  NumericalError);
}

TEST_CASE("cumulative bound: brute-force sum, vanishing E0 and the L0 offset") {
  const NoiseSchedule s = linear();
  ErrorModelConfig c;
  c.e0 = 1.0;
  double sum = 0.0;
  for (int i = 1; i <= 9; ++i) sum += oracle_weight(s, i);
  CHECK(cumulative_bound(10, c, s) == doctest::Approx(sum).epsilon(1e-12));

  c.e0 = 0.0;
  c.l0_const = 0.3;
  for (int t : {1, 10, 999}) CHECK(cumulative_bound(t, c, s) == 0.3);
  c.prior_model = PriorModel::gaussian_kl;
  for (int t : {5, 500}) CHECK(cumulative_bound(t, c, s, 0.2) == prior_term(t, s, c.prior_model, 0.2) + 0.3);
}

TEST_CASE("gaussian prior term is the KL to the standard normal") {
  const NoiseSchedule s = linear();
  for (int t : {10, 300, 1000}) {
    const double ab = s.alpha_bar(t);
    // One element with x0 = 0.5: KL(N(sqrt(ab) 0.5, 1 - ab) || N(0, 1)).
    const double m = std::sqrt(ab) * 0.5, v = 1 - ab;
    const double kl = 0.5 * (v + m * m - 1 - std::log(v));
    CHECK(prior_term(t, s, PriorModel::gaussian_kl, 0.25) == doctest::Approx(kl).epsilon(1e-12));
  }
  CHECK(prior_term(1000, s, PriorModel::gaussian_kl, 0.25) < 1e-4);
  CHECK(prior_term(7, s, PriorModel::zero, 0.25) == 0.0);
}

TEST_CASE("forward-gap KL agrees with numerical integration") {
  const NoiseSchedule s = linear();
  for (int t : {1, 20, 100, 400, 900}) {
    const double ab = s.alpha_bar(t);
    const double x0 = 0.8, xh = 0.1;
    const double numeric = kl_by_integration(std::sqrt(ab) * x0, std::sqrt(ab) * xh, 1 - ab);
    const KlResult r = forward_gap_kl(ImageTensor::scalar(x0), ImageTensor::scalar(xh), t, s);
    CHECK(std::abs(r.kl - numeric) <= 1e-6 * std::max(1.0, numeric));
    CHECK(r.kl == doctest::Approx(ab * 0.49 / (2 * (1 - ab))).epsilon(1e-13));
  }
}

TEST_CASE("forward-gap KL hand example with alpha_bar = 0.5") {
  ScheduleSpec sp;
  sp.steps = 1;
  sp.beta_start = sp.beta_end = 0.5;
  const NoiseSchedule s(sp);
  const KlResult r = forward_gap_kl(ImageTensor::scalar(1.0), ImageTensor::scalar(0.0), 1, s);
  CHECK(r.kl == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kl_by_integration(std::sqrt(0.5), 0.0, 0.5) == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("forward-gap KL: identical images, t = 0 and the limit t -> T") {
  const NoiseSchedule s = linear();
  Rng rng(3);
  const ImageTensor a = testing::uniform_image(rng, {5, 5, 3});
  for (int t : {0, 1, 500, 1000}) {
    CHECK(forward_gap_kl(a, a, t, s, KlFormulation::standard).kl == 0.0);
  }
  ImageTensor b = a;
  b[3] += 0.5;
  CHECK(std::isinf(forward_gap_kl(a, b, 0, s).kl));
  CHECK(forward_gap_kl(a, b, 1000, s).kl < 1e-5);
}

TEST_CASE("expanded formulation adds the A term") {
  const NoiseSchedule s = linear();
  Rng rng(4);
  const ImageTensor a = testing::uniform_image(rng, {4, 4, 1});
  const ImageTensor b = testing::uniform_image(rng, {4, 4, 1});
  const int t = 250;
  const double k = s.alpha_bar(t) / (1 - s.alpha_bar(t));
  const KlResult r = forward_gap_kl(a, b, t, s, KlFormulation::expanded);
  CHECK(r.k_t == doctest::Approx(k).epsilon(1e-14));
  CHECK(r.a_t == doctest::Approx(k * (a.mean_square() + b.mean_square())).epsilon(1e-13));
  CHECK(r.kl == doctest::Approx(r.a_t + k * mean_squared_difference(a, b)).epsilon(1e-13));
  // Identical images leave only A.
  const KlResult same = forward_gap_kl(a, a, t, s, KlFormulation::expanded);
  CHECK(same.kl == doctest::Approx(same.a_t).epsilon(1e-15));
}

TEST_CASE("property: KL is shift invariant and quadratic in the difference") {
  const NoiseSchedule s = linear();
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape shape{rng.uniform_int(1, 8), rng.uniform_int(1, 8), rng.uniform_int(1, 3)};
    const ImageTensor a = testing::uniform_image(rng, shape);
    const ImageTensor b = testing::uniform_image(rng, shape);
    const int t = rng.uniform_int(1, 1000);
    const double c = 2 * rng.uniform() - 1;
    const double lambda = 0.1 + 3 * rng.uniform();
    ImageTensor as = a, bs = b, bl = b;
    for (std::size_t i = 0; i < a.size(); ++i) {
      as[i] += c;
      bs[i] += c;
      bl[i] = a[i] + lambda * (b[i] - a[i]);
    }
    const double base = forward_gap_kl(a, b, t, s).kl;
    REQUIRE(forward_gap_kl(as, bs, t, s).kl == doctest::Approx(base).epsilon(1e-10));
    REQUIRE(forward_gap_kl(a, bl, t, s).kl == doctest::Approx(lambda * lambda * base).epsilon(1e-10));
  }
}

TEST_CASE("property: curves decompose exactly and are monotone") {
  Rng rng(5);
  const ScheduleKind kinds[] = {ScheduleKind::linear, ScheduleKind::cosine, ScheduleKind::sigmoid};
  for (int trial = 0; trial < 30; ++trial) {
    ScheduleSpec sp;
    sp.kind = kinds[trial % 3];
    sp.steps = rng.uniform_int(5, 300);
    const NoiseSchedule s(sp);
    ErrorModelConfig c;
    c.e0 = 0.5 * rng.uniform();
    c.omega = 1e-4 + 0.1 * rng.uniform();
    c.l0_const = rng.uniform();
    PairStats st{1e-4 + rng.uniform(), rng.uniform(), rng.uniform()};
    const LossCurve curve = loss_curve_from_stats(st, c, s);
    REQUIRE(curve.signature[0] == c.l0_const);
    for (int t = 0; t <= sp.steps; ++t) {
      REQUIRE(curve.total[t] == curve.signature[t] + c.omega * curve.fidelity[t]);
      REQUIRE(curve.weighted_fidelity[t] == c.omega * curve.fidelity[t]);
      if (t == 0) continue;
      REQUIRE(curve.signature[t] >= curve.signature[t - 1]);
      REQUIRE(curve.fidelity[t] < curve.fidelity[t - 1]);
      REQUIRE(curve.k[t] < curve.k[t - 1]);
    }
  }
}

TEST_CASE("curve equals pointwise recomputation from the building blocks") {
  const NoiseSchedule s = linear();
  Rng rng(6);
  const ImageTensor x0 = testing::uniform_image(rng, {16, 16, 1});
  ImageTensor xh = x0;
  for (std::size_t i = 0; i < xh.size(); ++i) xh[i] += 0.2 * rng.normal();
  ErrorModelConfig c;
  const LossCurve curve = loss_curve(x0, xh, c, s);
  REQUIRE(curve.steps == 1000);
  for (int t = 1; t <= 1000; t += 13) {
    double sig = 0.0;
    for (int i = 1; i < t; ++i) sig += per_step_weight(i, s, c);
    sig *= c.e0;
    const double fid = forward_gap_kl(x0, xh, t, s).kl;
    CHECK(std::abs(curve.signature[t] - sig) <= 1e-10 * std::max(1.0, sig));
    CHECK(std::abs(curve.fidelity[t] - fid) <= 1e-10 * std::max(1.0, fid));
    CHECK(std::abs(curve.total[t] - (sig + c.omega * fid)) <= 1e-10 * std::max(1.0, sig));
  }
}

TEST_CASE("doubling the difference quadruples the K term") {
  const NoiseSchedule s = linear(200);
  Rng rng(7);
  const ImageTensor x0 = testing::uniform_image(rng, {6, 6, 3}, -0.4, 0.4);
  ImageTensor x1 = x0, x2 = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = 0.1 * rng.normal();
    x1[i] += d;
    x2[i] += 2 * d;
  }
  const LossCurve a = loss_curve(x0, x1, ErrorModelConfig{}, s);
  const LossCurve b = loss_curve(x0, x2, ErrorModelConfig{}, s);
  for (int t = 1; t <= 200; ++t) REQUIRE(b.fidelity[t] == doctest::Approx(4 * a.fidelity[t]).epsilon(1e-12));
}

TEST_CASE("curve CSV: header, row count, total column identity") {
  const NoiseSchedule s = linear(30);
  const LossCurve c = loss_curve_from_stats({0.01, 0.2, 0.19}, ErrorModelConfig{}, s);
  std::ostringstream out;
  c.write_csv(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,noise_level,signature,fidelity,weighted_fidelity,total,K_t,A_t");
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<double> v;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) v.push_back(std::stod(cell));
    REQUIRE(v.size() == 8);
    if (rows == 0) {
      CHECK(std::isinf(v[3]));
    } else {
      CHECK(v[5] == doctest::Approx(v[2] + v[4]).epsilon(1e-15));
    }
    ++rows;
  }
  CHECK(rows == 31);
}

TEST_CASE("invalid error-model configurations are rejected") {
  ErrorModelConfig c;
  c.omega = 0.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = ErrorModelConfig{};
  c.e0 = -1.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK_THROWS_AS(parse_variance_model("ddpm2"), ConfigError);
  CHECK_THROWS_AS(parse_prior_model("flat"), ConfigError);
  CHECK_THROWS_AS(parse_kl_formulation("x"), ConfigError);
  CHECK_THROWS_AS(parse_variance_floor("x"), ConfigError);
}

TEST_CASE("E0 estimates: perfect, zero and analytic predictors") {
  auto s = std::make_shared<const NoiseSchedule>(linear());
  Rng data_rng(8);
  const Shape shape{4, 4, 1};
  const double mu0 = 0.1, v0 = 0.09;

  const ImageTensor fixed = testing::uniform_image(data_rng, shape);
  PerfectDenoiser perfect(*s, fixed);
  Rng r1(1);
  CHECK(estimate_e0(perfect, {fixed}, *s, r1, 500).total < 1e-12);

  std::vector<ImageTensor> samples;
  for (int k = 0; k < 400; ++k) {
    ImageTensor x(shape);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = mu0 + std::sqrt(v0) * data_rng.normal();
    samples.push_back(x);
  }
  ZeroDenoiser zero;
  Rng r2(2);
  const E0Estimate ez = estimate_e0(zero, samples, *s, r2, 4000);
  CHECK(std::abs(ez.total - 16.0) < 3 * ez.standard_error);
  CHECK(ez.per_element == doctest::Approx(ez.total / 16));

  AnalyticGaussianDenoiser analytic(s, mu0, v0);
  Rng r3(3);
  const E0Estimate ea = estimate_e0(analytic, samples, *s, r3, 4000);
  CHECK(ea.total < ez.total);
}
