// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Every check uses the analytic denoiser or the echo child; nothing trained.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "diffsr/analytic_denoiser.hpp"
#include "diffsr/diffusion.hpp"
#include "diffsr/error_analysis.hpp"
#include "diffsr/errors.hpp"
#include "diffsr/image_io.hpp"
#include "diffsr/metrics.hpp"
#include "diffsr/pipeline.hpp"
#include "diffsr/prf.hpp"
#include "diffsr/subprocess_denoiser.hpp"
#include "diffsr/weight_container.hpp"

using namespace diffsr;

namespace {

// Collects failed expectations for one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++count_;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return count_ == 0; }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + ("failed: " + f);
    if (count_ > static_cast<int>(failures_.size()))
      s += "; " + std::to_string(count_ - static_cast<int>(failures_.size())) + " more failures";
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
  int count_ = 0;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::shared_ptr<const NoiseSchedule> reference_schedule() {
  return std::make_shared<const NoiseSchedule>(ScheduleSpec{});
}

std::vector<ImageTensor> load_corpus() {
  std::vector<ImageTensor> out;
  for (int i = 0; i < 8; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "/leaves_%02d.png", i);
    out.push_back(read_png(std::string(DIFFSR_CORPUS_DIR) + name));
  }
  return out;
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const ImageTensor& x) {
  Moments m;
  for (std::size_t i = 0; i < x.size(); ++i) m.mean += x[i];
  m.mean /= x.size();
  for (std::size_t i = 0; i < x.size(); ++i) m.var += (x[i] - m.mean) * (x[i] - m.mean);
  m.var /= x.size() - 1;
  return m;
}

void schedule_oracle(Check& c) {
  const ScheduleSpec spec{};
  NoiseSchedule s(spec);
  double prod = 1.0;
  double worst = 0.0;
  for (int t = 1; t <= 1000; ++t) {
    prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    worst = std::max(worst, std::abs(s.alpha_bar(t) - prod));
  }
  c.expect(worst <= 1e-12, "alpha_bar deviation " + fmt("%.3g", worst));
  c.note("max |alpha_bar - product| " + fmt("%.2g", worst));
  for (ScheduleKind kind : {ScheduleKind::linear, ScheduleKind::scaled_linear, ScheduleKind::cosine,
                            ScheduleKind::sigmoid, ScheduleKind::squared_cosine}) {
    NoiseSchedule k(ScheduleSpec{.kind = kind});
    bool dec = true;
    for (int t = 1; t <= k.steps(); ++t) dec = dec && k.alpha_bar(t) < k.alpha_bar(t - 1);
    c.expect(dec, std::string(to_string(kind)) + " alpha_bar not strictly decreasing");
  }
}

void forward_composition(Check& c) {
  const auto s = reference_schedule();
  const int n = 100000;
  const double x0 = 0.6;
  for (int t : {10, 100, 500}) {
    Rng rng(1000 + t);
    ImageTensor step(Shape{1, n, 1}, x0);
    for (int k = 1; k <= t; ++k) step = forward_step_sample(step, k, *s, rng);
    const ImageTensor marg = forward_marginal_sample(ImageTensor(Shape{1, n, 1}, x0), t, *s, rng).x_t;
    const Moments a = moments(step);
    const Moments b = moments(marg);
    const double se_mean = std::sqrt(a.var / n + b.var / n);
    const double se_var = std::sqrt(2.0 * a.var * a.var / (n - 1) + 2.0 * b.var * b.var / (n - 1));
    const std::string tag = "t=" + std::to_string(t);
    c.expect(std::abs(a.mean - b.mean) <= 3 * se_mean, tag + " mean");
    c.expect(std::abs(a.var - b.var) <= 3 * se_var, tag + " variance");
    c.note(tag + " dmean/SE " + fmt("%.2f", std::abs(a.mean - b.mean) / se_mean) + " dvar/SE " +
           fmt("%.2f", std::abs(a.var - b.var) / se_var));
  }
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
    return std::exp(lp) / std::sqrt(2 * std::numbers::pi * v) * (lp - lq);
  };
  double sum = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4 : 2) * f(lo + i * h);
  return sum * h / 3;
}

void kl_properties(Check& c) {
  const auto s = reference_schedule();
  const double a = 0.3, b = -0.1;
  for (int t : {1, 10, 100, 500, 1000}) {
    const double ab = s->alpha_bar(t);
    const double got = forward_gap_kl(ImageTensor::scalar(a), ImageTensor::scalar(b), t, *s).kl;
    const double want = kl_by_integration(std::sqrt(ab) * a, std::sqrt(ab) * b, 1 - ab);
    c.expect(std::abs(got - want) <= 1e-6 * std::max(1.0, want),
             "t=" + std::to_string(t) + " kl " + fmt("%.9g", got) + " vs " + fmt("%.9g", want));
  }
  const auto hr = load_corpus()[0];
  const auto lr = degrade(hr, DegradeSpec{.scale = 2.0});
  double prev = std::numeric_limits<double>::infinity();
  bool dec = true;
  bool zero = true;
  for (int t = 1; t <= s->steps(); ++t) {
    const double kl = forward_gap_kl(hr, lr, t, *s).kl;
    dec = dec && kl < prev;
    prev = kl;
    zero = zero && forward_gap_kl(hr, hr, t, *s).kl == 0.0;
  }
  c.expect(dec, "KL not strictly decreasing in t");
  c.expect(zero, "KL nonzero for identical images");
}

void decomposition(Check& c) {
  const auto s = reference_schedule();
  const auto corpus = load_corpus();
  ErrorModelConfig cfg;
  cfg.omega = 0.004;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto curve = loss_curve(corpus[i], degrade(corpus[i], DegradeSpec{.scale = 2.0}), cfg, *s);
    const std::string tag = "image " + std::to_string(i);
    bool exact = true, mono = true, kdec = true;
    for (int t = 0; t <= curve.steps; ++t) {
      exact = exact && curve.total[t] == curve.signature[t] + 0.004 * curve.fidelity[t] &&
              curve.weighted_fidelity[t] == 0.004 * curve.fidelity[t];
      if (t > 0) mono = mono && curve.signature[t] >= curve.signature[t - 1];
      if (t > 1) kdec = kdec && curve.k[t] < curve.k[t - 1];
    }
    c.expect(exact, tag + " total != signature + omega * fidelity");
    c.expect(mono, tag + " signature decreases");
    c.expect(kdec, tag + " K_t not strictly decreasing");
  }
}

void sampler_oracle(Check& c) {
  const auto s = reference_schedule();
  const double mu0 = 0.2, v0 = 0.04;
  const int trials = 10000;
  AnalyticGaussianDenoiser d(s, mu0, v0);
  for (SamplerFamily family : {SamplerFamily::ddim, SamplerFamily::ddpm}) {
    Rng rng(family == SamplerFamily::ddim ? 5 : 6);
    ImageTensor xT(Shape{1, trials, 1});
    for (std::size_t i = 0; i < xT.size(); ++i) xT[i] = rng.normal();
    SamplerConfig cfg;
    cfg.family = family;
    cfg.clamp_x0 = false;
    const Moments m = moments(reverse_from(xT, s->steps(), d, cfg, *s, rng));
    const double tol = family == SamplerFamily::ddim ? 0.05 : 0.10;
    const std::string name = family == SamplerFamily::ddim ? "DDIM" : "DDPM";
    c.expect(std::abs(m.mean - mu0) <= tol * mu0, name + " mean " + fmt("%.5f", m.mean));
    c.expect(std::abs(m.var - v0) <= tol * v0, name + " variance " + fmt("%.5f", m.var));
    c.note(name + " mean " + fmt("%.4f", m.mean) + " var " + fmt("%.5f", m.var));
  }
}

// Random signature/fidelity pair with plateaus and NaNs.
LossCurve random_curve(Rng& rng) {
  const int n = rng.uniform_int(1, 300);
  LossCurve c;
  c.steps = n;
  c.omega = 1.0;
  const int shape = rng.uniform_int(0, 2);
  for (int t = 0; t <= n; ++t) {
    const double u = static_cast<double>(t) / n;
    double sig, wf;
    if (shape == 0) {
      sig = u + 0.1 * rng.uniform();
      wf = std::exp(-4 * u) + 0.1 * rng.uniform();
    } else if (shape == 1) {
      sig = std::floor(6 * u) / 6;
      wf = std::floor(5 * (1 - u)) / 5;
    } else {
      sig = rng.uniform();
      wf = rng.uniform();
    }
    if (rng.uniform() < 0.02) sig = std::numeric_limits<double>::quiet_NaN();
    c.signature.push_back(sig);
    c.fidelity.push_back(wf);
    c.weighted_fidelity.push_back(wf);
    c.total.push_back(sig + wf);
    c.k.push_back(0.0);
    c.a.push_back(0.0);
  }
  return c;
}

void prf_behaviour(Check& c) {
  Rng rng(77);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const LossCurve curve = random_curve(rng);
    PrfConfig p;
    p.c_s = 1.1 * rng.uniform();
    p.c_f = 1.1 * rng.uniform();
    p.signature_mode = p.fidelity_mode = ThresholdMode::absolute;
    const PrfResult r = compute_prf(curve, p);
    std::vector<StepInterval> intervals;
    std::optional<int> best;
    for (int t = 0; t <= curve.steps; ++t) {
      const bool ok = curve.signature[t] <= p.c_s && curve.weighted_fidelity[t] <= p.c_f;
      if (!ok) continue;
      if (intervals.empty() || intervals.back().hi != t - 1) intervals.push_back({t, t});
      intervals.back().hi = t;
      if (!best || curve.total[t] < curve.total[*best]) best = t;
    }
    if (r.feasible_set != intervals || r.t_star != best || r.feasible != best.has_value()) ++mismatches;
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " of 100 curves differ from the scan");

  const auto s = reference_schedule();
  const auto corpus = load_corpus();
  const double scales[] = {2.0, 2.7, 3.5, 4.0};
  double mean_nl[4] = {};
  int infeasible8 = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    int prev = -1;
    for (int k = 0; k < 4; ++k) {
      const auto lr = degrade(corpus[i], DegradeSpec{.scale = scales[k]});
      const auto sel = select_injection_step(proxy_degradation(lr, scales[k]), ErrorModelConfig{},
                                             PrfConfig{}, *s);
      const int t = sel.prf.t_star.value_or(-1);
      c.expect(t >= 0, "image " + std::to_string(i) + " infeasible at " + fmt("%g", scales[k]) + "x");
      c.expect(t >= prev, "image " + std::to_string(i) + " t* decreases at " + fmt("%g", scales[k]) + "x");
      prev = t;
      mean_nl[k] += static_cast<double>(t) / s->steps() / corpus.size();
    }
    const auto lr8 = degrade(corpus[i], DegradeSpec{.scale = 8.0});
    const auto sel8 = select_injection_step(proxy_degradation(lr8, 8.0), ErrorModelConfig{}, PrfConfig{}, *s);
    if (!sel8.prf.feasible) ++infeasible8;
  }
  c.expect(infeasible8 == static_cast<int>(corpus.size()),
           "8x feasible on " + std::to_string(corpus.size() - infeasible8) + " images");
  c.note("mean t*/T 2x " + fmt("%.3f", mean_nl[0]) + ", 2.7x " + fmt("%.3f", mean_nl[1]) + ", 3.5x " +
         fmt("%.3f", mean_nl[2]) + ", 4x " + fmt("%.3f", mean_nl[3]) + "; 8x infeasible on " +
         std::to_string(infeasible8) + "/8");
}

void over_noising(Check& c) {
  const auto s = reference_schedule();
  const auto corpus = load_corpus();
  struct Row {
    double corr[2];
    double psnr[2];
    double baseline;
  };
  std::vector<std::future<Row>> jobs;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    jobs.push_back(std::async(std::launch::async, [&, i] {
      std::vector<ImageTensor> others;
      for (std::size_t j = 0; j < corpus.size(); ++j)
        if (j != i) others.push_back(corpus[j]);
      const GaussianFit fit = fit_gaussian(others, 1e-4);
      AnalyticGaussianDenoiser d(s, fit.mean, fit.variance);
      const ImageTensor lr = degrade(corpus[i], DegradeSpec{.scale = 2.0});
      Row row{};
      row.baseline = evaluate_quality(lr, corpus[i]).psnr;
      const double levels[] = {0.8, 1.0};
      for (int k = 0; k < 2; ++k) {
        Rng rng(900 + i);
        const ImageTensor out = super_resolve(lr, s->step_for_noise_level(levels[k]), d, SamplerConfig{}, *s, rng);
        row.corr[k] = pearson_correlation(out, lr);
        row.psnr[k] = evaluate_quality(out, corpus[i]).psnr;
      }
      return row;
    }));
  double worst_corr = -1.0, worst_gap = -1e9;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Row r = jobs[i].get();
    for (int k = 0; k < 2; ++k) {
      const std::string tag = "image " + std::to_string(i) + (k ? " NL 1.0" : " NL 0.8");
      c.expect(r.corr[k] < 0.1, tag + " correlation " + fmt("%.3f", r.corr[k]));
      c.expect(r.psnr[k] < r.baseline, tag + " PSNR " + fmt("%.2f", r.psnr[k]) + " >= baseline " +
                                           fmt("%.2f", r.baseline));
      worst_corr = std::max(worst_corr, r.corr[k]);
      worst_gap = std::max(worst_gap, r.psnr[k] - r.baseline);
    }
  }
  c.note("max correlation " + fmt("%.3f", worst_corr) + ", max PSNR gain over t=0 " + fmt("%.2f", worst_gap) + " dB");
}

void metrics(Check& c) {
  const ImageTensor a(Shape{16, 16, 3}, 0.3), b(Shape{16, 16, 3}, 0.4);
  c.expect(std::abs(psnr(a, b) - 20.0) <= 1e-9, "0.1 offset PSNR " + fmt("%.12f", psnr(a, b)));
  Rng rng(8);
  ImageTensor r(Shape{32, 32, 3});
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = rng.uniform();
  c.expect(std::abs(ssim(r, r) - 1.0) <= 1e-9, "SSIM(a, a) " + fmt("%.12f", ssim(r, r)));
  for (int trial = 0; trial < 50; ++trial) {
    const Shape shape{rng.uniform_int(1, 48), rng.uniform_int(1, 48), trial % 2 ? 3 : 1};
    ImageTensor x(shape), y(shape);
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = 2 * rng.uniform() - 1;
      y[i] = 2 * rng.uniform() - 1;
      sse += (x[i] - y[i]) * (x[i] - y[i]);
    }
    const FreqSplit f = freq_split_error(x, y);
    c.expect(std::abs(f.low + f.high - sse) <= 1e-6 * sse, "Parseval trial " + std::to_string(trial));
  }
}

void formats(Check& c) {
  Rng rng(9);
  const NetworkSpec spec = random_network({8, 8, 3}, 8, "00000000000000aa", rng);
  const std::string bytes = serialize_weight_container(spec);
  const NetworkSpec back = parse_weight_container(bytes, "00000000000000aa");
  double worst = 0.0;
  for (std::size_t l = 0; l < spec.layers.size(); ++l)
    for (std::size_t t = 0; t < spec.layers[l].tensors.size(); ++t)
      for (std::size_t k = 0; k < spec.layers[l].tensors[t].size(); ++k)
        worst = std::max(worst, std::abs(double(spec.layers[l].tensors[t][k]) -
                                         double(back.layers[l].tensors[t][k])));
  CompactNetwork n1(spec), n2(back);
  ImageTensor x(Shape{8, 8, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2 * rng.uniform() - 1;
  const ImageTensor p1 = n1.predict_noise(x, 321), p2 = n2.predict_noise(x, 321);
  for (std::size_t i = 0; i < p1.size(); ++i) worst = std::max(worst, std::abs(p1[i] - p2[i]));
  c.expect(worst <= 1e-6, "container round trip deviation " + fmt("%.3g", worst));

  int accepted = 0;
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    try {
      parse_weight_container(std::string_view(bytes).substr(0, len));
      ++accepted;
    } catch (const FormatError&) {
    }
  }
  c.expect(accepted == 0, std::to_string(accepted) + " truncated containers accepted");

  SubprocessDenoiser echo(SubprocessDenoiserConfig{{DIFFSR_ECHO_CHILD}, 5000});
  bool exact = true;
  for (int k = 0; k < 10; ++k) {
    ImageTensor q(Shape{16, 12, 3});
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<float>(2 * rng.uniform() - 1);
    exact = exact && echo.predict_noise(q, k + 1) == q;
  }
  c.expect(exact, "echo loopback not exact");
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<void(Check&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "schedule oracle", 1, schedule_oracle},
      {2, "forward-process composition", 10, forward_composition},
      {3, "KL properties", 5, kl_properties},
      {4, "loss decomposition and monotonicity", 5, decomposition},
      {5, "sampler analytic oracle", 120, sampler_oracle},
      {6, "PRF behaviour", 300, prf_behaviour},
      {7, "over-noising failure mode", 300, over_noising},
      {8, "metrics", 10, metrics},
      {9, "formats", 10, formats},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check check;
    const auto start = std::chrono::steady_clock::now();
    try {
      cr.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    check.expect(secs <= cr.budget_s, "runtime over the " + fmt("%g", cr.budget_s) + " s budget");
    const bool ok = check.ok();
    failed += !ok;
    std::printf("%s %d %s (%.2f s) %s\n", ok ? "PASS" : "FAIL", cr.id, cr.name, secs,
                check.summary().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
