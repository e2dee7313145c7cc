// diffsr: command-line front end for schedules, loss curves, PRF selection,
// noise-injection super-resolution and image metrics.
#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffsr/analytic_denoiser.hpp"
#include "diffsr/image_io.hpp"
#include "diffsr/pipeline.hpp"
#include "diffsr/subprocess_denoiser.hpp"
#include "diffsr/weight_container.hpp"

namespace fs = std::filesystem;
using namespace diffsr;

namespace {

/// Bad arguments discovered after parsing; exit code 2.
class UsageFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs f, turning library validation errors into UsageFailure.
template <class F>
auto checked(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageFailure(e.what());
  } catch (const RangeError& e) {
    throw UsageFailure(e.what());
  } catch (const UsageError& e) {
    throw UsageFailure(e.what());
  }
}

// Raw option values, one field per --section.key.
struct Options {
  std::string schedule_kind = "linear";
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double cosine_offset = 0.008;
  double max_beta = 0.999;
  double sigmoid_range = 6.0;

  std::string sampler_family = "ddim";
  double sampler_eta = 0.0;
  std::optional<int> sampler_substeps;
  bool sampler_clamp = true;

  double e0 = 0.05;
  double l0 = 0.0;
  double omega = 0.004;
  std::string variance_model = "ddpm";
  double error_ddim_eta = 1.0;
  std::string prior_model = "zero";
  std::string formulation = "standard";
  std::string variance_floor = "clip_next";

  double c_s = 0.62;
  std::string c_s_mode = "relative";
  double c_f = 2.57e-5;
  std::string c_f_mode = "absolute";
  std::string degradation = "proxy";

  std::string scales = "2";
  std::string down = "bicubic";
  std::string up = "bicubic";

  std::string denoiser = "analytic";
  double denoiser_mean = 0.0;
  double denoiser_variance = 0.25;
  int denoiser_timeout_ms = 30000;
  double denoiser_var_floor = 1e-6;

  double freq_fraction = 0.25;

  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::string config;
};

// Validated, typed view of Options.
struct RunConfig {
  ScheduleSpec schedule;
  SrSettings settings;
  DegradeSpec degrade;
  std::vector<double> scales;
  std::string denoiser;
  double denoiser_mean = 0.0;
  double denoiser_variance = 0.25;
  int denoiser_timeout_ms = 30000;
  double denoiser_var_floor = 1e-6;
  int jobs = 1;
};

std::vector<double> parse_list(const std::string& text, const std::string& field) {
  std::vector<double> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(field, "not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(field, "empty list");
  return out;
}

Shape parse_shape(const std::string& text) {
  int h = 0, w = 0, c = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%dx%dx%d%c", &h, &w, &c, &tail) != 3 || h < 1 || w < 1 || c < 1)
    throw ConfigError("sr.native", "expected HxWxC, got '" + text + "'");
  return Shape{h, w, c};
}

RunConfig build_config(const Options& o) {
  RunConfig rc;
  rc.schedule.kind = parse_schedule_kind(o.schedule_kind);
  rc.schedule.steps = o.schedule_steps;
  rc.schedule.beta_start = o.beta_start;
  rc.schedule.beta_end = o.beta_end;
  rc.schedule.extra.cosine_offset = o.cosine_offset;
  rc.schedule.extra.max_beta = o.max_beta;
  rc.schedule.extra.sigmoid_range = o.sigmoid_range;

  SamplerConfig& s = rc.settings.sampler;
  s.family = parse_sampler_family(o.sampler_family);
  s.ddim_eta = o.sampler_eta;
  s.ddim_substeps = o.sampler_substeps;
  s.clamp_x0 = o.sampler_clamp;
  validate(s);

  ErrorModelConfig& e = rc.settings.error_model;
  e.e0 = o.e0;
  e.l0_const = o.l0;
  e.omega = o.omega;
  e.variance_model = parse_variance_model(o.variance_model);
  e.ddim_eta = o.error_ddim_eta;
  e.prior_model = parse_prior_model(o.prior_model);
  e.formulation = parse_kl_formulation(o.formulation);
  e.floor = parse_variance_floor(o.variance_floor);
  validate(e);

  PrfConfig& p = rc.settings.prf;
  p.c_s = o.c_s;
  p.signature_mode = parse_threshold_mode(o.c_s_mode);
  p.c_f = o.c_f;
  p.fidelity_mode = parse_threshold_mode(o.c_f_mode);
  validate(p);
  rc.settings.degradation = parse_degradation_mode(o.degradation);

  rc.scales = parse_list(o.scales, "degrade.scale");
  for (double v : rc.scales)
    if (!(v >= 1.0) || !std::isfinite(v))
      throw ConfigError("degrade.scale", "scales must be finite and >= 1");
  rc.degrade.scale = rc.scales.front();
  rc.degrade.down = parse_resample_method(o.down);
  rc.degrade.up = parse_resample_method(o.up);
  rc.settings.up_method = rc.degrade.up;

  if (!(o.freq_fraction > 0.0 && o.freq_fraction <= 1.0))
    throw ConfigError("freq.fraction", "must be in (0, 1]");
  rc.settings.freq.low_band_fraction = o.freq_fraction;

  rc.denoiser = o.denoiser;
  rc.denoiser_mean = o.denoiser_mean;
  if (!(o.denoiser_variance > 0.0)) throw ConfigError("denoiser.variance", "must be > 0");
  rc.denoiser_variance = o.denoiser_variance;
  if (o.denoiser_timeout_ms <= 0) throw ConfigError("denoiser.timeout_ms", "must be > 0");
  rc.denoiser_timeout_ms = o.denoiser_timeout_ms;
  if (!(o.denoiser_var_floor > 0.0)) throw ConfigError("denoiser.var_floor", "must be > 0");
  rc.denoiser_var_floor = o.denoiser_var_floor;

  if (o.jobs < 0) throw ConfigError("run.jobs", "must be >= 0");
  rc.jobs = o.jobs > 0 ? o.jobs : std::max(1u, std::thread::hardware_concurrency());
  return rc;
}

std::uint64_t resolve_seed(const Options& o) {
  if (o.seed) return *o.seed;
  std::random_device rd;
  const std::uint64_t seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::cerr << "seed: " << seed << '\n';
  return seed;
}

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

using DenoiserFactory = std::function<std::unique_ptr<Denoiser>()>;

// kind | analytic-fit:DIR | container:PATH | subprocess:COMMAND | zero
DenoiserFactory make_denoiser_factory(const RunConfig& rc,
                                      std::shared_ptr<const NoiseSchedule> schedule) {
  const std::string& spec = rc.denoiser;
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "analytic" && arg.empty()) {
    const double m = rc.denoiser_mean, v = rc.denoiser_variance;
    return [schedule, m, v] { return std::make_unique<AnalyticGaussianDenoiser>(schedule, m, v); };
  }
  if (kind == "zero" && arg.empty()) return [] { return std::make_unique<ZeroDenoiser>(); };
  if (kind == "analytic-fit" && !arg.empty()) {
    std::vector<ImageTensor> images;
    for (const auto& p : png_files(arg)) images.push_back(read_png(p));
    if (images.empty()) throw ConfigError("denoiser.kind", "no PNG files in '" + arg + "'");
    auto fit = std::make_shared<GaussianFit>(fit_gaussian(images, rc.denoiser_var_floor));
    return [schedule, fit] {
      return std::make_unique<AnalyticGaussianDenoiser>(schedule, fit->mean, fit->variance);
    };
  }
  if (kind == "container" && !arg.empty()) {
    // Parse once so a bad file is reported before any work starts.
    auto net = std::shared_ptr<CompactNetwork>(load_weight_container(arg, schedule->fingerprint()));
    return [net] { return std::make_unique<CompactNetwork>(net->spec()); };
  }
  if (kind == "subprocess" && !arg.empty()) {
    SubprocessDenoiserConfig cfg;
    cfg.argv = split_command(arg);
    cfg.timeout_ms = rc.denoiser_timeout_ms;
    return [cfg] { return std::make_unique<SubprocessDenoiser>(cfg); };
  }
  throw ConfigError("denoiser.kind",
                    "expected analytic, zero, analytic-fit:DIR, container:PATH or "
                    "subprocess:COMMAND, got '" + spec + "'");
}

// Runs task(i, denoiser) for i in [0, n) on up to `jobs` workers. Each worker
// owns one denoiser from the factory (null factory: no denoiser). The first
// exception is rethrown after all workers stop.
template <class Task>
void run_pool(std::size_t n, int jobs, const DenoiserFactory& factory, Task&& task) {
  const int workers = static_cast<int>(std::min<std::size_t>(std::max(jobs, 1), std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first;
  std::mutex error_mutex;
  auto body = [&] {
    try {
      std::unique_ptr<Denoiser> denoiser = factory ? factory() : nullptr;
      for (std::size_t i; !stop && (i = next++) < n;) task(i, denoiser.get());
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!first) first = std::current_exception();
      stop = true;
    }
  };
  std::vector<std::thread> pool;
  for (int k = 1; k < workers; ++k) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

std::ostream& open_output(const std::optional<std::string>& path, std::ofstream& file) {
  if (!path) return std::cout;
  file.open(*path);
  if (!file) throw IoError("cannot open '" + *path + "' for writing");
  return file;
}

std::string scale_tag(double scale) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", scale);
  return buf;
}

std::string csv_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Job {
  fs::path image;
  double scale;
};

std::vector<Job> expand_jobs(const std::vector<std::string>& images, const std::vector<double>& scales) {
  std::vector<Job> jobs;
  for (const auto& img : images)
    for (double s : scales) jobs.push_back({img, s});
  return jobs;
}

// Curve for an image under `scale`, using the configured degradation source.
LossCurve curve_for(const ImageTensor& hr, double scale, const RunConfig& rc,
                    const NoiseSchedule& schedule) {
  DegradeSpec spec = rc.degrade;
  spec.scale = scale;
  const ImageTensor x_hat = degrade(hr, spec);
  const PairStats stats = rc.settings.degradation == DegradationMode::oracle
                              ? pair_stats(hr, x_hat)
                              : proxy_degradation(x_hat, scale);
  return loss_curve_from_stats(stats, rc.settings.error_model, schedule);
}

LossCurve read_curve_csv(const fs::path& path, double omega) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("t,noise_level,signature,fidelity,weighted_fidelity,total", 0) != 0)
    throw FormatError("curve", "unexpected header in '" + path.string() + "'");
  LossCurve c;
  c.omega = omega;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("curve", "bad value '" + cell + "' on row " + std::to_string(row + 1));
      }
    }
    if (v.size() < 6 || static_cast<int>(v[0]) != row)
      throw FormatError("curve", "malformed row " + std::to_string(row + 1));
    c.signature.push_back(v[2]);
    c.fidelity.push_back(v[3]);
    c.weighted_fidelity.push_back(v[4]);
    c.total.push_back(v[5]);
    c.k.push_back(v.size() > 6 ? v[6] : 0.0);
    c.a.push_back(v.size() > 7 ? v[7] : 0.0);
    ++row;
  }
  if (row < 2) throw FormatError("curve", "needs at least two rows");
  c.steps = row - 1;
  return c;
}

// ---- commands -------------------------------------------------------------

int cmd_schedule(const RunConfig& rc, const std::optional<std::string>& out_path) {
  const NoiseSchedule schedule = checked([&] { return NoiseSchedule(rc.schedule); });
  std::ofstream file;
  std::ostream& out = open_output(out_path, file);
  schedule.write_csv(out);
  return out ? 0 : 1;
}

struct CurvesArgs {
  std::vector<std::string> images;
  std::optional<std::string> against;
  std::optional<std::string> out_dir;
};

int cmd_curves(const RunConfig& rc, const CurvesArgs& a) {
  const NoiseSchedule schedule = checked([&] { return NoiseSchedule(rc.schedule); });
  if (a.against) {
    if (a.images.size() != 1) throw UsageFailure("--against takes exactly one image");
    const ImageTensor x0 = read_png(a.images[0]);
    const ImageTensor x_hat = read_png(*a.against);
    loss_curve(x0, x_hat, rc.settings.error_model, schedule).write_csv(std::cout);
    return 0;
  }
  const auto jobs = expand_jobs(a.images, rc.scales);
  if (jobs.size() > 1 && !a.out_dir)
    throw UsageFailure("several images or scales need --out-dir");
  if (a.out_dir) fs::create_directories(*a.out_dir);
  run_pool(jobs.size(), rc.jobs, nullptr, [&](std::size_t i, Denoiser*) {
    const LossCurve c = curve_for(read_png(jobs[i].image), jobs[i].scale, rc, schedule);
    if (!a.out_dir) {
      c.write_csv(std::cout);
      return;
    }
    const fs::path p = fs::path(*a.out_dir) /
                       (jobs[i].image.stem().string() + "_x" + scale_tag(jobs[i].scale) + ".csv");
    std::ofstream f(p);
    c.write_csv(f);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
  });
  return 0;
}

struct PrfArgs {
  std::vector<std::string> images;
  std::optional<std::string> curve;
  std::optional<std::string> out;
  std::optional<std::string> margins;
};

int cmd_prf(const RunConfig& rc, const PrfArgs& a) {
  const NoiseSchedule schedule = checked([&] { return NoiseSchedule(rc.schedule); });
  std::ofstream file;
  if (a.curve) {
    if (!a.images.empty()) throw UsageFailure("--curve and images are mutually exclusive");
    const LossCurve c = read_curve_csv(*a.curve, rc.settings.error_model.omega);
    const PrfResult r = compute_prf(c, rc.settings.prf);
    if (a.margins) {
      std::ofstream m(*a.margins);
      write_margins_csv(m, c, r);
    }
    open_output(a.out, file) << to_json(r).dump(2) << '\n';
    return 0;
  }
  if (a.images.empty()) throw UsageFailure("give images or --curve");
  const auto jobs = expand_jobs(a.images, rc.scales);
  if (a.margins && jobs.size() != 1)
    throw UsageFailure("--margins needs exactly one image and one scale");
  std::vector<nlohmann::json> results(jobs.size());
  run_pool(jobs.size(), rc.jobs, nullptr, [&](std::size_t i, Denoiser*) {
    const LossCurve c = curve_for(read_png(jobs[i].image), jobs[i].scale, rc, schedule);
    const PrfResult r = compute_prf(c, rc.settings.prf);
    if (a.margins) {
      std::ofstream m(*a.margins);
      write_margins_csv(m, c, r);
    }
    nlohmann::json j = to_json(r);
    j["image"] = jobs[i].image.string();
    j["scale"] = jobs[i].scale;
    results[i] = std::move(j);
  });
  nlohmann::json out = results.size() == 1 ? results[0] : nlohmann::json(results);
  open_output(a.out, file) << out.dump(2) << '\n';
  return 0;
}

struct SrArgs {
  std::vector<std::string> inputs;
  bool evaluate = false;
  std::optional<std::string> gt;
  std::optional<std::string> native;
  std::optional<double> scale;
  std::optional<int> t;
  std::optional<double> noise_level;
  std::optional<std::string> output;
  std::optional<std::string> out_dir;
  std::optional<std::string> report;
  int bit_depth = 8;
};

int cmd_sr(const RunConfig& rc, const Options& o, const SrArgs& a) {
  auto schedule = checked([&] { return std::make_shared<const NoiseSchedule>(rc.schedule); });
  const std::size_t n = a.inputs.size();
  if (n > 1 && (a.output || a.report || a.gt))
    throw UsageFailure("-o, --report and --gt take a single input; use --out-dir for batches");
  if (a.evaluate && (a.gt || a.native || a.scale))
    throw UsageFailure("--evaluate derives the ground truth from the input; drop --gt/--native/--scale");
  if (a.evaluate && rc.scales.size() != 1)
    throw UsageFailure("--evaluate needs a single --degrade.scale");
  if (a.bit_depth != 8 && a.bit_depth != 16) throw UsageFailure("--bit-depth must be 8 or 16");

  SrSettings settings = rc.settings;
  checked([&] {
    if (a.t) {
      schedule->noise_level(*a.t);
      settings.t = *a.t;
    } else if (a.noise_level) {
      settings.t = schedule->step_for_noise_level(*a.noise_level);
    }
    return 0;
  });
  std::optional<Shape> native;
  if (a.native) native = checked([&] { return parse_shape(*a.native); });
  if (a.scale && !(*a.scale >= 1.0)) throw UsageFailure("--scale must be >= 1");
  const DenoiserFactory factory = checked([&] { return make_denoiser_factory(rc, schedule); });
  settings.sampler.seed = resolve_seed(o);
  if (a.out_dir) fs::create_directories(*a.out_dir);

  std::vector<SrReport> reports(n);
  run_pool(n, rc.jobs, factory, [&](std::size_t i, Denoiser* denoiser) {
    SrRequest req;
    req.input = a.inputs[i];
    if (a.evaluate) req.degrade = rc.degrade;
    if (a.gt) req.ground_truth = *a.gt;
    req.native = native;
    req.scale = a.scale;
    req.settings = settings;
    req.bit_depth = a.bit_depth;
    if (a.output) req.output = *a.output;
    if (a.report) req.report = *a.report;
    if (a.out_dir) {
      const std::string stem = req.input.stem().string();
      req.output = fs::path(*a.out_dir) / (stem + "_sr.png");
      req.report = fs::path(*a.out_dir) / (stem + "_report.json");
    }
    reports[i] = run_request(req, *denoiser, *schedule).report;
  });

  bool ok = true;
  nlohmann::json all = nlohmann::json::array();
  for (const auto& r : reports) {
    ok = ok && r.ok();
    if (!r.ok()) std::cerr << "error: " << *r.error << '\n';
    all.push_back(r.to_json());
  }
  if (n == 1 && !a.report) std::cout << all[0].dump(2) << '\n';
  if (n > 1) std::cout << all.dump(2) << '\n';
  return ok ? 0 : 1;
}

int cmd_degrade(const RunConfig& rc, const std::string& input, const std::string& output,
                int bit_depth) {
  if (rc.scales.size() != 1) throw UsageFailure("degrade needs a single --degrade.scale");
  if (bit_depth != 8 && bit_depth != 16) throw UsageFailure("--bit-depth must be 8 or 16");
  write_png(output, degrade(read_png(input), rc.degrade), bit_depth);
  return 0;
}

struct PairArgs {
  std::optional<std::string> ref;
  std::optional<std::string> test;
  std::vector<std::string> images;
  std::optional<std::string> out;
};

struct MetricsArgs : PairArgs {
  std::optional<std::string> steps;
  std::optional<std::string> noise_levels;
};

std::pair<ImageTensor, ImageTensor> read_pair(const PairArgs& a) {
  if (!a.ref || !a.test) throw UsageFailure("pair mode needs both --ref and --test");
  if (!a.images.empty()) throw UsageFailure("--ref/--test and images are mutually exclusive");
  ImageTensor ref = read_png(*a.ref);
  ImageTensor test = read_png(*a.test);
  if (ref.shape() != test.shape())
    throw ShapeError("reference " + ref.shape().to_string() + " vs test " +
                     test.shape().to_string());
  return {std::move(ref), std::move(test)};
}

int cmd_metrics(const RunConfig& rc, const Options& o, const MetricsArgs& a) {
  std::ofstream file;
  if (a.ref || a.test) {
    const auto [ref, test] = read_pair(a);
    const QualityMetrics q = evaluate_quality(test, ref, rc.settings.freq);
    std::ostream& out = open_output(a.out, file);
    out << "psnr,ssim,low_err,high_err,total_err\n"
        << csv_number(q.psnr) << ',' << csv_number(q.ssim) << ',' << csv_number(q.freq.low) << ','
        << csv_number(q.freq.high) << ',' << csv_number(q.freq.total) << '\n';
    return 0;
  }
  if (a.images.empty()) throw UsageFailure("give images or --ref/--test");
  if (a.steps && a.noise_levels) throw UsageFailure("--t and --noise-level are mutually exclusive");
  auto schedule = checked([&] { return std::make_shared<const NoiseSchedule>(rc.schedule); });
  std::vector<int> steps = checked([&] {
    std::vector<int> s;
    if (a.noise_levels) {
      for (double nl : parse_list(*a.noise_levels, "metrics.noise_level"))
        s.push_back(schedule->step_for_noise_level(nl));
    } else if (a.steps) {
      for (double v : parse_list(*a.steps, "metrics.t")) {
        if (v != std::floor(v)) throw ConfigError("metrics.t", "steps must be integers");
        s.push_back(static_cast<int>(v));
        schedule->noise_level(s.back());
      }
    } else {
      s.push_back(0);
    }
    return s;
  });
  const DenoiserFactory factory = checked([&] { return make_denoiser_factory(rc, schedule); });
  const std::uint64_t seed = resolve_seed(o);

  struct Row {
    Job job;
    int t;
  };
  std::vector<Row> rows;
  for (const auto& job : expand_jobs(a.images, rc.scales))
    for (int t : steps) rows.push_back({job, t});
  std::vector<std::string> lines(rows.size());
  run_pool(rows.size(), rc.jobs, factory, [&](std::size_t i, Denoiser* denoiser) {
    SrSettings settings = rc.settings;
    settings.t = rows[i].t;
    settings.sampler.seed = seed;
    DegradeSpec spec = rc.degrade;
    spec.scale = rows[i].job.scale;
    const SrOutcome res = run_evaluation(read_png(rows[i].job.image), spec, settings, *denoiser, *schedule);
    if (!res.report.ok()) throw Error(rows[i].job.image.string() + ": " + *res.report.error);
    const QualityMetrics& q = *res.report.output_quality;
    lines[i] = rows[i].job.image.string() + ',' + csv_number(spec.scale) + ',' +
               std::to_string(rows[i].t) + ',' + csv_number(schedule->noise_level(rows[i].t)) + ',' +
               csv_number(q.psnr) + ',' + csv_number(q.ssim) + ',' + csv_number(q.freq.low) + ',' +
               csv_number(q.freq.high);
  });
  std::ostream& out = open_output(a.out, file);
  out << "image,scale,t,noise_level,psnr,ssim,low_err,high_err\n";
  for (const auto& l : lines) out << l << '\n';
  return 0;
}

int cmd_freq(const RunConfig& rc, const PairArgs& a) {
  std::ofstream file;
  if (a.ref || a.test) {
    const auto [ref, test] = read_pair(a);
    const FreqSplit f = freq_split_error(to_unit_range(test), to_unit_range(ref), rc.settings.freq);
    open_output(a.out, file) << "low_err,high_err,total_err\n"
                             << csv_number(f.low) << ',' << csv_number(f.high) << ','
                             << csv_number(f.total) << '\n';
    return 0;
  }
  if (a.images.empty()) throw UsageFailure("give images or --ref/--test");
  const auto jobs = expand_jobs(a.images, rc.scales);
  std::vector<std::string> lines(jobs.size());
  run_pool(jobs.size(), rc.jobs, nullptr, [&](std::size_t i, Denoiser*) {
    DegradeSpec spec = rc.degrade;
    spec.scale = jobs[i].scale;
    const ImageTensor hr = read_png(jobs[i].image);
    const FreqSplit f =
        freq_split_error(to_unit_range(degrade(hr, spec)), to_unit_range(hr), rc.settings.freq);
    lines[i] = jobs[i].image.string() + ',' + csv_number(spec.scale) + ',' + csv_number(f.low) +
               ',' + csv_number(f.high) + ',' + csv_number(f.total);
  });
  std::ostream& out = open_output(a.out, file);
  out << "image,scale,low_err,high_err,total_err\n";
  for (const auto& l : lines) out << l << '\n';
  return 0;
}

// ---- configuration file ---------------------------------------------------

// Finds --config in argv, falling back to DIFFSR_CONFIG.
std::optional<std::string> config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  if (const char* env = std::getenv("DIFFSR_CONFIG"); env && *env) return std::string(env);
  return std::nullopt;
}

// INI sections become --section.key=value arguments placed before the
// command line, so explicit flags win under the take-last policy.
std::vector<std::string> config_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageFailure("cannot read config file '" + path + "'");
  std::vector<std::string> out;
  for (const auto& item : CLI::ConfigINI().from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;
    std::string key;
    for (const auto& p : item.parents) key += p + ".";
    key += item.name;
    std::string value;
    for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args;
  try {
    if (auto path = config_path(argc, argv)) args = config_args(*path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::vector<std::string> full{argv[0]};
  full.insert(full.end(), args.begin(), args.end());
  for (int i = 1; i < argc; ++i) full.emplace_back(argv[i]);
  std::vector<char*> cargv;
  for (auto& s : full) cargv.push_back(s.data());

  CLI::App app{"Noise-injection super-resolution with perceptual recoverable field selection"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.fallthrough();
  app.require_subcommand(1);

  Options o;
  app.add_option("--config", o.config, "INI file with [section] key = value (also DIFFSR_CONFIG)");
  app.add_option("--schedule.kind", o.schedule_kind,
                 "linear, scaled_linear, cosine, sigmoid, squared_cosine");
  app.add_option("--schedule.steps", o.schedule_steps, "number of diffusion steps T");
  app.add_option("--schedule.beta_start", o.beta_start);
  app.add_option("--schedule.beta_end", o.beta_end);
  app.add_option("--schedule.cosine_offset", o.cosine_offset);
  app.add_option("--schedule.max_beta", o.max_beta);
  app.add_option("--schedule.sigmoid_range", o.sigmoid_range);
  app.add_option("--sampler.family", o.sampler_family, "ddim or ddpm");
  app.add_option("--sampler.eta", o.sampler_eta, "DDIM eta");
  app.add_option("--sampler.substeps", o.sampler_substeps, "DDIM reverse steps (default: all)");
  app.add_option("--sampler.clamp", o.sampler_clamp, "clamp predicted x0 to the value range");
  app.add_option("--error.e0", o.e0, "per-element converged training loss");
  app.add_option("--error.l0", o.l0, "decoder term L0");
  app.add_option("--error.omega", o.omega, "fidelity weight");
  app.add_option("--error.variance_model", o.variance_model, "ddpm, ddim_ratio, ddim_standard");
  app.add_option("--error.ddim_eta", o.error_ddim_eta);
  app.add_option("--error.prior_model", o.prior_model, "zero or gaussian_kl");
  app.add_option("--error.formulation", o.formulation, "standard or expanded");
  app.add_option("--error.variance_floor", o.variance_floor, "clip_next or absolute");
  app.add_option("--prf.c_s", o.c_s, "signature threshold");
  app.add_option("--prf.c_s_mode", o.c_s_mode, "absolute or relative");
  app.add_option("--prf.c_f", o.c_f, "fidelity threshold");
  app.add_option("--prf.c_f_mode", o.c_f_mode, "absolute or relative");
  app.add_option("--prf.degradation", o.degradation, "proxy or oracle");
  app.add_option("--degrade.scale", o.scales, "downscale factor(s), comma separated");
  app.add_option("--degrade.down", o.down, "nearest or bicubic");
  app.add_option("--degrade.up", o.up, "nearest or bicubic");
  app.add_option("--denoiser.kind", o.denoiser,
                 "analytic, zero, analytic-fit:DIR, container:PATH, subprocess:COMMAND");
  app.add_option("--denoiser.mean", o.denoiser_mean, "analytic prior mean");
  app.add_option("--denoiser.variance", o.denoiser_variance, "analytic prior variance");
  app.add_option("--denoiser.timeout_ms", o.denoiser_timeout_ms, "subprocess reply deadline");
  app.add_option("--denoiser.var_floor", o.denoiser_var_floor, "variance floor for analytic-fit");
  app.add_option("--freq.fraction", o.freq_fraction, "low-frequency box side as a fraction");
  app.add_option("--seed,--run.seed", o.seed, "random seed (printed when omitted)");
  app.add_option("--jobs,--run.jobs", o.jobs, "worker threads (0: all cores)");

  std::optional<std::string> schedule_out;
  auto* sch = app.add_subcommand("schedule", "dump the schedule as CSV");
  sch->add_option("-o,--output", schedule_out);

  CurvesArgs curves;
  auto* cur = app.add_subcommand("curves", "loss curves per image and scale");
  cur->add_option("images", curves.images)->required()->check(CLI::ExistingFile);
  cur->add_option("--against", curves.against, "use this image as x_hat instead of degrading")
      ->check(CLI::ExistingFile);
  cur->add_option("--out-dir", curves.out_dir);

  PrfArgs prf;
  auto* prf_cmd = app.add_subcommand("prf", "perceptual recoverable field report");
  prf_cmd->add_option("images", prf.images)->check(CLI::ExistingFile);
  prf_cmd->add_option("--curve", prf.curve, "loss-curve CSV from `curves`")->check(CLI::ExistingFile);
  prf_cmd->add_option("-o,--output", prf.out);
  prf_cmd->add_option("--margins", prf.margins, "write per-step margins CSV");

  SrArgs sr;
  auto* sr_cmd = app.add_subcommand("sr", "super-resolve images");
  sr_cmd->add_option("inputs", sr.inputs)->required()->check(CLI::ExistingFile);
  sr_cmd->add_flag("--evaluate", sr.evaluate, "degrade the input and use it as ground truth");
  sr_cmd->add_option("--gt", sr.gt, "ground truth for metrics")->check(CLI::ExistingFile);
  sr_cmd->add_option("--native", sr.native, "native resolution HxWxC");
  sr_cmd->add_option("--scale", sr.scale, "upscale factor of the input");
  auto* t_opt = sr_cmd->add_option("--t", sr.t, "injection step");
  auto* nl_opt = sr_cmd->add_option("--noise-level", sr.noise_level, "injection step as t/T");
  t_opt->excludes(nl_opt);
  sr_cmd->add_option("-o,--output", sr.output, "output PNG");
  sr_cmd->add_option("--out-dir", sr.out_dir, "batch output directory");
  sr_cmd->add_option("--report", sr.report, "report JSON path");
  sr_cmd->add_option("--bit-depth", sr.bit_depth, "8 or 16");

  std::string deg_in, deg_out;
  int deg_depth = 8;
  auto* deg = app.add_subcommand("degrade", "downsample and restore an image");
  deg->add_option("input", deg_in)->required()->check(CLI::ExistingFile);
  deg->add_option("-o,--output", deg_out)->required();
  deg->add_option("--bit-depth", deg_depth);

  MetricsArgs metrics;
  auto* met = app.add_subcommand("metrics", "PSNR, SSIM and frequency errors");
  met->add_option("images", metrics.images)->check(CLI::ExistingFile);
  met->add_option("--ref", metrics.ref)->check(CLI::ExistingFile);
  met->add_option("--test", metrics.test)->check(CLI::ExistingFile);
  auto* mt = met->add_option("--t", metrics.steps, "injection steps, comma separated");
  auto* mnl = met->add_option("--noise-level", metrics.noise_levels, "noise levels, comma separated");
  mt->excludes(mnl);
  met->add_option("-o,--output", metrics.out);

  PairArgs freq;
  auto* frq = app.add_subcommand("freq", "low/high frequency error split");
  frq->add_option("images", freq.images)->check(CLI::ExistingFile);
  frq->add_option("--ref", freq.ref)->check(CLI::ExistingFile);
  frq->add_option("--test", freq.test)->check(CLI::ExistingFile);
  frq->add_option("-o,--output", freq.out);

  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig rc = checked([&] { return build_config(o); });
    if (sch->parsed()) return cmd_schedule(rc, schedule_out);
    if (cur->parsed()) return cmd_curves(rc, curves);
    if (prf_cmd->parsed()) return cmd_prf(rc, prf);
    if (sr_cmd->parsed()) return cmd_sr(rc, o, sr);
    if (deg->parsed()) return cmd_degrade(rc, deg_in, deg_out, deg_depth);
    if (met->parsed()) return cmd_metrics(rc, o, metrics);
    if (frq->parsed()) return cmd_freq(rc, freq);
  } catch (const UsageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
