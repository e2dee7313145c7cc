#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "diffsr/error_analysis.hpp"
#include "diffsr/image_io.hpp"
#include "diffsr/pipeline.hpp"
#include "diffsr/prf.hpp"
#include "support.hpp"

using namespace diffsr;
namespace fs = std::filesystem;

namespace {

std::string img(int i) { return testing::corpus_files()[i].string(); }

testing::ProcessResult cli(const std::string& args) {
  return testing::run(testing::cli_binary() + " --seed 1 " + args);
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("exit codes distinguish usage errors from runtime failures") {
  CHECK(testing::run(testing::cli_binary() + " --help").exit_code == 0);
  CHECK(cli("schedule --bogus").exit_code == 2);
  CHECK(cli("--schedule.kind quadratic schedule").exit_code == 2);
  CHECK(cli("--schedule.steps 0 schedule").exit_code == 2);
  CHECK(cli("curves /nonexistent.png").exit_code == 2);
  CHECK(cli("sr " + img(0) + " --evaluate --t 5 --noise-level 0.1").exit_code == 2);
  const auto r = cli("--denoiser.kind 'subprocess:" + testing::echo_child() + " --fail-at 1' sr " +
                     img(0) + " --evaluate --t 5");
  CHECK(r.exit_code == 1);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["error"].get<std::string>().find("requested failure") != std::string::npos);
}

TEST_CASE("schedule prints one row per step matching the library") {
  const auto r = cli("--schedule.kind cosine schedule");
  REQUIRE(r.exit_code == 0);
  const auto rows = csv_rows(r.out);
  REQUIRE(rows.size() == 1001);
  CHECK(rows[0][3] == "alpha_bar");
  NoiseSchedule s(ScheduleSpec{.kind = ScheduleKind::cosine});
  for (int t = 1; t <= 1000; t += 111) CHECK(std::stod(rows[t][3]) == doctest::Approx(s.alpha_bar(t)).epsilon(1e-15));
}

TEST_CASE("curves reproduce the library computation for both degradation sources") {
  const auto hr = read_png(img(1));
  const auto x_hat = degrade(hr, DegradeSpec{.scale = 2.7});
  NoiseSchedule s(ScheduleSpec{});
  for (const std::string source : {"oracle", "proxy"}) {
    CAPTURE(source);
    const auto r = cli("--prf.degradation " + source + " --degrade.scale 2.7 curves " + img(1));
    REQUIRE(r.exit_code == 0);
    const auto rows = csv_rows(r.out);
    REQUIRE(rows.size() == 1002);
    const PairStats stats = source == "oracle" ? pair_stats(hr, x_hat) : proxy_degradation(x_hat, 2.7);
    const auto curve = loss_curve_from_stats(stats, ErrorModelConfig{}, s);
    for (int t = 1; t <= 1000; ++t) {
      const double sig = std::stod(rows[t + 1][2]);
      const double wf = std::stod(rows[t + 1][4]);
      const double total = std::stod(rows[t + 1][5]);
      CHECK(sig == doctest::Approx(curve.signature[t]).epsilon(1e-12));
      CHECK(wf == doctest::Approx(curve.weighted_fidelity[t]).epsilon(1e-12));
      CHECK(total == doctest::Approx(sig + wf).epsilon(1e-12));
    }
  }
}

TEST_CASE("curves against the same image have zero fidelity") {
  const auto r = cli("curves " + img(2) + " --against " + img(2));
  REQUIRE(r.exit_code == 0);
  const auto rows = csv_rows(r.out);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][3]) == 0.0);
}

TEST_CASE("several curves need an output directory") {
  CHECK(cli("curves " + img(0) + " " + img(1)).exit_code == 2);
  const auto dir = testing::scratch("cli_curves");
  const auto r = cli("--degrade.scale 2,4 curves " + img(0) + " " + img(1) + " --out-dir " + dir.string());
  REQUIRE(r.exit_code == 0);
  for (const char* name : {"leaves_00_x2.csv", "leaves_00_x4.csv", "leaves_01_x2.csv", "leaves_01_x4.csv"})
    CHECK(fs::exists(dir / name));
}

TEST_CASE("prf agrees with the library and accepts a curve file") {
  const auto r = cli("prf " + img(0));
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);
  const auto hr = read_png(img(0));
  NoiseSchedule s(ScheduleSpec{});
  const auto x_hat = degrade(hr, DegradeSpec{.scale = 2.0});
  const auto sel = select_injection_step(proxy_degradation(x_hat, 2.0), ErrorModelConfig{}, PrfConfig{}, s);
  REQUIRE(sel.prf.t_star);
  CHECK(j["t_star"] == *sel.prf.t_star);

  const auto dir = testing::scratch("cli_prf");
  const auto curve = cli("curves " + img(0) + " --against " + img(0));
  std::ofstream(dir / "curve.csv") << curve.out;
  const auto from_csv = cli("prf --curve " + (dir / "curve.csv").string());
  REQUIRE(from_csv.exit_code == 0);
  CHECK(nlohmann::json::parse(from_csv.out)["t_star"] == 0);
}

TEST_CASE("prf with thresholds above the curve range admits every positive step") {
  const auto r = cli("--prf.c_s 1e9 --prf.c_s_mode absolute --prf.c_f 1e9 prf " + img(3));
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);
  REQUIRE(j["intervals"].size() == 1);
  CHECK(j["intervals"][0]["t_lo"] == 1);
  CHECK(j["intervals"][0]["t_hi"] == 1000);
}

TEST_CASE("prf reports 8x as infeasible") {
  const auto r = cli("--degrade.scale 8 prf " + img(0));
  REQUIRE(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["feasible"] == false);
  CHECK(j["t_star"].is_null());
}

TEST_CASE("sr at t = 0 reproduces the degraded input") {
  const auto dir = testing::scratch("cli_sr0");
  REQUIRE(cli("degrade " + img(4) + " -o " + (dir / "lr.png").string()).exit_code == 0);
  const auto r = cli("sr " + img(4) + " --evaluate --t 0 -o " + (dir / "out.png").string());
  REQUIRE(r.exit_code == 0);
  CHECK(read_png(dir / "out.png") == read_png(dir / "lr.png"));
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["t"] == 0);
  CHECK(j["psnr"] == j["input_metrics"]["psnr"]);
}

TEST_CASE("sr is reproducible and auto selection matches the explicit step") {
  const auto dir = testing::scratch("cli_sr");
  const std::string common = "--sampler.substeps 8 --sampler.eta 1 sr " + img(5) + " --evaluate ";
  const auto a = cli(common + "-o " + (dir / "a.png").string());
  const auto b = cli(common + "-o " + (dir / "b.png").string());
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  CHECK(read_png(dir / "a.png") == read_png(dir / "b.png"));
  const int t = nlohmann::json::parse(a.out)["t"];
  CHECK(t > 0);
  const auto c = cli(common + "--t " + std::to_string(t) + " -o " + (dir / "c.png").string());
  REQUIRE(c.exit_code == 0);
  CHECK(read_png(dir / "a.png") == read_png(dir / "c.png"));
}

TEST_CASE("sr batches write one image and report per input") {
  const auto dir = testing::scratch("cli_batch");
  const auto r = cli("--jobs 2 sr " + img(0) + " " + img(1) + " --evaluate --t 20 --out-dir " + dir.string());
  REQUIRE(r.exit_code == 0);
  for (const char* name : {"leaves_00_sr.png", "leaves_00_report.json", "leaves_01_sr.png", "leaves_01_report.json"})
    CHECK(fs::exists(dir / name));
  CHECK(nlohmann::json::parse(slurp(dir / "leaves_01_report.json"))["stage"] == "written");
}

TEST_CASE("config files and DIFFSR_CONFIG set defaults that flags override") {
  const auto dir = testing::scratch("cli_config");
  std::ofstream(dir / "a.ini") << "[schedule]\nkind = cosine\nsteps = 50\n";
  CHECK(csv_rows(cli("--config " + (dir / "a.ini").string() + " schedule").out).size() == 51);
  CHECK(csv_rows(testing::run("DIFFSR_CONFIG=" + (dir / "a.ini").string() + " " + testing::cli_binary() +
                              " schedule").out).size() == 51);
  CHECK(csv_rows(cli("--config " + (dir / "a.ini").string() + " --schedule.steps 20 schedule").out).size() == 21);
  std::ofstream(dir / "bad.ini") << "[schedule]\nnonsense = 1\n";
  CHECK(cli("--config " + (dir / "bad.ini").string() + " schedule").exit_code == 2);
}

TEST_CASE("the seed is printed when not given") {
  const auto r = testing::run("(" + testing::cli_binary() + " sr " + img(0) + " --evaluate --t 0 2>&1 >/dev/null)");
  CHECK(r.out.find("seed: ") != std::string::npos);
  const auto quiet = testing::run("(" + testing::cli_binary() + " --seed 9 sr " + img(0) +
                                  " --evaluate --t 0 2>&1 >/dev/null)");
  CHECK(quiet.out.find("seed: ") == std::string::npos);
}

TEST_CASE("metrics and freq report pairs and sweeps") {
  const auto same = csv_rows(cli("metrics --ref " + img(0) + " --test " + img(0)).out);
  REQUIRE(same.size() == 2);
  CHECK(std::stod(same[1][0]) == 99.0);
  CHECK(std::stod(same[1][4]) == 0.0);
  const auto sweep = csv_rows(cli("--sampler.substeps 4 metrics " + img(0) + " --t 0,50").out);
  REQUIRE(sweep.size() == 3);
  CHECK(sweep[0][2] == "t");
  const auto freq = csv_rows(cli("--degrade.scale 2,4 freq " + img(0)).out);
  REQUIRE(freq.size() == 3);
  CHECK(std::stod(freq[2][4]) > std::stod(freq[1][4]));
}
