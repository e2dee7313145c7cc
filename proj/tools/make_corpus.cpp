// Generates the dead-leaves test corpus: occluding discs with an r^-3 radius
// law and uniform random colours, painted front to back.
#include <cmath>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "diffsr/image.hpp"
#include "diffsr/image_io.hpp"
#include "diffsr/rng.hpp"

namespace {

diffsr::ImageTensor dead_leaves(int size, double rmin, double rmax, diffsr::Rng& rng) {
  diffsr::ImageTensor img(size, size, 3, 0.0);
  std::vector<char> covered(static_cast<std::size_t>(size) * size, 0);
  std::size_t remaining = covered.size();
  const double a = 1.0 / (rmin * rmin);
  const double b = 1.0 / (rmax * rmax);
  for (int disc = 0; disc < 200000 && remaining > 0; ++disc) {
    const double r = 1.0 / std::sqrt(a - rng.uniform() * (a - b));
    const double cx = rng.uniform() * (size + 2 * r) - r;
    const double cy = rng.uniform() * (size + 2 * r) - r;
    double col[3];
    for (double& c : col) c = 0.05 + 0.9 * rng.uniform();
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dy = y + 0.5 - cy;
        const double dx = x + 0.5 - cx;
        if (dx * dx + dy * dy > r * r) continue;
        char& cov = covered[static_cast<std::size_t>(y) * size + x];
        if (cov) continue;
        cov = 1;
        --remaining;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c] * 2.0 - 1.0;
      }
  }
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the dead-leaves image corpus"};
  std::string out_dir = "corpus";
  int count = 8;
  int size = 256;
  std::uint64_t seed = 20240611;
  double rmin = 2.0;
  double rmax = 60.0;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--count", count, "number of images")->check(CLI::PositiveNumber);
  app.add_option("--size", size, "image side in pixels")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--rmin", rmin, "smallest disc radius");
  app.add_option("--rmax", rmax, "largest disc radius");
  CLI11_PARSE(app, argc, argv);

  std::filesystem::create_directories(out_dir);
  diffsr::Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const auto img = dead_leaves(size, rmin, rmax, rng);
    char name[32];
    std::snprintf(name, sizeof name, "leaves_%02d.png", i);
    diffsr::write_png(std::filesystem::path(out_dir) / name, img);
    std::cout << name << '\n';
  }
  return 0;
}
