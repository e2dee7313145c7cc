#pragma once

// Shared helpers for the unit tests: paths baked in by CMake, random image
// generators and a small process runner.

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "diffsr/image.hpp"
#include "diffsr/image_io.hpp"
#include "diffsr/rng.hpp"

namespace testing {

inline std::filesystem::path corpus_dir() { return DIFFSR_CORPUS_DIR; }
inline std::string echo_child() { return DIFFSR_ECHO_CHILD; }
inline std::string cli_binary() { return DIFFSR_CLI; }

/// Fresh empty directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(DIFFSR_SCRATCH) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<std::filesystem::path> corpus_files() {
  std::vector<std::filesystem::path> out;
  for (int i = 0; i < 8; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "leaves_%02d.png", i);
    out.push_back(corpus_dir() / name);
  }
  return out;
}

inline std::vector<diffsr::ImageTensor> corpus() {
  std::vector<diffsr::ImageTensor> out;
  for (const auto& p : corpus_files()) out.push_back(diffsr::read_png(p));
  return out;
}

inline diffsr::ImageTensor uniform_image(diffsr::Rng& rng, diffsr::Shape shape, double lo = -1.0,
                                         double hi = 1.0) {
  diffsr::ImageTensor img(shape);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = lo + (hi - lo) * rng.uniform();
  return img;
}

inline diffsr::ImageTensor normal_image(diffsr::Rng& rng, diffsr::Shape shape, double sd = 1.0) {
  diffsr::ImageTensor img(shape);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = sd * rng.normal();
  return img;
}

struct ProcessResult {
  int exit_code = -1;
  std::string out;
};

/// Runs a shell command, capturing stdout. stderr is discarded unless the
/// command redirects it.
inline ProcessResult run(const std::string& command) {
  ProcessResult r;
  FILE* p = ::popen((command + " 2>/dev/null").c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), p)) > 0;) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace testing
