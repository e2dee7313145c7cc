#include "diffsr/fft.hpp"

#include <fftw3.h>

#include <mutex>

#include "diffsr/errors.hpp"

namespace diffsr {
namespace {

// FFTW's planner is not reentrant; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

std::vector<std::complex<double>> dft2(const ImageTensor& image, int channel) {
  const int h = image.height();
  const int w = image.width();
  if (channel < 0 || channel >= image.channels())
    throw RangeError("dft2: channel " + std::to_string(channel) + " out of range");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<std::complex<double>> buf(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) buf[static_cast<std::size_t>(y) * w + x] = image.at(y, x, channel);

  auto* data = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(h, w, data, data, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  if (!plan) throw NumericalError(-1, "fftw plan creation failed");
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  return buf;
}

}  // namespace diffsr
