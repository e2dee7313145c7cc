#pragma once

#include <complex>
#include <vector>

#include "diffsr/image.hpp"

namespace diffsr {

/// Unnormalised forward 2-D DFT of one channel, row-major H x W, DC at [0].
/// Safe to call from several threads.
std::vector<std::complex<double>> dft2(const ImageTensor& image, int channel);

/// Signed frequency of DFT bin k out of n, in cycles per sample, in [-0.5, 0.5).
inline double bin_frequency(int k, int n) {
  return static_cast<double>(k <= (n - 1) / 2 ? k : k - n) / n;
}

}  // namespace diffsr
