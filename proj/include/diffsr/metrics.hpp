#pragma once

#include "diffsr/image.hpp"

namespace diffsr {

/// Reported for identical images.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE); kPsnrCap when MSE is zero.
double psnr(const ImageTensor& a, const ImageTensor& b, double peak = 1.0);

double mse(const ImageTensor& a, const ImageTensor& b);

struct SsimParams {
  double peak = 1.0;
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM over all fully contained windows (no padding). Three-channel
/// inputs are reduced to Rec. 601 luma first; other channel counts are scored
/// per channel and averaged. Throws RangeError when the image is smaller than
/// the window.
double ssim(const ImageTensor& a, const ImageTensor& b, const SsimParams& params = {});

/// 0.299 R + 0.587 G + 0.114 B; single-channel input is returned unchanged.
ImageTensor luma(const ImageTensor& rgb);

struct FreqSplitSpec {
  double low_band_fraction = 0.25;
};

struct FreqSplit {
  double low = 0.0;
  double high = 0.0;
  double total = 0.0;
};

/// Spectral energy of (a - b) inside and outside a centred low-frequency box,
/// summed over channels and divided by H*W so that total equals the spatial
/// sum of squared differences. The box spans round(fraction * n) bins per
/// axis starting floor(round(fraction * n) / 2) bins below DC.
FreqSplit freq_split_error(const ImageTensor& a, const ImageTensor& b,
                           const FreqSplitSpec& spec = {});

/// Pearson correlation over all elements; 0 when either side is constant.
double pearson_correlation(const ImageTensor& a, const ImageTensor& b);

}  // namespace diffsr
