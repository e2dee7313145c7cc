#include "diffsr/metrics.hpp"

#include <cmath>
#include <vector>

#include "diffsr/errors.hpp"
#include "diffsr/fft.hpp"

namespace diffsr {
namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable "valid" filtering of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) acc += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                  const SsimParams& p) {
  const auto g = gaussian_window(p.window, p.sigma);
  const std::size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, g);
  const auto mu_b = filter_valid(b, h, w, g);
  const auto s_aa = filter_valid(aa, h, w, g);
  const auto s_bb = filter_valid(bb, h, w, g);
  const auto s_ab = filter_valid(ab, h, w, g);
  const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
  const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i];
    const double mb = mu_b[i];
    const double va = s_aa[i] - ma * ma;
    const double vb = s_bb[i] - mb * mb;
    const double cov = s_ab[i] - ma * mb;
    sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
           ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

std::vector<double> plane(const ImageTensor& img, int c) {
  std::vector<double> out(static_cast<std::size_t>(img.height()) * img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out[static_cast<std::size_t>(y) * img.width() + x] = img.at(y, x, c);
  return out;
}

}  // namespace

double mse(const ImageTensor& a, const ImageTensor& b) { return mean_squared_difference(a, b); }

double psnr(const ImageTensor& a, const ImageTensor& b, double peak) {
  if (!(peak > 0.0)) throw RangeError("psnr: peak must be > 0");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / m);
}

ImageTensor luma(const ImageTensor& rgb) {
  if (rgb.channels() == 1) return rgb;
  if (rgb.channels() != 3)
    throw ShapeError("luma needs 1 or 3 channels, got " + std::to_string(rgb.channels()));
  ImageTensor out(Shape{rgb.height(), rgb.width(), 1}, 0.0, rgb.range());
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x)
      out.at(y, x, 0) =
          0.299 * rgb.at(y, x, 0) + 0.587 * rgb.at(y, x, 1) + 0.114 * rgb.at(y, x, 2);
  return out;
}

double ssim(const ImageTensor& a, const ImageTensor& b, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  if (params.window < 1 || !(params.sigma > 0.0) || !(params.peak > 0.0))
    throw RangeError("ssim: invalid window parameters");
  if (a.height() < params.window || a.width() < params.window)
    throw RangeError("ssim: image " + a.shape().to_string() + " smaller than " +
                     std::to_string(params.window) + "x" + std::to_string(params.window) +
                     " window");
  if (a.channels() == 3) {
    const ImageTensor la = luma(a);
    const ImageTensor lb = luma(b);
    return ssim_plane(plane(la, 0), plane(lb, 0), a.height(), a.width(), params);
  }
  double sum = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    sum += ssim_plane(plane(a, c), plane(b, c), a.height(), a.width(), params);
  return sum / a.channels();
}

FreqSplit freq_split_error(const ImageTensor& a, const ImageTensor& b, const FreqSplitSpec& spec) {
  require_same_shape(a, b, "freq_split_error");
  if (!(spec.low_band_fraction > 0.0 && spec.low_band_fraction <= 1.0))
    throw ConfigError("freq.low_band_fraction", "must lie in (0, 1]");
  const int h = a.height();
  const int w = a.width();
  ImageTensor diff(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];

  // Box in shifted coordinates (DC at floor(n/2)), expressed as signed bins.
  auto box = [&](int n) {
    const int side = static_cast<int>(std::lround(spec.low_band_fraction * n));
    const int lo = -(side / 2);
    return std::pair{lo, lo + side - 1};
  };
  const auto [ylo, yhi] = box(h);
  const auto [xlo, xhi] = box(w);
  auto signed_bin = [](int k, int n) { return k < n - n / 2 ? k : k - n; };

  FreqSplit r;
  const double norm = static_cast<double>(h) * w;
  for (int c = 0; c < a.channels(); ++c) {
    const auto spec2 = dft2(diff, c);
    for (int y = 0; y < h; ++y) {
      const int fy = signed_bin(y, h);
      const bool in_y = fy >= ylo && fy <= yhi;
      for (int x = 0; x < w; ++x) {
        const int fx = signed_bin(x, w);
        const double e = std::norm(spec2[static_cast<std::size_t>(y) * w + x]) / norm;
        if (in_y && fx >= xlo && fx <= xhi)
          r.low += e;
        else
          r.high += e;
      }
    }
  }
  r.total = r.low + r.high;
  return r;
}

double pearson_correlation(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "pearson_correlation");
  auto constant = [](const ImageTensor& t) {
    for (std::size_t i = 1; i < t.size(); ++i)
      if (t[i] != t[0]) return false;
    return true;
  };
  if (constant(a) || constant(b)) return 0.0;
  const double ma = a.mean();
  const double mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace diffsr
