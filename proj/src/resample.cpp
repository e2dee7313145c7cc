#include "diffsr/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "diffsr/errors.hpp"

namespace diffsr {
namespace {

struct Taps {
  std::vector<int> count;       // taps per output sample
  std::vector<int> index;       // clamped source indices, flattened
  std::vector<double> weight;   // matching weights, flattened
  std::vector<int> offset;      // offset into index/weight per output sample
};

Taps bicubic_taps(int in, int out) {
  Taps taps;
  const double ratio = static_cast<double>(in) / out;
  const double stretch = std::max(1.0, ratio);
  const double support = 2.0 * stretch;
  for (int d = 0; d < out; ++d) {
    const double center = (d + 0.5) * ratio - 0.5;
    const int lo = static_cast<int>(std::floor(center - support)) + 1;
    const int hi = static_cast<int>(std::floor(center + support));
    taps.offset.push_back(static_cast<int>(taps.index.size()));
    double sum = 0.0;
    const std::size_t first = taps.weight.size();
    for (int s = lo; s <= hi; ++s) {
      const double w = cubic_kernel((s - center) / stretch);
      if (w == 0.0) continue;
      taps.index.push_back(std::clamp(s, 0, in - 1));
      taps.weight.push_back(w);
      sum += w;
    }
    for (std::size_t k = first; k < taps.weight.size(); ++k) taps.weight[k] /= sum;
    taps.count.push_back(static_cast<int>(taps.weight.size() - first));
  }
  return taps;
}

Taps nearest_taps(int in, int out) {
  Taps taps;
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    taps.offset.push_back(static_cast<int>(taps.index.size()));
    const int s = static_cast<int>(std::floor((d + 0.5) * ratio));
    taps.index.push_back(std::clamp(s, 0, in - 1));
    taps.weight.push_back(1.0);
    taps.count.push_back(1);
  }
  return taps;
}

}  // namespace

ResampleMethod parse_resample_method(std::string_view name) {
  if (name == "nearest") return ResampleMethod::nearest;
  if (name == "bicubic") return ResampleMethod::bicubic;
  throw ConfigError("degrade.method",
                    "unknown resample method '" + std::string(name) + "' (expected nearest, bicubic)");
}

std::string_view to_string(ResampleMethod method) {
  return method == ResampleMethod::nearest ? "nearest" : "bicubic";
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double t = std::abs(x);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

int scaled_dimension(int n, double scale) {
  if (!(scale > 0.0)) throw RangeError("scale must be > 0");
  const long v = std::lround(static_cast<double>(n) / scale);
  return static_cast<int>(std::max(1L, v));
}

ImageTensor resize(const ImageTensor& image, int out_h, int out_w, ResampleMethod method) {
  if (out_h < 1 || out_w < 1)
    throw RangeError("resize target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " has a zero dimension");
  const int h = image.height();
  const int w = image.width();
  const int c = image.channels();
  if (h == out_h && w == out_w) return image;
  const Taps tx = method == ResampleMethod::bicubic ? bicubic_taps(w, out_w) : nearest_taps(w, out_w);
  const Taps ty = method == ResampleMethod::bicubic ? bicubic_taps(h, out_h) : nearest_taps(h, out_h);

  ImageTensor horiz(Shape{h, out_w, c}, 0.0, image.range());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const int off = tx.offset[x];
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < tx.count[x]; ++k)
          acc += tx.weight[off + k] * image.at(y, tx.index[off + k], ch);
        horiz.at(y, x, ch) = acc;
      }
    }
  ImageTensor out(Shape{out_h, out_w, c}, 0.0, image.range());
  for (int y = 0; y < out_h; ++y) {
    const int off = ty.offset[y];
    for (int x = 0; x < out_w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < ty.count[y]; ++k)
          acc += ty.weight[off + k] * horiz.at(ty.index[off + k], x, ch);
        out.at(y, x, ch) = acc;
      }
  }
  return out;
}

}  // namespace diffsr
