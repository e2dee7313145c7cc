#pragma once

#include <string_view>

#include "diffsr/image.hpp"

namespace diffsr {

enum class ResampleMethod { nearest, bicubic };

ResampleMethod parse_resample_method(std::string_view name);
std::string_view to_string(ResampleMethod method);

/// Catmull-Rom cubic kernel (a = -0.5).
double cubic_kernel(double x);

/// Separable resize to out_h x out_w.
///   nearest: source index floor((dst + 0.5) * in / out)
///   bicubic: source coordinate (dst + 0.5) * in / out - 0.5, clamped edges;
///            when shrinking, the kernel is stretched by in / out and the
///            weights renormalised (antialiasing).
ImageTensor resize(const ImageTensor& image, int out_h, int out_w, ResampleMethod method);

/// round-half-away-from-zero(n / scale), at least 1.
int scaled_dimension(int n, double scale);

}  // namespace diffsr
