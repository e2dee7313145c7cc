#pragma once

#include <optional>

#include "diffsr/image.hpp"

namespace diffsr {

/// Noise predictor eps_theta(x_t, t). Implementations must return a tensor of
/// the input's shape and be deterministic for fixed (x_t, t).
///
/// predict_noise is non-const because the subprocess bridge keeps protocol
/// state; callers must not share one instance between threads unless the
/// implementation says otherwise.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual ImageTensor predict_noise(const ImageTensor& x_t, int t) = 0;

  /// Resolution the predictor was built for; nullopt accepts any shape.
  virtual std::optional<Shape> native_shape() const { return std::nullopt; }
};

/// Throws ShapeError if `shape` does not match the denoiser's native shape.
void require_native_shape(const Denoiser& denoiser, const Shape& shape);

}  // namespace diffsr
