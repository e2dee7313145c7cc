#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace diffsr {

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  bool operator==(const Shape&) const = default;
  std::string to_string() const;
};

/// Declared interval the pixel values are expected to lie in.
struct ValueRange {
  double lo = -1.0;
  double hi = 1.0;

  bool operator==(const ValueRange&) const = default;
};

/// Dense H x W x C image, interleaved row-major (channel fastest), double
/// precision. Used for ground truth, degraded inputs, noisy states and
/// predicted noise alike.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(Shape shape, double fill = 0.0, ValueRange range = {});
  ImageTensor(Shape shape, std::vector<double> data, ValueRange range = {});
  ImageTensor(int height, int width, int channels, double fill = 0.0)
      : ImageTensor(Shape{height, width, channels}, fill) {}

  /// 1x1x1 tensor, convenient for scalar algebra checks.
  static ImageTensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  int channels() const noexcept { return shape_.channels; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(int y, int x, int c) noexcept { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const noexcept { return data_[index(y, x, c)]; }

  const ValueRange& range() const noexcept { return range_; }
  void set_range(ValueRange r) noexcept { range_ = r; }

  bool all_finite() const noexcept;
  /// Mean of squared values over all elements.
  double mean_square() const noexcept;
  double mean() const noexcept;

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
  }

  Shape shape_{};
  std::vector<double> data_;
  ValueRange range_{};
};

/// Throws ShapeError when the shapes differ; `what` prefixes the message.
void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what);
/// Throws NumericalError(-1) if any element is NaN or infinite.
void require_finite(const ImageTensor& t, const char* what);

/// Mean over elements of (a - b)^2.
double mean_squared_difference(const ImageTensor& a, const ImageTensor& b);

/// Affine maps between [0, 1] storage values and the [-1, 1] diffusion range.
ImageTensor to_signed_range(const ImageTensor& unit);
ImageTensor to_unit_range(const ImageTensor& signed_img);

}  // namespace diffsr
