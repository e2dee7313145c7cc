#include "diffsr/image.hpp"

#include <cmath>
#include <numeric>

#include "diffsr/errors.hpp"

namespace diffsr {

std::string Shape::to_string() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

ImageTensor::ImageTensor(Shape shape, double fill, ValueRange range)
    : shape_(shape), data_(shape.size(), fill), range_(range) {
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
    throw ShapeError("image dimensions must be positive, got " + shape.to_string());
}

ImageTensor::ImageTensor(Shape shape, std::vector<double> data, ValueRange range)
    : shape_(shape), data_(std::move(data)), range_(range) {
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
    throw ShapeError("image dimensions must be positive, got " + shape.to_string());
  if (data_.size() != shape.size())
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape.to_string());
}

ImageTensor ImageTensor::scalar(double value) { return ImageTensor(Shape{1, 1, 1}, value); }

bool ImageTensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double ImageTensor::mean_square() const noexcept {
  if (data_.empty()) return 0.0;
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return acc / static_cast<double>(data_.size());
}

double ImageTensor::mean() const noexcept {
  if (data_.empty()) return 0.0;
  return std::accumulate(data_.begin(), data_.end(), 0.0) / static_cast<double>(data_.size());
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
}

void require_finite(const ImageTensor& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(-1, std::string(what) + ": non-finite values");
}

double mean_squared_difference(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "mean_squared_difference");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

ImageTensor to_signed_range(const ImageTensor& unit) {
  ImageTensor out(unit.shape(), 0.0, ValueRange{-1.0, 1.0});
  for (std::size_t i = 0; i < unit.size(); ++i) out[i] = unit[i] * 2.0 - 1.0;
  return out;
}

ImageTensor to_unit_range(const ImageTensor& signed_img) {
  ImageTensor out(signed_img.shape(), 0.0, ValueRange{0.0, 1.0});
  for (std::size_t i = 0; i < signed_img.size(); ++i) out[i] = (signed_img[i] + 1.0) * 0.5;
  return out;
}

}  // namespace diffsr
