#include "diffsr/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "diffsr/errors.hpp"

namespace diffsr {

ImageTensor read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);

  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool wide = (img.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  const int channels = color ? 3 : 1;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (wide) img.format |= PNG_FORMAT_FLAG_LINEAR;

  const int h = static_cast<int>(img.height);
  const int w = static_cast<int>(img.width);
  ImageTensor out(Shape{h, w, channels}, 0.0, ValueRange{-1.0, 1.0});
  if (wide) {
    // Linear format would apply gamma decoding; read raw 16-bit samples instead.
    png_image_free(&img);
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open '" + path.string() + "'");
    std::unique_ptr<FILE, int (*)(FILE*)> guard(fp, &std::fclose);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw IoError("corrupt 16-bit PNG '" + path.string() + "'");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int ct = png_get_color_type(png, info);
    if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (!color && (ct & PNG_COLOR_MASK_COLOR)) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_set_swap(png);  // native little-endian order for png_uint_16
    png_read_update_info(png, info);
    const std::size_t row_samples = static_cast<std::size_t>(w) * channels;
    std::vector<png_uint_16> rows(row_samples * h);
    std::vector<png_bytep> ptrs(h);
    for (int y = 0; y < h; ++y)
      ptrs[y] = reinterpret_cast<png_bytep>(rows.data() + row_samples * y);
    png_read_image(png, ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = rows[i] / 65535.0 * 2.0 - 1.0;
    return out;
  }
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i] / 255.0 * 2.0 - 1.0;
  return out;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ConfigError("io.bit_depth", "must be 8 or 16");
  if (image.channels() != 1 && image.channels() != 3)
    throw ShapeError("PNG output needs 1 or 3 channels, got " + std::to_string(image.channels()));
  const int h = image.height();
  const int w = image.width();
  const int c = image.channels();
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  auto code = [&](double v) {
    const double u = std::clamp((v + 1.0) * 0.5, 0.0, 1.0);
    return static_cast<unsigned>(std::lround(u * maxv));
  };

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + path.string() + "' for writing");
  std::unique_ptr<FILE, int (*)(FILE*)> guard(fp, &std::fclose);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> rows(static_cast<std::size_t>(h) * w * c * (bit_depth / 8));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, bit_depth, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(w) * c * (bit_depth / 8);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const unsigned v = code(image[i]);
    if (bit_depth == 8) {
      rows[i] = static_cast<png_byte>(v);
    } else {
      rows[2 * i] = static_cast<png_byte>(v >> 8);  // PNG stores big-endian
      rows[2 * i + 1] = static_cast<png_byte>(v & 0xff);
    }
  }
  std::vector<png_bytep> ptrs(h);
  for (int y = 0; y < h; ++y) ptrs[y] = rows.data() + stride * y;
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace diffsr
