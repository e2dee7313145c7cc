#pragma once

#include <filesystem>

#include "diffsr/image.hpp"

namespace diffsr {

/// Reads an 8- or 16-bit PNG (gray, gray+alpha, RGB, RGBA, palette). Alpha is
/// dropped; values become v / 255 or v / 65535 and are then mapped to [-1, 1].
ImageTensor read_png(const std::filesystem::path& path);

/// Writes a [-1, 1] image as PNG with 1 or 3 channels. Values are clamped to
/// [0, 1] after the affine map and rounded to the nearest code.
void write_png(const std::filesystem::path& path, const ImageTensor& image, int bit_depth = 8);

}  // namespace diffsr
