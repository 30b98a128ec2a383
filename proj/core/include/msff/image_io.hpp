#pragma once

#include <filesystem>

#include "msff/volume.hpp"

namespace msff {

/// 8-bit RGB (or gray / RGBA, converted) PNG into a 3 x H x W image in [0,1].
Image read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace msff
