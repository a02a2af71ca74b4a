#pragma once

#include <filesystem>

#include "pesrs/data/types.hpp"

namespace pesrs::data {

/// Decodes a PNG to `channels` (1 = luma, 3 = RGB) reals in [0, 1].
Image read_png(const std::filesystem::path& path, std::size_t channels);
/// Writes 8-bit PNG; pixel values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

/// Bilinear resize (pixel-centre aligned).
Image resize(const Image& image, std::size_t height, std::size_t width);

/// Rounds every pixel to the nearest multiple of 1/255.
void quantize_8bit(Image& image);

template <typename Real>
Tensor<Real> to_tensor(const Image& image) {
  Tensor<Real> t({image.height, image.width, image.channels});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = static_cast<Real>(image.pixels[i]);
  return t;
}

}  // namespace pesrs::data
