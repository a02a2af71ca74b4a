#pragma once

#include <vector>

#include "pesrs/data/types.hpp"

namespace pesrs::eval {

/// Luma (0.299 R + 0.587 G + 0.114 B) as a row-major H x W plane; 1-channel
/// images pass through.
std::vector<double> to_luma(const data::Image& image);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Gaussian-windowed SSIM on luma, averaged over every fully contained
/// window. Images smaller than the window use a window the size of the
/// smaller side (odd). Throws std::invalid_argument on size mismatch.
double ssim(const data::Image& a, const data::Image& b, const SsimOptions& opts = {});

/// Normalised Gaussian weights, size x size.
std::vector<double> gaussian_window(std::size_t size, double sigma);

}  // namespace pesrs::eval
