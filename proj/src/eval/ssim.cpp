#include "pesrs/eval/ssim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pesrs::eval {

std::vector<double> to_luma(const data::Image& image) {
  std::vector<double> out(image.height * image.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float* px = &image.pixels[i * image.channels];
    if (image.channels >= 3) {
      out[i] = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    } else {
      out[i] = px[0];
    }
  }
  return out;
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size * size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) - c, dx = static_cast<double>(x) - c;
      w[y * size + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      total += w[y * size + x];
    }
  }
  for (auto& v : w) v /= total;
  return w;
}

double ssim(const data::Image& a, const data::Image& b, const SsimOptions& opts) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw std::invalid_argument("ssim: image dimensions differ");
  }
  if (a.height == 0 || a.width == 0) throw std::invalid_argument("ssim: empty image");
  std::size_t win = std::min({opts.window, a.height, a.width});
  if (win % 2 == 0) --win;
  const auto w = gaussian_window(win, opts.sigma);
  const auto x = to_luma(a), y = to_luma(b);
  const double c1 = std::pow(opts.k1 * opts.dynamic_range, 2);
  const double c2 = std::pow(opts.k2 * opts.dynamic_range, 2);
  const std::size_t width = a.width;

  double total = 0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r + win <= a.height; ++r) {
    for (std::size_t c = 0; c + win <= a.width; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = 0; i < win; ++i) {
        for (std::size_t j = 0; j < win; ++j) {
          const double wt = w[i * win + j];
          const double xv = x[(r + i) * width + c + j], yv = y[(r + i) * width + c + j];
          mx += wt * xv;
          my += wt * yv;
          sxx += wt * (xv * xv);
          syy += wt * (yv * yv);
          sxy += wt * (xv * yv);
        }
      }
      const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      const double num = (2 * mx * my + c1) * (2 * cov + c2);
      const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      total += num / den;
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

}  // namespace pesrs::eval
