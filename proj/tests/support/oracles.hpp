#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pesrs/data/types.hpp"

// Independent reference implementations used by tests.
namespace pesrs::oracle {

// 1-based rank of the truth after a stable descending sort.
inline std::size_t sorted_rank(const std::vector<double>& s, std::size_t truth) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  return static_cast<std::size_t>(std::find(idx.begin(), idx.end(), truth) - idx.begin()) + 1;
}

// Per-window SSIM with two-pass weighted moments, 11x11 Gaussian (sigma 1.5)
// shrunk to the smaller odd image side, luma for RGB.
inline double ssim(const data::Image& a, const data::Image& b) {
  auto luma = [](const data::Image& im, std::size_t y, std::size_t x) {
    if (im.channels == 1) return static_cast<double>(im.at(y, x, 0));
    return 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
  };
  std::size_t n = std::min<std::size_t>({11, a.height, a.width});
  if (n % 2 == 0) --n;
  std::vector<double> g(n * n);
  double gs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double di = i - (n - 1) / 2.0, dj = j - (n - 1) / 2.0;
      gs += g[i * n + j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
    }
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + n <= a.height; ++r) {
    for (std::size_t c = 0; c + n <= a.width; ++c) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          mx += g[i * n + j] / gs * luma(a, r + i, c + j);
          my += g[i * n + j] / gs * luma(b, r + i, c + j);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double w = g[i * n + j] / gs;
          const double dx = luma(a, r + i, c + j) - mx, dy = luma(b, r + i, c + j) - my;
          vx += w * dx * dx;
          vy += w * dy * dy;
          cxy += w * dx * dy;
        }
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace pesrs::oracle
