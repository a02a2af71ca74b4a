#pragma once

#include <random>
#include <string>
#include <utility>

#include "pesrs/core/ops.hpp"

namespace pesrs::nn {

// Parameters are addressed by "<prefix>.<field>" names so that every layer
// is reachable from the ParamSet alone.

template <typename Real>
void register_linear(ParamSet<Real>& params, const std::string& prefix,
                     std::size_t in, std::size_t out, bool bias = true);
/// x W + b over the trailing axis. Throws ShapeError naming `prefix` when the
/// trailing extent of x differs from the registered input width.
template <typename Real>
Var linear(Tape<Real>& t, Var x, const std::string& prefix);

/// Gated recurrent unit:
///   z = sigmoid(x Wz + h Uz + bz)
///   r = sigmoid(x Wr + h Ur + br)
///   n = tanh(x Wn + r * (h Un) + bn)
///   h' = (1 - z) * n + z * h
template <typename Real>
void register_gru(ParamSet<Real>& params, const std::string& prefix,
                  std::size_t in, std::size_t hidden);
template <typename Real>
Var gru_cell(Tape<Real>& t, Var x, Var h_prev, const std::string& prefix);

struct ConvStackConfig {
  std::size_t image_size = 128;
  std::size_t in_channels = 3;
  std::size_t stage1 = 16;
  std::size_t stage2 = 32;
  std::size_t out_dim = 100;  ///< d
  std::size_t grid = 4;       ///< p
  /// Side length after the three stride-2 stages.
  std::size_t final_side() const { return (((image_size + 1) / 2 + 1) / 2 + 1) / 2; }
  void validate() const;
};

/// Three 3x3 stride-2 convolutions with ReLU, average-pooled to a p x p grid
/// (the feature map O, [p, p, d]); O_flat is the global average of O passed
/// through one linear layer.
template <typename Real>
void register_conv_stack(ParamSet<Real>& params, const std::string& prefix,
                         const ConvStackConfig& cfg);
template <typename Real>
std::pair<Var, Var> conv_stack(Tape<Real>& t, Var image, const std::string& prefix,
                               const ConvStackConfig& cfg);

/// Inverted dropout; a no-op when `rng` is null or `rate` is 0.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

template <typename Real>
Var dropout(Tape<Real>& t, Var x, const Dropout& d);

/// Zeroes the rows of x whose mask entry is false.
template <typename Real>
Var mask_rows(Tape<Real>& t, Var x, const Mask& row_mask);

/// Standard sinusoidal position table [length, dim].
template <typename Real>
Tensor<Real> sinusoidal_positions(std::size_t length, std::size_t dim);

}  // namespace pesrs::nn
