#include "pesrs/core/nn.hpp"

#include <array>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pesrs::nn {

template <typename Real>
void register_linear(ParamSet<Real>& params, const std::string& prefix,
                     std::size_t in, std::size_t out, bool bias) {
  params.add(prefix + ".weight", {in, out});
  if (bias) params.add(prefix + ".bias", {out});
}

template <typename Real>
Var linear(Tape<Real>& t, Var x, const std::string& prefix) {
  const auto& params = t.params();
  Var w = t.param(prefix + ".weight");
  const std::size_t in = t.value(w).dim(0);
  if (t.value(x).cols() != in) {
    throw ShapeError("linear(" + prefix + "): input " + shape_string(t.shape(x)) +
                     " but weight expects width " + std::to_string(in));
  }
  const std::string bias_name = prefix + ".bias";
  Var b = params.contains(bias_name) ? t.param(bias_name) : Var{};
  return ops::affine(t, x, w, b);
}

template <typename Real>
void register_gru(ParamSet<Real>& params, const std::string& prefix,
                  std::size_t in, std::size_t hidden) {
  for (const char* gate : {"z", "r", "n"}) {
    params.add(prefix + ".w" + gate, {in, hidden});
    params.add(prefix + ".u" + gate, {hidden, hidden});
    params.add(prefix + ".b" + gate, {hidden});
  }
}

template <typename Real>
Var gru_cell(Tape<Real>& t, Var x, Var h_prev, const std::string& prefix) {
  Var wz = t.param(prefix + ".wz");
  Var uz = t.param(prefix + ".uz");
  const std::size_t in = t.value(wz).dim(0), hidden = t.value(uz).dim(0);
  if (t.value(x).size() != in || t.value(h_prev).size() != hidden) {
    throw ShapeError("gru_cell(" + prefix + "): x " + shape_string(t.shape(x)) +
                     ", h " + shape_string(t.shape(h_prev)) + " vs in=" +
                     std::to_string(in) + " hidden=" + std::to_string(hidden));
  }
  auto gate_input = [&](const char* g) {
    Var xw = ops::matmul(t, x, t.param(prefix + ".w" + g));
    Var hu = ops::matmul(t, h_prev, t.param(prefix + ".u" + g));
    return std::pair{xw, hu};
  };
  auto [xz, hz] = gate_input("z");
  auto [xr, hr] = gate_input("r");
  auto [xn, hn] = gate_input("n");
  Var z = ops::sigmoid(t, ops::add_bias(t, ops::add(t, xz, hz), t.param(prefix + ".bz")));
  Var r = ops::sigmoid(t, ops::add_bias(t, ops::add(t, xr, hr), t.param(prefix + ".br")));
  Var n = ops::tanh(t, ops::add_bias(t, ops::add(t, xn, ops::mul(t, r, hn)),
                                     t.param(prefix + ".bn")));
  // h' = n + z * (h - n)
  return ops::add(t, n, ops::mul(t, z, ops::sub(t, h_prev, n)));
}

void ConvStackConfig::validate() const {
  if (image_size == 0 || in_channels == 0 || stage1 == 0 || stage2 == 0 ||
      out_dim == 0 || grid == 0) {
    throw std::invalid_argument("conv stack: all sizes must be positive");
  }
  if (final_side() % grid != 0) {
    throw std::invalid_argument("conv stack: image size " + std::to_string(image_size) +
                                " gives a " + std::to_string(final_side()) +
                                "-wide final map, not divisible by grid " +
                                std::to_string(grid));
  }
}

template <typename Real>
void register_conv_stack(ParamSet<Real>& params, const std::string& prefix,
                         const ConvStackConfig& cfg) {
  cfg.validate();
  const std::array<std::size_t, 4> widths{cfg.in_channels, cfg.stage1, cfg.stage2,
                                          cfg.out_dim};
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string name = prefix + ".conv" + std::to_string(s + 1);
    params.add(name + ".kernel", {3, 3, widths[s], widths[s + 1]});
    params.add(name + ".bias", {widths[s + 1]});
  }
  register_linear(params, prefix + ".flat", cfg.out_dim, cfg.out_dim);
}

template <typename Real>
std::pair<Var, Var> conv_stack(Tape<Real>& t, Var image, const std::string& prefix,
                               const ConvStackConfig& cfg) {
  const Shape expected{cfg.image_size, cfg.image_size, cfg.in_channels};
  if (t.shape(image) != expected) {
    throw ShapeError("conv_stack(" + prefix + "): image " + shape_string(t.shape(image)) +
                     ", expected " + shape_string(expected));
  }
  Var x = image;
  for (std::size_t s = 1; s <= 3; ++s) {
    const std::string name = prefix + ".conv" + std::to_string(s);
    x = ops::relu(t, ops::conv2d(t, x, t.param(name + ".kernel"), t.param(name + ".bias"),
                                 2, 1));
  }
  const std::size_t window = cfg.final_side() / cfg.grid;
  Var grid = window == 1 ? x : ops::avg_pool(t, x, window);
  Var flat = linear(t, ops::global_avg_pool(t, grid), prefix + ".flat");
  return {grid, flat};
}

template <typename Real>
Var dropout(Tape<Real>& t, Var x, const Dropout& d) {
  if (!d.active()) return x;
  const Real keep = static_cast<Real>(1.0 - d.rate);
  Tensor<Real> m(t.shape(x));
  std::bernoulli_distribution coin(1.0 - d.rate);
  for (auto& v : m.data()) v = coin(*d.rng) ? Real{1} / keep : Real{0};
  return ops::mul(t, x, t.constant(std::move(m)));
}

template <typename Real>
Var mask_rows(Tape<Real>& t, Var x, const Mask& row_mask) {
  const auto& v = t.value(x);
  if (row_mask.size() != v.rows()) {
    throw ShapeError("mask_rows: mask length " + std::to_string(row_mask.size()) +
                     " vs " + std::to_string(v.rows()) + " rows");
  }
  if (count_true(row_mask) == row_mask.size()) return x;
  Tensor<Real> m(v.shape());
  const std::size_t c = v.cols();
  for (std::size_t r = 0; r < row_mask.size(); ++r)
    if (row_mask[r]) std::fill_n(m.data().begin() + static_cast<std::ptrdiff_t>(r * c), c, Real{1});
  return ops::mul(t, x, t.constant(std::move(m)));
}

template <typename Real>
Tensor<Real> sinusoidal_positions(std::size_t length, std::size_t dim) {
  Tensor<Real> pe({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe.at(pos, i) = static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

#define PESRS_INSTANTIATE_NN(R)                                                          \
  template void register_linear<R>(ParamSet<R>&, const std::string&, std::size_t,       \
                                   std::size_t, bool);                                  \
  template Var linear<R>(Tape<R>&, Var, const std::string&);                            \
  template void register_gru<R>(ParamSet<R>&, const std::string&, std::size_t,          \
                                std::size_t);                                           \
  template Var gru_cell<R>(Tape<R>&, Var, Var, const std::string&);                     \
  template void register_conv_stack<R>(ParamSet<R>&, const std::string&,                \
                                       const ConvStackConfig&);                         \
  template std::pair<Var, Var> conv_stack<R>(Tape<R>&, Var, const std::string&,         \
                                             const ConvStackConfig&);                   \
  template Var dropout<R>(Tape<R>&, Var, const Dropout&);                               \
  template Var mask_rows<R>(Tape<R>&, Var, const Mask&);                                \
  template Tensor<R> sinusoidal_positions<R>(std::size_t, std::size_t);

PESRS_INSTANTIATE_NN(float)
PESRS_INSTANTIATE_NN(double)

}  // namespace pesrs::nn
