#include "pesrs/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pesrs::ops {
namespace {

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op) + ": " + what);
}

template <typename Real>
void require_same(const Tape<Real>& t, Var a, Var b, const char* op) {
  require(t.shape(a) == t.shape(b), op,
          shape_string(t.shape(a)) + " vs " + shape_string(t.shape(b)));
}

}  // namespace

template <typename Real>
Var add(Tape<Real>& t, Var a, Var b) {
  require_same(t, a, b, "add");
  Tensor<Real> out = t.value(a);
  out += t.value(b);
  return t.record(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* ga = tp.grad_slot(a)) *ga += g;
    if (auto* gb = tp.grad_slot(b)) *gb += g;
  });
}

template <typename Real>
Var sub(Tape<Real>& t, Var a, Var b) {
  require_same(t, a, b, "sub");
  Tensor<Real> out = t.value(a);
  const auto& vb = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* ga = tp.grad_slot(a)) *ga += g;
    if (auto* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename Real>
Var mul(Tape<Real>& t, Var a, Var b) {
  require_same(t, a, b, "mul");
  Tensor<Real> out = t.value(a);
  const auto& vb = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape<Real>& tp, const Tensor<Real>& g) {
    const auto& va = tp.value(a);
    const auto& vb = tp.value(b);
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * vb[i];
    }
    if (auto* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * va[i];
    }
  });
}

template <typename Real>
Var add_n(Tape<Real>& t, std::span<const Var> xs) {
  require(!xs.empty(), "add_n", "no inputs");
  Tensor<Real> out = t.value(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    require_same(t, xs[0], xs[i], "add_n");
    out += t.value(xs[i]);
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record(std::move(out), xs, [inputs](Tape<Real>& tp, const Tensor<Real>& g) {
    for (Var x : inputs) {
      if (auto* gx = tp.grad_slot(x)) *gx += g;
    }
  });
}

template <typename Real>
Var scale(Tape<Real>& t, Var a, Real factor) {
  Tensor<Real> out = t.value(a);
  for (auto& x : out.data()) x *= factor;
  return t.record(std::move(out), {a}, [a, factor](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
    }
  });
}

template <typename Real>
Var mul_scalar(Tape<Real>& t, Var a, Var s) {
  require(t.value(s).size() == 1, "mul_scalar",
          "scalar operand has shape " + shape_string(t.shape(s)));
  Tensor<Real> out = t.value(a);
  const Real sv = t.value(s)[0];
  for (auto& x : out.data()) x *= sv;
  return t.record(std::move(out), {a, s}, [a, s](Tape<Real>& tp, const Tensor<Real>& g) {
    const auto& va = tp.value(a);
    const Real sv = tp.value(s)[0];
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * sv;
    }
    if (auto* gs = tp.grad_slot(s)) {
      Real acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * va[i];
      (*gs)[0] += acc;
    }
  });
}

template <typename Real>
Var one_minus(Tape<Real>& t, Var a) {
  Tensor<Real> out = t.value(a);
  for (auto& x : out.data()) x = Real{1} - x;
  return t.record(std::move(out), {a}, [a](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] -= g[i];
    }
  });
}

template <typename Real>
Var relu(Tape<Real>& t, Var a) {
  Tensor<Real> out = t.value(a);
  for (auto& x : out.data()) x = x > Real{0} ? x : Real{0};
  Mask positive(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) positive[i] = out[i] > Real{0};
  return t.record(std::move(out), {a},
                  [a, positive = std::move(positive)](Tape<Real>& tp, const Tensor<Real>& g) {
                    if (auto* ga = tp.grad_slot(a)) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        if (positive[i]) (*ga)[i] += g[i];
                      }
                    }
                  });
}

template <typename Real>
Var sigmoid(Tape<Real>& t, Var a) {
  Tensor<Real> out = t.value(a);
  for (auto& x : out.data()) {
    x = x >= Real{0} ? Real{1} / (Real{1} + std::exp(-x))
                     : std::exp(x) / (Real{1} + std::exp(x));
  }
  Tensor<Real> saved = out;
  return t.record(std::move(out), {a},
                  [a, saved = std::move(saved)](Tape<Real>& tp, const Tensor<Real>& g) {
                    if (auto* ga = tp.grad_slot(a)) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        (*ga)[i] += g[i] * saved[i] * (Real{1} - saved[i]);
                      }
                    }
                  });
}

template <typename Real>
Var tanh(Tape<Real>& t, Var a) {
  Tensor<Real> out = t.value(a);
  for (auto& x : out.data()) x = std::tanh(x);
  Tensor<Real> saved = out;
  return t.record(std::move(out), {a},
                  [a, saved = std::move(saved)](Tape<Real>& tp, const Tensor<Real>& g) {
                    if (auto* ga = tp.grad_slot(a)) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        (*ga)[i] += g[i] * (Real{1} - saved[i] * saved[i]);
                      }
                    }
                  });
}

template <typename Real>
Var reshape(Tape<Real>& t, Var a, Shape shape) {
  Tensor<Real> out = t.value(a).reshaped(std::move(shape));
  return t.record(std::move(out), {a}, [a](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
  });
}

template <typename Real>
Var concat(Tape<Real>& t, std::span<const Var> xs) {
  require(!xs.empty(), "concat", "no inputs");
  const std::size_t rows = t.value(xs[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var x : xs) {
    const auto& v = t.value(x);
    require(v.rows() == rows && v.rank() == t.value(xs[0]).rank(), "concat",
            "row mismatch " + shape_string(v.shape()) + " vs " +
                shape_string(t.shape(xs[0])));
    widths.push_back(v.cols());
    total += v.cols();
  }
  Shape shape = t.shape(xs[0]);
  shape.back() = total;
  Tensor<Real> out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto src = t.value(xs[i]).row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + offset);
      offset += widths[i];
    }
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return t.record(std::move(out), xs,
                  [inputs, widths, rows](Tape<Real>& tp, const Tensor<Real>& g) {
                    std::size_t offset = 0;
                    for (std::size_t i = 0; i < inputs.size(); ++i) {
                      if (auto* gx = tp.grad_slot(inputs[i])) {
                        for (std::size_t r = 0; r < rows; ++r) {
                          auto src = g.row(r);
                          auto dst = gx->row(r);
                          for (std::size_t c = 0; c < widths[i]; ++c) {
                            dst[c] += src[offset + c];
                          }
                        }
                      }
                      offset += widths[i];
                    }
                  });
}

template <typename Real>
Var stack(Tape<Real>& t, std::span<const Var> rows) {
  require(!rows.empty(), "stack", "no inputs");
  const std::size_t d = t.value(rows[0]).size();
  Tensor<Real> out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& v = t.value(rows[i]);
    require(v.size() == d, "stack", "row " + std::to_string(i) + " has width " +
                                        std::to_string(v.size()));
    std::copy(v.data().begin(), v.data().end(), out.row(i).begin());
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return t.record(std::move(out), rows, [inputs](Tape<Real>& tp, const Tensor<Real>& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (auto* gx = tp.grad_slot(inputs[i])) {
        auto src = g.row(i);
        for (std::size_t c = 0; c < src.size(); ++c) (*gx)[c] += src[c];
      }
    }
  });
}

template <typename Real>
Var row(Tape<Real>& t, Var a, std::size_t i) {
  const auto& v = t.value(a);
  require(i < v.rows(), "row", "index " + std::to_string(i) + " out of " +
                                   shape_string(v.shape()));
  auto src = v.row(i);
  Tensor<Real> out({v.cols()}, std::vector<Real>(src.begin(), src.end()));
  return t.record(std::move(out), {a}, [a, i](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* ga = tp.grad_slot(a)) {
      auto dst = ga->row(i);
      for (std::size_t c = 0; c < g.size(); ++c) dst[c] += g[c];
    }
  });
}

template <typename Real>
Var transpose(Tape<Real>& t, Var a) {
  const auto& v = t.value(a);
  require(v.rank() == 2, "transpose", "expects a matrix, got " + shape_string(v.shape()));
  const std::size_t n = v.dim(0), m = v.dim(1);
  Tensor<Real> out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = v.at(i, j);
  return t.record(std::move(out), {a}, [a, n, m](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga->at(i, j) += g.at(j, i);
    }
  });
}

template <typename Real>
Var matmul(Tape<Real>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  require(vb.rank() == 2, "matmul", "right operand must be a matrix, got " +
                                        shape_string(vb.shape()));
  const std::size_t n = va.rows(), k = va.cols(), m = vb.dim(1);
  require(k == vb.dim(0), "matmul",
          shape_string(va.shape()) + " x " + shape_string(vb.shape()));
  Shape shape = va.rank() <= 1 ? Shape{m} : Shape{n, m};
  Tensor<Real> out(shape);
  for (std::size_t i = 0; i < n; ++i) {
    Real* orow = out.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = va[i * k + p];
      if (aip == Real{0}) continue;
      const Real* brow = vb.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return t.record(std::move(out), {a, b}, [a, b, n, k, m](Tape<Real>& tp, const Tensor<Real>& g) {
    const auto& va = tp.value(a);
    const auto& vb = tp.value(b);
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          Real acc = 0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * vb[p * m + j];
          (*ga)[i * k + p] += acc;
        }
    }
    if (auto* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const Real aip = va[i * k + p];
          if (aip == Real{0}) continue;
          Real* grow = gb->data().data() + p * m;
          for (std::size_t j = 0; j < m; ++j) grow[j] += aip * g[i * m + j];
        }
    }
  });
}

template <typename Real>
Var matmul_bt(Tape<Real>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  const std::size_t n = va.rows(), k = va.cols(), m = vb.rows();
  require(k == vb.cols(), "matmul_bt",
          shape_string(va.shape()) + " x " + shape_string(vb.shape()) + "^T");
  Tensor<Real> out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += va[i * k + p] * vb[j * k + p];
      out[i * m + j] = acc;
    }
  return t.record(std::move(out), {a, b}, [a, b, n, k, m](Tape<Real>& tp, const Tensor<Real>& g) {
    const auto& va = tp.value(a);
    const auto& vb = tp.value(b);
    if (auto* ga = tp.grad_slot(a)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const Real gij = g[i * m + j];
          for (std::size_t p = 0; p < k; ++p) (*ga)[i * k + p] += gij * vb[j * k + p];
        }
    }
    if (auto* gb = tp.grad_slot(b)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const Real gij = g[i * m + j];
          for (std::size_t p = 0; p < k; ++p) (*gb)[j * k + p] += gij * va[i * k + p];
        }
    }
  });
}

template <typename Real>
Var add_bias(Tape<Real>& t, Var x, Var bias) {
  const auto& vx = t.value(x);
  const auto& vb = t.value(bias);
  require(vb.size() == vx.cols(), "add_bias",
          shape_string(vx.shape()) + " + " + shape_string(vb.shape()));
  Tensor<Real> out = vx;
  const std::size_t m = vx.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i % m];
  return t.record(std::move(out), {x, bias}, [x, bias, m](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* gx = tp.grad_slot(x)) *gx += g;
    if (auto* gb = tp.grad_slot(bias)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % m] += g[i];
    }
  });
}

template <typename Real>
Var affine(Tape<Real>& t, Var x, Var weight, Var bias) {
  Var y = matmul(t, x, weight);
  return bias.valid() ? add_bias(t, y, bias) : y;
}

template <typename Real>
Var sum(Tape<Real>& t, Var a) {
  Real acc = 0;
  for (Real v : t.value(a).data()) acc += v;
  return t.record(Tensor<Real>({1}, std::vector<Real>{acc}), {a},
                  [a](Tape<Real>& tp, const Tensor<Real>& g) {
                    if (auto* ga = tp.grad_slot(a)) {
                      for (auto& v : ga->data()) v += g[0];
                    }
                  });
}

template <typename Real>
Var masked_mean_rows(Tape<Real>& t, Var x, const Mask& row_mask) {
  const auto& v = t.value(x);
  const std::size_t n = v.rows(), d = v.cols();
  require(row_mask.size() == n, "masked_mean_rows",
          "mask length " + std::to_string(row_mask.size()) + " vs rows " +
              std::to_string(n));
  const std::size_t count = count_true(row_mask);
  if (count == 0) throw std::domain_error("masked_mean_rows: every row is masked");
  Tensor<Real> out({d});
  for (std::size_t i = 0; i < n; ++i) {
    if (!row_mask[i]) continue;
    for (std::size_t c = 0; c < d; ++c) out[c] += v[i * d + c];
  }
  const Real inv = Real{1} / static_cast<Real>(count);
  for (auto& o : out.data()) o *= inv;
  return t.record(std::move(out), {x}, [x, row_mask, n, d, inv](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* gx = tp.grad_slot(x)) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!row_mask[i]) continue;
        for (std::size_t c = 0; c < d; ++c) (*gx)[i * d + c] += g[c] * inv;
      }
    }
  });
}

template <typename Real>
Var column_max(Tape<Real>& t, Var x, const Mask& row_mask, const Mask& col_mask) {
  const auto& v = t.value(x);
  const std::size_t n = v.rows(), m = v.cols();
  require(row_mask.empty() || row_mask.size() == n, "column_max", "row mask length");
  require(col_mask.empty() || col_mask.size() == m, "column_max", "column mask length");
  Tensor<Real> out({m});
  std::vector<std::size_t> argmax(m, n);
  for (std::size_t j = 0; j < m; ++j) {
    if (!col_mask.empty() && !col_mask[j]) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (!row_mask.empty() && !row_mask[i]) continue;
      if (argmax[j] == n || v[i * m + j] > out[j]) {
        out[j] = v[i * m + j];
        argmax[j] = i;
      }
    }
    if (argmax[j] == n) throw std::domain_error("column_max: every row is masked");
  }
  return t.record(std::move(out), {x}, [x, argmax, n, m](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* gx = tp.grad_slot(x)) {
      for (std::size_t j = 0; j < m; ++j) {
        if (argmax[j] != n) (*gx)[argmax[j] * m + j] += g[j];
      }
    }
  });
}

template <typename Real>
Var row_max(Tape<Real>& t, Var x, const Mask& col_mask) {
  const auto& v = t.value(x);
  const std::size_t n = v.rows(), m = v.cols();
  require(col_mask.empty() || col_mask.size() == m, "row_max", "column mask length");
  Tensor<Real> out({n});
  std::vector<std::size_t> argmax(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!col_mask.empty() && !col_mask[j]) continue;
      if (argmax[i] == m || v[i * m + j] > out[i]) {
        out[i] = v[i * m + j];
        argmax[i] = j;
      }
    }
    if (argmax[i] == m) throw std::domain_error("row_max: every column is masked");
  }
  return t.record(std::move(out), {x}, [x, argmax, m](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* gx = tp.grad_slot(x)) {
      for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[i * m + argmax[i]] += g[i];
    }
  });
}

template <typename Real>
Var masked_softmax(Tape<Real>& t, Var scores, const Mask& col_mask) {
  const auto& v = t.value(scores);
  const std::size_t n = v.rows(), m = v.cols();
  require(col_mask.size() == m, "masked_softmax",
          "mask length " + std::to_string(col_mask.size()) + " vs width " +
              std::to_string(m));
  if (count_true(col_mask) == 0) {
    throw std::domain_error("masked_softmax: every entry is masked");
  }
  Tensor<Real> out(v.shape());
  for (std::size_t i = 0; i < n; ++i) {
    Real hi = std::numeric_limits<Real>::lowest();
    for (std::size_t j = 0; j < m; ++j)
      if (col_mask[j]) hi = std::max(hi, v[i * m + j]);
    Real z = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!col_mask[j]) continue;
      out[i * m + j] = std::exp(v[i * m + j] - hi);
      z += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  Tensor<Real> saved = out;
  return t.record(std::move(out), {scores},
                  [scores, saved = std::move(saved), n, m](Tape<Real>& tp, const Tensor<Real>& g) {
                    if (auto* gs = tp.grad_slot(scores)) {
                      for (std::size_t i = 0; i < n; ++i) {
                        Real dot = 0;
                        for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * saved[i * m + j];
                        for (std::size_t j = 0; j < m; ++j) {
                          (*gs)[i * m + j] += saved[i * m + j] * (g[i * m + j] - dot);
                        }
                      }
                    }
                  });
}

template <typename Real>
Var layer_norm(Tape<Real>& t, Var x, Var gain, Var bias, Real eps) {
  const auto& v = t.value(x);
  const std::size_t n = v.rows(), d = v.cols();
  require(t.value(gain).size() == d && t.value(bias).size() == d, "layer_norm",
          "gain/bias width must be " + std::to_string(d));
  const auto& vg = t.value(gain);
  const auto& vb = t.value(bias);
  Tensor<Real> normed(v.shape());
  std::vector<Real> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += v[i * d + c];
    mean /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t c = 0; c < d; ++c) {
      const Real diff = v[i * d + c] - mean;
      var += diff * diff;
    }
    var /= static_cast<Real>(d);
    inv_std[i] = Real{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) normed[i * d + c] = (v[i * d + c] - mean) * inv_std[i];
  }
  Tensor<Real> out(v.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = normed[i * d + c] * vg[c] + vb[c];
  return t.record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std), n, d](
          Tape<Real>& tp, const Tensor<Real>& g) {
        const auto& vg = tp.value(gain);
        if (auto* gg = tp.grad_slot(gain)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) (*gg)[c] += g[i * d + c] * normed[i * d + c];
        }
        if (auto* gb = tp.grad_slot(bias)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) (*gb)[c] += g[i * d + c];
        }
        if (auto* gx = tp.grad_slot(x)) {
          const Real inv_d = Real{1} / static_cast<Real>(d);
          for (std::size_t i = 0; i < n; ++i) {
            Real sum_dn = 0, sum_dn_n = 0;
            for (std::size_t c = 0; c < d; ++c) {
              const Real dn = g[i * d + c] * vg[c];
              sum_dn += dn;
              sum_dn_n += dn * normed[i * d + c];
            }
            for (std::size_t c = 0; c < d; ++c) {
              const Real dn = g[i * d + c] * vg[c];
              (*gx)[i * d + c] +=
                  inv_std[i] * (dn - inv_d * sum_dn - normed[i * d + c] * inv_d * sum_dn_n);
            }
          }
        }
      });
}

template <typename Real>
Var embedding(Tape<Real>& t, Var table, std::span<const std::uint32_t> ids) {
  const auto& v = t.value(table);
  require(v.rank() == 2, "embedding", "table must be a matrix");
  const std::size_t vocab = v.dim(0), d = v.dim(1);
  Tensor<Real> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) +
                              " >= vocabulary size " + std::to_string(vocab));
    }
    auto src = v.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::uint32_t> saved(ids.begin(), ids.end());
  return t.record(std::move(out), {table}, [table, saved, d](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* gt = tp.grad_slot(table)) {
      for (std::size_t i = 0; i < saved.size(); ++i) {
        auto dst = gt->row(saved[i]);
        for (std::size_t c = 0; c < d; ++c) dst[c] += g[i * d + c];
      }
    }
  });
}

template <typename Real>
Var conv2d(Tape<Real>& t, Var image, Var kernel, Var bias, std::size_t stride,
           std::size_t pad) {
  const auto& x = t.value(image);
  const auto& k = t.value(kernel);
  require(x.rank() == 3, "conv2d", "image must be [H,W,C], got " + shape_string(x.shape()));
  require(k.rank() == 4 && k.dim(2) == x.dim(2), "conv2d",
          "kernel " + shape_string(k.shape()) + " vs image " + shape_string(x.shape()));
  require(t.value(bias).size() == k.dim(3), "conv2d", "bias width");
  require(stride >= 1, "conv2d", "stride must be positive");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t KH = k.dim(0), KW = k.dim(1), O = k.dim(3);
  require(H + 2 * pad >= KH && W + 2 * pad >= KW, "conv2d", "kernel larger than input");
  const std::size_t HO = (H + 2 * pad - KH) / stride + 1;
  const std::size_t WO = (W + 2 * pad - KW) / stride + 1;
  const auto& b = t.value(bias);
  Tensor<Real> out({HO, WO, O});
  for (std::size_t oy = 0; oy < HO; ++oy)
    for (std::size_t ox = 0; ox < WO; ++ox) {
      Real* dst = out.data().data() + (oy * WO + ox) * O;
      for (std::size_t o = 0; o < O; ++o) dst[o] = b[o];
      for (std::size_t ky = 0; ky < KH; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                  static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const Real* src = x.data().data() + (iy * W + ix) * C;
          const Real* kw = k.data().data() + (ky * KW + kx) * C * O;
          for (std::size_t c = 0; c < C; ++c) {
            const Real xv = src[c];
            const Real* krow = kw + c * O;
            for (std::size_t o = 0; o < O; ++o) dst[o] += xv * krow[o];
          }
        }
      }
    }
  return t.record(
      std::move(out), {image, kernel, bias},
      [image, kernel, bias, stride, pad, H, W, C, KH, KW, O, HO, WO](Tape<Real>& tp,
                                                                     const Tensor<Real>& g) {
        const auto& x = tp.value(image);
        const auto& k = tp.value(kernel);
        auto* gx = tp.grad_slot(image);
        auto* gk = tp.grad_slot(kernel);
        if (auto* gb = tp.grad_slot(bias)) {
          for (std::size_t p = 0; p < HO * WO; ++p)
            for (std::size_t o = 0; o < O; ++o) (*gb)[o] += g[p * O + o];
        }
        if (!gx && !gk) return;
        for (std::size_t oy = 0; oy < HO; ++oy)
          for (std::size_t ox = 0; ox < WO; ++ox) {
            const Real* go = g.data().data() + (oy * WO + ox) * O;
            for (std::size_t ky = 0; ky < KH; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                const std::size_t xoff = (iy * W + ix) * C;
                const std::size_t koff = (ky * KW + kx) * C * O;
                for (std::size_t c = 0; c < C; ++c) {
                  const Real* krow = k.data().data() + koff + c * O;
                  if (gx) {
                    Real acc = 0;
                    for (std::size_t o = 0; o < O; ++o) acc += go[o] * krow[o];
                    (*gx)[xoff + c] += acc;
                  }
                  if (gk) {
                    const Real xv = x[xoff + c];
                    Real* gkrow = gk->data().data() + koff + c * O;
                    for (std::size_t o = 0; o < O; ++o) gkrow[o] += xv * go[o];
                  }
                }
              }
            }
          }
      });
}

template <typename Real>
Var avg_pool(Tape<Real>& t, Var image, std::size_t window) {
  const auto& x = t.value(image);
  require(x.rank() == 3, "avg_pool", "image must be [H,W,C]");
  require(window >= 1 && x.dim(0) % window == 0 && x.dim(1) % window == 0, "avg_pool",
          "window " + std::to_string(window) + " does not tile " + shape_string(x.shape()));
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t HO = H / window, WO = W / window;
  const Real inv = Real{1} / static_cast<Real>(window * window);
  Tensor<Real> out({HO, WO, C});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t xx = 0; xx < W; ++xx)
      for (std::size_t c = 0; c < C; ++c)
        out[((y / window) * WO + xx / window) * C + c] += x[(y * W + xx) * C + c] * inv;
  return t.record(std::move(out), {image},
                  [image, window, H, W, C, WO, inv](Tape<Real>& tp, const Tensor<Real>& g) {
                    if (auto* gx = tp.grad_slot(image)) {
                      for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t xx = 0; xx < W; ++xx)
                          for (std::size_t c = 0; c < C; ++c)
                            (*gx)[(y * W + xx) * C + c] +=
                                g[((y / window) * WO + xx / window) * C + c] * inv;
                    }
                  });
}

template <typename Real>
Var global_avg_pool(Tape<Real>& t, Var image) {
  const auto& x = t.value(image);
  require(x.rank() == 3, "global_avg_pool", "image must be [H,W,C]");
  const std::size_t P = x.dim(0) * x.dim(1), C = x.dim(2);
  const Real inv = Real{1} / static_cast<Real>(P);
  Tensor<Real> out({C});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += x[p * C + c];
  for (auto& o : out.data()) o *= inv;
  return t.record(std::move(out), {image}, [image, P, C, inv](Tape<Real>& tp, const Tensor<Real>& g) {
    if (auto* gx = tp.grad_slot(image)) {
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t c = 0; c < C; ++c) (*gx)[p * C + c] += g[c] * inv;
    }
  });
}

template <typename Real>
Var relation_matrix(Tape<Real>& t, Var a, Var b, Var w, const Mask& col_mask) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  const auto& vw = t.value(w);
  const std::size_t P = va.rows(), T = vb.rows(), d = va.cols();
  require(vb.cols() == d, "relation_matrix",
          "feature width " + std::to_string(d) + " vs " + std::to_string(vb.cols()));
  require(vw.size() == 3 * d, "relation_matrix", "w must have 3d entries");
  require(col_mask.size() == T, "relation_matrix", "word mask length");
  Tensor<Real> out({P, T});
  for (std::size_t k = 0; k < P; ++k) {
    Real ak = 0;
    for (std::size_t c = 0; c < d; ++c) ak += vw[c] * va[k * d + c];
    for (std::size_t j = 0; j < T; ++j) {
      if (!col_mask[j]) {
        out[k * T + j] = std::numeric_limits<Real>::lowest();
        continue;
      }
      Real acc = ak;
      for (std::size_t c = 0; c < d; ++c) {
        acc += vw[d + c] * vb[j * d + c] + vw[2 * d + c] * va[k * d + c] * vb[j * d + c];
      }
      out[k * T + j] = acc;
    }
  }
  return t.record(std::move(out), {a, b, w},
                  [a, b, w, col_mask, P, T, d](Tape<Real>& tp, const Tensor<Real>& g) {
                    const auto& va = tp.value(a);
                    const auto& vb = tp.value(b);
                    const auto& vw = tp.value(w);
                    auto* ga = tp.grad_slot(a);
                    auto* gb = tp.grad_slot(b);
                    auto* gw = tp.grad_slot(w);
                    for (std::size_t k = 0; k < P; ++k)
                      for (std::size_t j = 0; j < T; ++j) {
                        if (!col_mask[j]) continue;
                        const Real gkj = g[k * T + j];
                        if (gkj == Real{0}) continue;
                        for (std::size_t c = 0; c < d; ++c) {
                          const Real ac = va[k * d + c], bc = vb[j * d + c];
                          if (ga) (*ga)[k * d + c] += gkj * (vw[c] + vw[2 * d + c] * bc);
                          if (gb) (*gb)[j * d + c] += gkj * (vw[d + c] + vw[2 * d + c] * ac);
                          if (gw) {
                            (*gw)[c] += gkj * ac;
                            (*gw)[d + c] += gkj * bc;
                            (*gw)[2 * d + c] += gkj * ac * bc;
                          }
                        }
                      }
                  });
}

template <typename Real>
Var hinge_loss(Tape<Real>& t, Var scores, std::size_t truth, Real margin) {
  const auto& s = t.value(scores);
  if (s.size() < 2) throw std::invalid_argument("hinge_loss: need at least two candidates");
  if (truth >= s.size()) {
    throw std::invalid_argument("hinge_loss: truth index " + std::to_string(truth) +
                                " out of " + std::to_string(s.size()));
  }
  Real total = 0;
  std::vector<bool> active(s.size(), false);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i == truth) continue;
    const Real h = s[i] - s[truth] + margin;
    if (h > Real{0}) {
      total += h;
      active[i] = true;
    }
  }
  return t.record(Tensor<Real>({1}, std::vector<Real>{total}), {scores},
                  [scores, truth, active](Tape<Real>& tp, const Tensor<Real>& g) {
                    if (auto* gs = tp.grad_slot(scores)) {
                      for (std::size_t i = 0; i < active.size(); ++i) {
                        if (!active[i]) continue;
                        (*gs)[i] += g[0];
                        (*gs)[truth] -= g[0];
                      }
                    }
                  });
}

template <typename Real>
Var cross_entropy(Tape<Real>& t, Var logits, std::size_t label) {
  const auto& z = t.value(logits);
  if (label >= z.size()) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of " + std::to_string(z.size()) + " classes");
  }
  Real hi = *std::max_element(z.data().begin(), z.data().end());
  Real total = 0;
  for (Real v : z.data()) total += std::exp(v - hi);
  const Real lse = hi + std::log(total);
  Tensor<Real> probs(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) probs[i] = std::exp(z[i] - lse);
  return t.record(Tensor<Real>({1}, std::vector<Real>{lse - z[label]}), {logits},
                  [logits, label, probs = std::move(probs)](Tape<Real>& tp,
                                                            const Tensor<Real>& g) {
                    if (auto* gz = tp.grad_slot(logits)) {
                      for (std::size_t i = 0; i < probs.size(); ++i) {
                        (*gz)[i] += g[0] * (probs[i] - (i == label ? Real{1} : Real{0}));
                      }
                    }
                  });
}

#define PESRS_INSTANTIATE_OPS(R)                                                        \
  template Var add<R>(Tape<R>&, Var, Var);                                              \
  template Var sub<R>(Tape<R>&, Var, Var);                                              \
  template Var mul<R>(Tape<R>&, Var, Var);                                              \
  template Var add_n<R>(Tape<R>&, std::span<const Var>);                                \
  template Var scale<R>(Tape<R>&, Var, R);                                              \
  template Var mul_scalar<R>(Tape<R>&, Var, Var);                                       \
  template Var one_minus<R>(Tape<R>&, Var);                                             \
  template Var relu<R>(Tape<R>&, Var);                                                  \
  template Var sigmoid<R>(Tape<R>&, Var);                                               \
  template Var tanh<R>(Tape<R>&, Var);                                                  \
  template Var reshape<R>(Tape<R>&, Var, Shape);                                        \
  template Var concat<R>(Tape<R>&, std::span<const Var>);                               \
  template Var stack<R>(Tape<R>&, std::span<const Var>);                                \
  template Var row<R>(Tape<R>&, Var, std::size_t);                                      \
  template Var transpose<R>(Tape<R>&, Var);                                             \
  template Var matmul<R>(Tape<R>&, Var, Var);                                           \
  template Var matmul_bt<R>(Tape<R>&, Var, Var);                                        \
  template Var add_bias<R>(Tape<R>&, Var, Var);                                         \
  template Var affine<R>(Tape<R>&, Var, Var, Var);                                      \
  template Var sum<R>(Tape<R>&, Var);                                                   \
  template Var masked_mean_rows<R>(Tape<R>&, Var, const Mask&);                         \
  template Var column_max<R>(Tape<R>&, Var, const Mask&, const Mask&);                  \
  template Var row_max<R>(Tape<R>&, Var, const Mask&);                                  \
  template Var masked_softmax<R>(Tape<R>&, Var, const Mask&);                           \
  template Var layer_norm<R>(Tape<R>&, Var, Var, Var, R);                               \
  template Var embedding<R>(Tape<R>&, Var, std::span<const std::uint32_t>);             \
  template Var conv2d<R>(Tape<R>&, Var, Var, Var, std::size_t, std::size_t);            \
  template Var avg_pool<R>(Tape<R>&, Var, std::size_t);                                 \
  template Var global_avg_pool<R>(Tape<R>&, Var);                                       \
  template Var relation_matrix<R>(Tape<R>&, Var, Var, Var, const Mask&);                \
  template Var hinge_loss<R>(Tape<R>&, Var, std::size_t, R);                            \
  template Var cross_entropy<R>(Tape<R>&, Var, std::size_t);

PESRS_INSTANTIATE_OPS(float)
PESRS_INSTANTIATE_OPS(double)

}  // namespace pesrs::ops
