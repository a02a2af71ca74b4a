#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pesrs/core/tape.hpp"

// Differentiable primitives. Each op computes its forward value eagerly and
// records an exact analytic backward on the tape. Matrix ops treat a tensor
// as [rows, cols] where cols is the trailing extent; a rank-1 tensor is a
// single row.
namespace pesrs::ops {

template <typename Real> Var add(Tape<Real>& t, Var a, Var b);
template <typename Real> Var sub(Tape<Real>& t, Var a, Var b);
template <typename Real> Var mul(Tape<Real>& t, Var a, Var b);
template <typename Real> Var add_n(Tape<Real>& t, std::span<const Var> xs);
template <typename Real> Var scale(Tape<Real>& t, Var a, Real factor);
/// a * s where s holds a single element.
template <typename Real> Var mul_scalar(Tape<Real>& t, Var a, Var s);
/// 1 - a, elementwise.
template <typename Real> Var one_minus(Tape<Real>& t, Var a);

template <typename Real> Var relu(Tape<Real>& t, Var a);
template <typename Real> Var sigmoid(Tape<Real>& t, Var a);
template <typename Real> Var tanh(Tape<Real>& t, Var a);

template <typename Real> Var reshape(Tape<Real>& t, Var a, Shape shape);
/// Concatenation along the trailing axis; all inputs share the row count.
template <typename Real> Var concat(Tape<Real>& t, std::span<const Var> xs);
/// Stacks equally sized rank-1 tensors into [n, d].
template <typename Real> Var stack(Tape<Real>& t, std::span<const Var> rows);
/// Row `i` of a matrix as a rank-1 tensor.
template <typename Real> Var row(Tape<Real>& t, Var a, std::size_t i);
template <typename Real> Var transpose(Tape<Real>& t, Var a);

/// [n,k] x [k,m] -> [n,m]; a rank-1 `a` yields a rank-1 result.
template <typename Real> Var matmul(Tape<Real>& t, Var a, Var b);
/// [n,k] x [m,k]^T -> [n,m].
template <typename Real> Var matmul_bt(Tape<Real>& t, Var a, Var b);
/// Adds a rank-1 bias of width cols to every row.
template <typename Real> Var add_bias(Tape<Real>& t, Var x, Var bias);
/// x W + b. `bias` may be invalid for a bias-free map.
template <typename Real> Var affine(Tape<Real>& t, Var x, Var weight, Var bias);

template <typename Real> Var sum(Tape<Real>& t, Var a);
/// Mean over rows whose mask entry is true -> [cols]. Requires one true row.
template <typename Real> Var masked_mean_rows(Tape<Real>& t, Var x, const Mask& row_mask);
/// For each column j: max over rows with row_mask true (all rows if empty).
/// Columns with col_mask false (when given) are exactly 0.
template <typename Real>
Var column_max(Tape<Real>& t, Var x, const Mask& row_mask, const Mask& col_mask);
/// For each row: max over columns with col_mask true (all if empty).
template <typename Real> Var row_max(Tape<Real>& t, Var x, const Mask& col_mask);

/// Row-wise softmax restricted to columns with mask true; masked columns
/// are exactly 0. Throws std::domain_error if every column is masked.
template <typename Real> Var masked_softmax(Tape<Real>& t, Var scores, const Mask& col_mask);
/// Row-wise layer normalisation with learned gain and bias.
template <typename Real>
Var layer_norm(Tape<Real>& t, Var x, Var gain, Var bias, Real eps = Real(1e-6));

/// Gathers rows of `table` ([V, d]) -> [ids.size(), d].
template <typename Real>
Var embedding(Tape<Real>& t, Var table, std::span<const std::uint32_t> ids);

/// 2-D convolution over an [H, W, C] map with kernel [kh, kw, C, O], zero
/// padding, and per-output-channel bias.
template <typename Real>
Var conv2d(Tape<Real>& t, Var image, Var kernel, Var bias, std::size_t stride,
           std::size_t pad);
/// Non-overlapping average pooling with a square window.
template <typename Real> Var avg_pool(Tape<Real>& t, Var image, std::size_t window);
/// [H, W, C] -> [C].
template <typename Real> Var global_avg_pool(Tape<Real>& t, Var image);

/// M[k,j] = w . [a_k ; b_j ; a_k * b_j] for a [P,d], b [T,d], w [3d].
/// Columns whose mask entry is false hold the most negative finite value and
/// carry no gradient.
template <typename Real>
Var relation_matrix(Tape<Real>& t, Var a, Var b, Var w, const Mask& col_mask);

/// sum over i != truth of max(0, s_i - s_truth + margin) -> [1].
template <typename Real>
Var hinge_loss(Tape<Real>& t, Var scores, std::size_t truth, Real margin);
/// -log softmax(logits)[label] -> [1].
template <typename Real>
Var cross_entropy(Tape<Real>& t, Var logits, std::size_t label);

}  // namespace pesrs::ops
