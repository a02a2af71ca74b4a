#pragma once

#include <string>

#include "pesrs/model/encoders.hpp"

namespace pesrs::model {

enum class ShortFusion { Gru, None, Transformer };

struct FusionConfig {
  BlockConfig block;
  ShortFusion short_path = ShortFusion::Gru;
};

template <typename Real>
void register_fusion(ParamSet<Real>& params, const FusionConfig& cfg,
                     const std::string& prefix = "fusion");

/// GRU over the real rows of q2 [T_u, d] from the learned state g0. Output
/// rows at padded utterances are zero.
template <typename Real>
Var fuse_short(Tape<Real>& t, Var q2_seq, const Mask& mask, const std::string& prefix = "fusion");

/// FR2T: sinusoidal positions plus a self-attention block in place of the GRU.
template <typename Real>
Var fuse_short_attention(Tape<Real>& t, Var q2_seq, const Mask& mask, std::size_t heads,
                         const nn::Dropout& drop = {}, const std::string& prefix = "fusion");

template <typename Real>
BlockOutput fuse_long(Tape<Real>& t, Var q2_seq, const Mask& mask, std::size_t heads,
                      const nn::Dropout& drop = {}, const std::string& prefix = "fusion");

/// relu(W [(ĝ-g)*(ĝ-g) ; ĝ*g] + b), row-wise.
template <typename Real>
Var sumulti_combine(Tape<Real>& t, Var g, Var g_hat, const std::string& prefix = "fusion");

/// Second GRU over the real rows from a zero state; returns the last real state.
template <typename Real>
Var match_vector(Tape<Real>& t, Var g_bar, const Mask& mask, const std::string& prefix = "fusion");

struct ScoreBreakdown {
  Var y_hat;   ///< [1]
  Var gate;    ///< [1]
  Var blend;   ///< [d]
  Var r_used;  ///< projected preference vector [d]
};

/// f_g = sigmoid(FC[r ; g̃]),  ŷ = sigmoid(FC(f_g g̃ + (1 - f_g) r)) with r the
/// bias-free projection of r_pref.
template <typename Real>
ScoreBreakdown gated_score(Tape<Real>& t, Var match, Var r_pref,
                           const std::string& prefix = "fusion");

}  // namespace pesrs::model
