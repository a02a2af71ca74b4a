#pragma once

#include <string>

#include "pesrs/model/encoders.hpp"

namespace pesrs::model {

struct InteractionResult {
  Var q2;     ///< [d]
  Var tau_u;  ///< [T_x], zero at masked words
  Var tau_s;  ///< [p*p]
};

template <typename Real>
void register_interaction(ParamSet<Real>& params, std::size_t dim,
                          const std::string& prefix = "interact");

/// M[k,j] = w . [O_k ; h_j ; O_k * h_j] -> [p*p, T_x]; masked word columns hold
/// the most negative finite value.
template <typename Real>
Var relation_matrix(Tape<Real>& t, const StickerRep& sticker, const UtteranceRep& utt,
                    const std::string& prefix = "interact");

/// Two-way max pooling over M, then
///   l  = sum_j tau_u_j h_j,  r = sum_k tau_s_k O_k
///   Q1 = relu(FC[O_flat ; r ; O_flat*r ; O_flat+r]),  q2 = relu(FC[Q1 ; l])
template <typename Real>
InteractionResult deep_interact(Tape<Real>& t, const StickerRep& sticker,
                                const UtteranceRep& utt, const std::string& prefix = "interact");

}  // namespace pesrs::model
