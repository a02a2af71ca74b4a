#pragma once

#include <string>
#include <vector>

#include "pesrs/core/nn.hpp"
#include "pesrs/data/types.hpp"

namespace pesrs::model {

struct StickerRep {
  Var grid;  ///< O, [p, p, d]
  Var flat;  ///< O_flat, [d]
};

template <typename Real>
StickerRep encode_sticker(Tape<Real>& t, Var image, const nn::ConvStackConfig& cfg,
                          const std::string& prefix = "sticker");

template <typename Real>
void register_emoji_head(ParamSet<Real>& params, std::size_t dim, std::size_t n_emoji,
                         const std::string& prefix = "emoji");
/// Unnormalised logits [n_emoji].
template <typename Real>
Var classify_emoji(Tape<Real>& t, Var flat, const std::string& prefix = "emoji");

struct BlockConfig {
  std::size_t dim = 100;
  std::size_t ffn_dim = 200;
  std::size_t heads = 2;
};

template <typename Real>
void register_transformer_block(ParamSet<Real>& params, const std::string& prefix,
                                const BlockConfig& cfg);

struct BlockOutput {
  Var out;                     ///< [T, d], masked rows zero
  std::vector<Var> attention;  ///< per head, [T, T]
};

/// Single self-attention block:
///   alpha = softmax_k(Q_j . K_k) over unmasked k, per head
///   h_hat = Dropout(x + concat_heads(alpha V))
///   h     = LayerNorm(relu(h_hat W1 + b1) W2 + b2 + h_hat)
template <typename Real>
BlockOutput transformer_block(Tape<Real>& t, Var x, const Mask& mask, const std::string& prefix,
                              std::size_t heads, const nn::Dropout& drop = {});

struct UtteranceRep {
  Var hidden;  ///< [T_x, d], zero at masked words
  Mask mask;
  std::vector<Var> attention;
};

template <typename Real>
void register_utterance_encoder(ParamSet<Real>& params, std::size_t vocab_size,
                                const BlockConfig& cfg, const std::string& embedding = "embedding",
                                const std::string& block = "utterance");

/// Embedding plus sinusoidal positions, then one transformer block.
/// Throws data::DataError for token ids outside the embedding table.
template <typename Real>
UtteranceRep encode_utterance(Tape<Real>& t, const data::Utterance& utt, std::size_t heads,
                              const nn::Dropout& drop = {},
                              const std::string& embedding = "embedding",
                              const std::string& block = "utterance");

}  // namespace pesrs::model
