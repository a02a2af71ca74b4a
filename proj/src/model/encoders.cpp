#include "pesrs/model/encoders.hpp"

#include <unordered_map>

#include "pesrs/model/config.hpp"

namespace pesrs::model {

template <typename Real>
StickerRep encode_sticker(Tape<Real>& t, Var image, const nn::ConvStackConfig& cfg,
                          const std::string& prefix) {
  auto [grid, flat] = nn::conv_stack(t, image, prefix, cfg);
  return {grid, flat};
}

template <typename Real>
void register_emoji_head(ParamSet<Real>& params, std::size_t dim, std::size_t n_emoji,
                         const std::string& prefix) {
  nn::register_linear(params, prefix, dim, n_emoji);
}

template <typename Real>
Var classify_emoji(Tape<Real>& t, Var flat, const std::string& prefix) {
  return nn::linear(t, flat, prefix);
}

template <typename Real>
void register_transformer_block(ParamSet<Real>& params, const std::string& prefix,
                                const BlockConfig& cfg) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw ConfigError("transformer block " + prefix + ": dim " + std::to_string(cfg.dim) +
                      " not divisible by " + std::to_string(cfg.heads) + " heads");
  }
  const std::size_t width = cfg.dim / cfg.heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string head = prefix + ".head" + std::to_string(h);
    nn::register_linear(params, head + ".q", cfg.dim, width);
    nn::register_linear(params, head + ".k", cfg.dim, width);
    nn::register_linear(params, head + ".v", cfg.dim, width);
  }
  nn::register_linear(params, prefix + ".ffn1", cfg.dim, cfg.ffn_dim);
  nn::register_linear(params, prefix + ".ffn2", cfg.ffn_dim, cfg.dim);
  params.add(prefix + ".norm.gain", {cfg.dim});
  params.add(prefix + ".norm.bias", {cfg.dim});
}

template <typename Real>
BlockOutput transformer_block(Tape<Real>& t, Var x, const Mask& mask, const std::string& prefix,
                              std::size_t heads, const nn::Dropout& drop) {
  if (t.value(x).rows() != mask.size()) {
    throw ShapeError("transformer_block(" + prefix + "): " + std::to_string(mask.size()) +
                     " mask entries for input " + shape_string(t.shape(x)));
  }
  BlockOutput out;
  std::vector<Var> betas;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string head = prefix + ".head" + std::to_string(h);
    Var q = nn::linear(t, x, head + ".q");
    Var k = nn::linear(t, x, head + ".k");
    Var v = nn::linear(t, x, head + ".v");
    Var alpha = ops::masked_softmax(t, ops::matmul_bt(t, q, k), mask);
    out.attention.push_back(alpha);
    betas.push_back(ops::matmul(t, alpha, v));
  }
  Var beta = heads == 1 ? betas.front() : ops::concat<Real>(t, betas);
  Var h_hat = nn::dropout(t, ops::add(t, x, beta), drop);
  Var ffn = nn::linear(t, ops::relu(t, nn::linear(t, h_hat, prefix + ".ffn1")), prefix + ".ffn2");
  Var normed = ops::layer_norm(t, ops::add(t, ffn, h_hat), t.param(prefix + ".norm.gain"),
                               t.param(prefix + ".norm.bias"));
  out.out = nn::mask_rows(t, normed, mask);
  return out;
}

template <typename Real>
void register_utterance_encoder(ParamSet<Real>& params, std::size_t vocab_size,
                                const BlockConfig& cfg, const std::string& embedding,
                                const std::string& block) {
  if (!params.contains(embedding)) params.add(embedding, {vocab_size, cfg.dim});
  register_transformer_block(params, block, cfg);
}

namespace {

template <typename Real>
const Tensor<Real>& positions(std::size_t length, std::size_t dim) {
  thread_local std::unordered_map<std::size_t, Tensor<Real>> cache;
  const std::size_t key = length * 100003 + dim;
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, nn::sinusoidal_positions<Real>(length, dim)).first;
  return it->second;
}

}  // namespace

template <typename Real>
UtteranceRep encode_utterance(Tape<Real>& t, const data::Utterance& utt, std::size_t heads,
                              const nn::Dropout& drop, const std::string& embedding,
                              const std::string& block) {
  Var table = t.param(embedding);
  const auto& tv = t.value(table);
  for (auto id : utt.tokens) {
    if (id >= tv.dim(0)) {
      throw data::DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tv.dim(0)));
    }
  }
  // pad ids never reach the table so their value cannot leak into the output
  std::vector<std::uint32_t> ids(utt.tokens.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = utt.mask[i] ? utt.tokens[i] : data::kPadId;
  Var e = ops::embedding(t, table, std::span<const std::uint32_t>(ids));
  e = ops::add(t, e, t.constant(positions<Real>(ids.size(), tv.dim(1))));
  auto blk = transformer_block(t, e, utt.mask, block, heads, drop);
  return {blk.out, utt.mask, std::move(blk.attention)};
}

#define PESRS_INSTANTIATE_ENCODERS(R)                                                       \
  template StickerRep encode_sticker<R>(Tape<R>&, Var, const nn::ConvStackConfig&,         \
                                        const std::string&);                               \
  template void register_emoji_head<R>(ParamSet<R>&, std::size_t, std::size_t,            \
                                       const std::string&);                                \
  template Var classify_emoji<R>(Tape<R>&, Var, const std::string&);                       \
  template void register_transformer_block<R>(ParamSet<R>&, const std::string&,            \
                                              const BlockConfig&);                         \
  template BlockOutput transformer_block<R>(Tape<R>&, Var, const Mask&, const std::string&, \
                                            std::size_t, const nn::Dropout&);              \
  template void register_utterance_encoder<R>(ParamSet<R>&, std::size_t, const BlockConfig&, \
                                              const std::string&, const std::string&);     \
  template UtteranceRep encode_utterance<R>(Tape<R>&, const data::Utterance&, std::size_t, \
                                            const nn::Dropout&, const std::string&,        \
                                            const std::string&);

PESRS_INSTANTIATE_ENCODERS(float)
PESRS_INSTANTIATE_ENCODERS(double)

}  // namespace pesrs::model
