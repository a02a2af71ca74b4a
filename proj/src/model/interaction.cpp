#include "pesrs/model/interaction.hpp"

#include <array>

namespace pesrs::model {

template <typename Real>
void register_interaction(ParamSet<Real>& params, std::size_t dim, const std::string& prefix) {
  params.add(prefix + ".relation", {3 * dim});
  nn::register_linear(params, prefix + ".integrate", 4 * dim, dim);
  nn::register_linear(params, prefix + ".q2", 2 * dim, dim);
}

namespace {

template <typename Real>
Var units(Tape<Real>& t, Var grid) {
  const auto& s = t.shape(grid);
  return ops::reshape(t, grid, {s[0] * s[1], s[2]});
}

}  // namespace

template <typename Real>
Var relation_matrix(Tape<Real>& t, const StickerRep& sticker, const UtteranceRep& utt,
                    const std::string& prefix) {
  return ops::relation_matrix(t, units(t, sticker.grid), utt.hidden,
                              t.param(prefix + ".relation"), utt.mask);
}

template <typename Real>
InteractionResult deep_interact(Tape<Real>& t, const StickerRep& sticker,
                                const UtteranceRep& utt, const std::string& prefix) {
  Var o = units(t, sticker.grid);
  Var m = ops::relation_matrix(t, o, utt.hidden, t.param(prefix + ".relation"), utt.mask);
  InteractionResult res;
  res.tau_u = ops::column_max(t, m, Mask{}, utt.mask);
  res.tau_s = ops::row_max(t, m, utt.mask);
  Var l = ops::matmul(t, res.tau_u, utt.hidden);
  Var r = ops::matmul(t, res.tau_s, o);
  const Var flat = sticker.flat;
  const std::array<Var, 4> parts{flat, r, ops::mul(t, flat, r), ops::add(t, flat, r)};
  Var q1 = ops::relu(t, nn::linear(t, ops::concat<Real>(t, parts), prefix + ".integrate"));
  const std::array<Var, 2> q1l{q1, l};
  res.q2 = ops::relu(t, nn::linear(t, ops::concat<Real>(t, q1l), prefix + ".q2"));
  return res;
}

#define PESRS_INSTANTIATE_INTERACTION(R)                                                  \
  template void register_interaction<R>(ParamSet<R>&, std::size_t, const std::string&); \
  template Var relation_matrix<R>(Tape<R>&, const StickerRep&, const UtteranceRep&,     \
                                  const std::string&);                                  \
  template InteractionResult deep_interact<R>(Tape<R>&, const StickerRep&,              \
                                              const UtteranceRep&, const std::string&);

PESRS_INSTANTIATE_INTERACTION(float)
PESRS_INSTANTIATE_INTERACTION(double)

}  // namespace pesrs::model
