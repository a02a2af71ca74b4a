#include "pesrs/model/fusion.hpp"

#include <array>

namespace pesrs::model {

template <typename Real>
void register_fusion(ParamSet<Real>& params, const FusionConfig& cfg, const std::string& prefix) {
  const std::size_t d = cfg.block.dim;
  switch (cfg.short_path) {
    case ShortFusion::Gru:
      params.add(prefix + ".g0", {d});
      nn::register_gru(params, prefix + ".short_gru", d, d);
      break;
    case ShortFusion::Transformer:
      register_transformer_block(params, prefix + ".short_attn", cfg.block);
      break;
    case ShortFusion::None:
      break;
  }
  register_transformer_block(params, prefix + ".long", cfg.block);
  nn::register_linear(params, prefix + ".sumulti", 2 * d, d);
  nn::register_gru(params, prefix + ".match_gru", d, d);
  nn::register_linear(params, prefix + ".pref_proj", d, d, false);
  nn::register_linear(params, prefix + ".gate", 2 * d, 1);
  nn::register_linear(params, prefix + ".score", d, 1);
}

namespace {

template <typename Real>
void check_rows(Tape<Real>& t, Var x, const Mask& mask, const char* op) {
  if (t.value(x).rank() != 2 || t.value(x).rows() != mask.size()) {
    throw ShapeError(std::string(op) + ": input " + shape_string(t.shape(x)) + " with " +
                     std::to_string(mask.size()) + " mask entries");
  }
}

/// Runs a GRU over the real rows; returns every state (one per real row).
template <typename Real>
std::vector<Var> run_chain(Tape<Real>& t, Var x, const Mask& mask, Var h,
                           const std::string& gru) {
  std::vector<Var> states;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    h = nn::gru_cell(t, ops::row(t, x, i), h, gru);
    states.push_back(h);
  }
  return states;
}

}  // namespace

template <typename Real>
Var fuse_short(Tape<Real>& t, Var q2_seq, const Mask& mask, const std::string& prefix) {
  check_rows(t, q2_seq, mask, "fuse_short");
  auto states = run_chain(t, q2_seq, mask, t.param(prefix + ".g0"), prefix + ".short_gru");
  Var zero = t.constant(Tensor<Real>({t.value(q2_seq).cols()}));
  std::vector<Var> rows;
  std::size_t next = 0;
  for (bool real : mask) rows.push_back(real ? states[next++] : zero);
  return ops::stack<Real>(t, rows);
}

template <typename Real>
Var fuse_short_attention(Tape<Real>& t, Var q2_seq, const Mask& mask, std::size_t heads,
                         const nn::Dropout& drop, const std::string& prefix) {
  check_rows(t, q2_seq, mask, "fuse_short_attention");
  const auto& s = t.shape(q2_seq);
  Var x = ops::add(t, q2_seq, t.constant(nn::sinusoidal_positions<Real>(s[0], s[1])));
  return transformer_block(t, x, mask, prefix + ".short_attn", heads, drop).out;
}

template <typename Real>
BlockOutput fuse_long(Tape<Real>& t, Var q2_seq, const Mask& mask, std::size_t heads,
                      const nn::Dropout& drop, const std::string& prefix) {
  check_rows(t, q2_seq, mask, "fuse_long");
  return transformer_block(t, q2_seq, mask, prefix + ".long", heads, drop);
}

template <typename Real>
Var sumulti_combine(Tape<Real>& t, Var g, Var g_hat, const std::string& prefix) {
  if (t.shape(g) != t.shape(g_hat)) {
    throw ShapeError("sumulti_combine: " + shape_string(t.shape(g)) + " vs " +
                     shape_string(t.shape(g_hat)));
  }
  Var diff = ops::sub(t, g_hat, g);
  const std::array<Var, 2> parts{ops::mul(t, diff, diff), ops::mul(t, g_hat, g)};
  return ops::relu(t, nn::linear(t, ops::concat<Real>(t, parts), prefix + ".sumulti"));
}

template <typename Real>
Var match_vector(Tape<Real>& t, Var g_bar, const Mask& mask, const std::string& prefix) {
  check_rows(t, g_bar, mask, "match_vector");
  if (count_true(mask) == 0) throw std::invalid_argument("match_vector: no real step");
  Var h0 = t.constant(Tensor<Real>({t.value(g_bar).cols()}));
  return run_chain(t, g_bar, mask, h0, prefix + ".match_gru").back();
}

template <typename Real>
ScoreBreakdown gated_score(Tape<Real>& t, Var match, Var r_pref, const std::string& prefix) {
  ScoreBreakdown out;
  out.r_used = nn::linear(t, r_pref, prefix + ".pref_proj");
  const std::array<Var, 2> parts{out.r_used, match};
  out.gate = ops::sigmoid(t, nn::linear(t, ops::concat<Real>(t, parts), prefix + ".gate"));
  out.blend = ops::add(t, ops::mul_scalar(t, match, out.gate),
                       ops::mul_scalar(t, out.r_used, ops::one_minus(t, out.gate)));
  out.y_hat = ops::sigmoid(t, nn::linear(t, out.blend, prefix + ".score"));
  return out;
}

#define PESRS_INSTANTIATE_FUSION(R)                                                        \
  template void register_fusion<R>(ParamSet<R>&, const FusionConfig&, const std::string&); \
  template Var fuse_short<R>(Tape<R>&, Var, const Mask&, const std::string&);             \
  template Var fuse_short_attention<R>(Tape<R>&, Var, const Mask&, std::size_t,           \
                                       const nn::Dropout&, const std::string&);           \
  template BlockOutput fuse_long<R>(Tape<R>&, Var, const Mask&, std::size_t,              \
                                    const nn::Dropout&, const std::string&);              \
  template Var sumulti_combine<R>(Tape<R>&, Var, Var, const std::string&);                \
  template Var match_vector<R>(Tape<R>&, Var, const Mask&, const std::string&);           \
  template ScoreBreakdown gated_score<R>(Tape<R>&, Var, Var, const std::string&);

PESRS_INSTANTIATE_FUSION(float)
PESRS_INSTANTIATE_FUSION(double)

}  // namespace pesrs::model
