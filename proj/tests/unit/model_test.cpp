#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pesrs/core/gradcheck.hpp"
#include "pesrs/data/synthetic.hpp"
#include "pesrs/model/model.hpp"
#include "tiny.hpp"

using namespace pesrs;
using namespace pesrs::model;
using namespace pesrs::fixture;

namespace {

data::Utterance utterance(std::vector<data::TokenId> ids, std::size_t max_len) {
  return data::pad_or_truncate(ids, max_len);
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

// ---- encoders

TEST(TransformerBlock, ShapeMaskAndAttentionRows) {
  ParamSet<double> p;
  register_transformer_block<double>(p, "b", {8, 16, 2});
  randomize(p, 3);
  std::mt19937_64 rng(5);
  Tape<double> t(p);
  Var x = t.constant(random_tensor({6, 8}, rng));
  const Mask mask{true, true, true, true, false, false};
  auto out = transformer_block(t, x, mask, "b", 2);
  ASSERT_EQ(t.shape(out.out), (Shape{6, 8}));
  ASSERT_EQ(out.attention.size(), 2u);
  for (std::size_t r = 4; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(t.value(out.out).at(r, c), 0.0);
  for (Var a : out.attention) {
    const auto& v = t.value(a);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 6; ++c) s += v.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
      EXPECT_EQ(v.at(r, 4), 0.0);
      EXPECT_EQ(v.at(r, 5), 0.0);
    }
  }
}

TEST(TransformerBlock, SingleKeyReducesToValuePath) {
  ParamSet<double> p;
  register_transformer_block<double>(p, "b", {4, 6, 2});
  randomize(p, 11);
  std::mt19937_64 rng(2);
  const auto xv = random_tensor({1, 4}, rng);
  Tape<double> t(p);
  auto out = transformer_block(t, t.constant(xv), Mask{true}, "b", 2);
  for (Var a : out.attention) EXPECT_EQ(t.value(a)[0], 1.0);

  // hand-rolled: h = x + [V0(x) ; V1(x)], y = LN(ffn(h) + h)
  auto lin = [&](const std::vector<double>& in, const std::string& name) {
    const auto& w = p.value(name + ".weight");
    const auto& b = p.value(name + ".bias");
    std::vector<double> o(w.dim(1));
    for (std::size_t j = 0; j < o.size(); ++j) {
      o[j] = b[j];
      for (std::size_t i = 0; i < in.size(); ++i) o[j] += in[i] * w.at(i, j);
    }
    return o;
  };
  std::vector<double> x(xv.data().begin(), xv.data().end());
  auto v0 = lin(x, "b.head0.v"), v1 = lin(x, "b.head1.v");
  std::vector<double> h(4);
  for (std::size_t i = 0; i < 2; ++i) {
    h[i] = x[i] + v0[i];
    h[i + 2] = x[i + 2] + v1[i];
  }
  auto f = lin(h, "b.ffn1");
  for (auto& z : f) z = std::max(0.0, z);
  auto y = lin(f, "b.ffn2");
  for (std::size_t i = 0; i < 4; ++i) y[i] += h[i];
  double mu = 0, var = 0;
  for (double z : y) mu += z / 4;
  for (double z : y) var += (z - mu) * (z - mu) / 4;
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = p.value("b.norm.gain")[i] * (y[i] - mu) / std::sqrt(var + 1e-6) +
                          p.value("b.norm.bias")[i];
    EXPECT_NEAR(t.value(out.out)[i], expect, 1e-12);
  }
}

TEST(TransformerBlock, HeadsMustDivideWidth) {
  ParamSet<double> p;
  EXPECT_THROW(register_transformer_block<double>(p, "b", {10, 8, 3}), ConfigError);
}

TEST(UtteranceEncoder, PadIdsDoNotMatterButOrderDoes) {
  ParamSet<double> p;
  register_utterance_encoder<double>(p, 20, {8, 16, 2});
  randomize(p, 4);
  auto u = utterance({5, 6, 7}, 6);
  auto run = [&](const data::Utterance& utt) {
    Tape<double> t(p);
    auto rep = encode_utterance(t, utt, 2);
    EXPECT_EQ(rep.mask, utt.mask);
    return t.value(rep.hidden);
  };
  const auto base = run(u);
  ASSERT_EQ(base.shape(), (Shape{6, 8}));
  for (std::size_t r = 3; r < 6; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(base.at(r, c), 0.0);

  auto junk = u;
  junk.tokens[4] = 13;
  junk.tokens[5] = 19;
  EXPECT_EQ(max_abs_diff(base, run(junk)), 0.0);

  auto swapped = u;
  std::swap(swapped.tokens[0], swapped.tokens[2]);
  EXPECT_GT(max_abs_diff(base, run(swapped)), 1e-6);
}

TEST(UtteranceEncoder, RejectsOutOfVocabularyIds) {
  ParamSet<double> p;
  register_utterance_encoder<double>(p, 10, {8, 16, 2});
  Tape<double> t(p);
  EXPECT_THROW(encode_utterance(t, utterance({3, 10}, 4), 2), data::DataError);
}

TEST(UtteranceEncoder, GradCheck) {
  ParamSet<double> p;
  register_utterance_encoder<double>(p, 7, {4, 6, 2});
  randomize(p, 8);
  const auto u = utterance({2, 5, 3}, 4);
  auto report = grad_check(
      [&](Tape<double>& t) {
        auto rep = encode_utterance(t, u, 2);
        return ops::sum(t, ops::mul(t, rep.hidden, rep.hidden));
      },
      p);
  EXPECT_TRUE(report.passed) << report.failure;
}

TEST(StickerEncoder, ShapesPurityAndGradCheck) {
  nn::ConvStackConfig cfg{16, 3, 3, 4, 6, 2};
  ParamSet<double> p;
  nn::register_conv_stack(p, "sticker", cfg);
  randomize(p, 9, 0.3);
  std::mt19937_64 rng(1);
  const auto img = random_tensor({16, 16, 3}, rng);
  Tape<double> t(p);
  auto a = encode_sticker(t, t.constant(img), cfg);
  auto b = encode_sticker(t, t.constant(img), cfg);
  EXPECT_EQ(t.shape(a.grid), (Shape{2, 2, 6}));
  EXPECT_EQ(t.shape(a.flat), (Shape{6}));
  EXPECT_EQ(max_abs_diff(t.value(a.flat), t.value(b.flat)), 0.0);
  EXPECT_EQ(max_abs_diff(t.value(a.grid), t.value(b.grid)), 0.0);

  auto report = grad_check(
      [&](Tape<double>& tt) { return ops::sum(tt, encode_sticker(tt, tt.constant(img), cfg).flat); },
      p);
  EXPECT_TRUE(report.passed) << report.failure;
}

TEST(EmojiHead, ZeroWeightsGiveZeroLogits) {
  ParamSet<double> p;
  register_emoji_head<double>(p, 64, 10);
  std::mt19937_64 rng(3);
  Tape<double> t(p);
  Var logits = classify_emoji(t, t.constant(random_tensor({64}, rng)));
  ASSERT_EQ(t.shape(logits), (Shape{10}));
  for (double v : t.value(logits).data()) EXPECT_EQ(v, 0.0);
}

// ---- interaction

namespace {

struct InteractFixture {
  ParamSet<double> p;
  Tensor<double> grid, flat, hidden;
  Mask mask{true, true, false};

  InteractFixture() {
    register_interaction<double>(p, 4);
    randomize(p, 21);
    std::mt19937_64 rng(22);
    grid = random_tensor({2, 2, 4}, rng);
    flat = random_tensor({4}, rng);
    hidden = random_tensor({3, 4}, rng);
    for (std::size_t c = 0; c < 4; ++c) hidden.at(2, c) = 0.0;
  }
  std::pair<StickerRep, UtteranceRep> reps(Tape<double>& t) const {
    return {StickerRep{t.constant(grid), t.constant(flat)},
            UtteranceRep{t.constant(hidden), mask, {}}};
  }
  double m(std::size_t k, std::size_t j) const {
    const auto& w = p.value("interact.relation");
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      const double o = grid[k * 4 + c], h = hidden.at(j, c);
      s += w[c] * o + w[4 + c] * h + w[8 + c] * o * h;
    }
    return s;
  }
};

}  // namespace

TEST(Interaction, RelationMatrixMatchesScalarOracle) {
  InteractFixture f;
  Tape<double> t(f.p);
  auto [s, u] = f.reps(t);
  const auto& m = t.value(relation_matrix(t, s, u));
  ASSERT_EQ(m.shape(), (Shape{4, 3}));
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(m.at(k, j), f.m(k, j), 1e-12);
    EXPECT_EQ(m.at(k, 2), std::numeric_limits<double>::lowest());
  }
}

TEST(Interaction, PoolingMatchesBruteForce) {
  InteractFixture f;
  Tape<double> t(f.p);
  auto [s, u] = f.reps(t);
  auto r = deep_interact(t, s, u);
  const auto& tau_u = t.value(r.tau_u);
  const auto& tau_s = t.value(r.tau_s);
  for (std::size_t j = 0; j < 2; ++j) {
    double best = f.m(0, j);
    for (std::size_t k = 1; k < 4; ++k) best = std::max(best, f.m(k, j));
    EXPECT_NEAR(tau_u[j], best, 1e-12);
  }
  EXPECT_EQ(tau_u[2], 0.0);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(tau_s[k], std::max(f.m(k, 0), f.m(k, 1)), 1e-12);
  }
  EXPECT_EQ(t.shape(r.q2), (Shape{4}));
  for (double v : t.value(r.q2).data()) EXPECT_GE(v, 0.0);
}

TEST(Interaction, ZeroRelationWeightsGiveZeroPooling) {
  InteractFixture f;
  f.p.value("interact.relation").fill(0.0);
  Tape<double> t(f.p);
  auto [s, u] = f.reps(t);
  auto r = deep_interact(t, s, u);
  for (double v : t.value(r.tau_u).data()) EXPECT_EQ(v, 0.0);
  for (double v : t.value(r.tau_s).data()) EXPECT_EQ(v, 0.0);
}

TEST(Interaction, SingleWordPoolsToThatColumn) {
  InteractFixture f;
  f.mask = {true, false, false};
  Tape<double> t(f.p);
  auto [s, u] = f.reps(t);
  auto r = deep_interact(t, s, u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(t.value(r.tau_s)[k], f.m(k, 0), 1e-12);
}

TEST(Interaction, GradCheck) {
  InteractFixture f;
  auto report = grad_check(
      [&](Tape<double>& t) {
        auto [s, u] = f.reps(t);
        return ops::sum(t, deep_interact(t, s, u).q2);
      },
      f.p);
  EXPECT_TRUE(report.passed) << report.failure;
}

// ---- memory

namespace {

struct MemoryFixture {
  MemoryConfig cfg{4, 2, 3, true, false};
  ParamSet<double> p;
  std::vector<Tensor<double>> ctx, stk;

  explicit MemoryFixture(std::size_t n) {
    register_memory<double>(p, cfg);
    randomize(p, 31);
    std::mt19937_64 rng(32);
    for (std::size_t k = 0; k < n; ++k) {
      ctx.push_back(random_tensor({4}, rng));
      stk.push_back(random_tensor({4}, rng));
    }
  }
  PreferenceMemory build(Tape<double>& t) const {
    std::vector<Var> c, s;
    for (std::size_t k = 0; k < ctx.size(); ++k) {
      c.push_back(t.constant(ctx[k]));
      s.push_back(t.constant(stk[k]));
    }
    return encode_history<double>(t, c, s, cfg);
  }
};

}  // namespace

TEST(Memory, SingleSlotTakesAllWeight) {
  MemoryFixture f(1);
  Tape<double> t(f.p);
  auto mem = f.build(t);
  std::mt19937_64 rng(4);
  auto r = memory_read(t, t.constant(random_tensor({4}, rng)), mem);
  const auto& w = t.value(r.weights);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_EQ(w[2], 0.0);
  EXPECT_EQ(max_abs_diff(t.value(r.r_pref), t.value(ops::row(t, mem.values, 0))), 0.0);
}

TEST(Memory, ZeroAddressGivesUniformWeights) {
  MemoryFixture f(2);
  f.p.value("memory.address").fill(0.0);
  Tape<double> t(f.p);
  auto mem = f.build(t);
  std::mt19937_64 rng(4);
  auto r = memory_read(t, t.constant(random_tensor({4}, rng)), mem);
  EXPECT_NEAR(t.value(r.weights)[0], 0.5, 1e-15);
  EXPECT_NEAR(t.value(r.weights)[1], 0.5, 1e-15);
  EXPECT_EQ(t.value(r.weights)[2], 0.0);
}

TEST(Memory, ReadsMatchDefinitions) {
  MemoryFixture f(3);
  f.cfg.max_history = 4;
  f.p = ParamSet<double>();
  register_memory<double>(f.p, f.cfg);
  randomize(f.p, 33);
  std::mt19937_64 rng(7);
  const auto q = random_tensor({4}, rng);
  Tape<double> t(f.p);
  auto mem = f.build(t);
  const auto& keys = t.value(mem.keys);
  const auto& vals = t.value(mem.values);
  const auto& w = f.p.value("memory.address");
  auto softmax_read = [&](const Tensor<double>& against) {
    std::vector<double> s(3);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) s[k] += q[i] * w.at(i, j) * against.at(k, j);
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (auto& v : s) z += (v = std::exp(v - m));
    std::vector<double> r(4);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < 4; ++j) r[j] += s[k] / z * vals.at(k, j);
    return r;
  };
  auto full = memory_read(t, t.constant(q), mem);
  auto weighted = weighted_read(t, t.constant(q), mem);
  auto avg = average_read(t, mem);
  const auto expect_full = softmax_read(keys);
  const auto expect_weighted = softmax_read(vals);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(t.value(full.r_pref)[j], expect_full[j], 1e-12);
    EXPECT_NEAR(t.value(weighted.r_pref)[j], expect_weighted[j], 1e-12);
    EXPECT_NEAR(t.value(avg.r_pref)[j], (vals.at(0, j) + vals.at(1, j) + vals.at(2, j)) / 3, 1e-12);
  }
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(keys.at(3, j), 0.0);
    EXPECT_EQ(vals.at(3, j), 0.0);
  }
}

TEST(Memory, EmptyHistoryReadsZero) {
  MemoryFixture f(0);
  Tape<double> t(f.p);
  auto mem = f.build(t);
  std::mt19937_64 rng(4);
  for (auto r : {memory_read(t, t.constant(random_tensor({4}, rng)), mem), average_read(t, mem)}) {
    EXPECT_TRUE(r.no_history);
    for (double v : t.value(r.r_pref).data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Memory, GruKeysMatchScalarRecurrence) {
  // d=1, position width 1: the first key is one GRU step from zero.
  MemoryConfig cfg{1, 1, 2, true, false};
  ParamSet<double> p;
  register_memory<double>(p, cfg);
  randomize(p, 41);
  Tape<double> t(p);
  Tensor<double> c({1}), s({1});
  c[0] = 0.7;
  s[0] = -0.4;
  std::vector<Var> cv{t.constant(c)}, sv{t.constant(s)};
  auto mem = encode_history<double>(t, cv, sv, cfg);
  auto v = [&](const std::string& n, std::size_t i = 0) { return p.value("memory.key_gru." + n)[i]; };
  const double tk = p.value("memory.position")[0];
  auto sig = [](double x) { return 1 / (1 + std::exp(-x)); };
  // inputs are [t_k ; h̄]
  const double z = sig(tk * v("wz", 0) + 0.7 * v("wz", 1) + v("bz"));
  const double n = std::tanh(tk * v("wn", 0) + 0.7 * v("wn", 1) + v("bn"));
  EXPECT_NEAR(t.value(mem.keys)[0], (1 - z) * n, 1e-12);
}

TEST(Memory, PositionAblationDropsExactlyTwoGrusAndTable) {
  MemoryConfig full{6, 3, 5, true, false};
  MemoryConfig bare = full;
  bare.position_aware = false;
  ParamSet<double> a, b;
  register_memory<double>(a, full);
  register_memory<double>(b, bare);
  const std::size_t gru = 3 * ((6 + 3) * 6 + 6 * 6 + 6);
  EXPECT_EQ(a.element_count() - b.element_count(), 2 * gru + 5 * 3);
}

TEST(MostSelected, ModalStickerWithRecencyTieBreak) {
  const std::vector<data::StickerId> h{3, 5, 3, 5, 7};
  EXPECT_EQ(most_selected(h), 5u);
  const std::vector<data::StickerId> h2{3, 3, 5};
  EXPECT_EQ(most_selected(h2), 3u);
  EXPECT_FALSE(most_selected(std::vector<data::StickerId>{}).has_value());
  const std::vector<data::StickerId> cands{7, 3, 5, 9};
  auto s = most_selected_scores(h, cands);
  EXPECT_GT(s[2], s[1]);
  EXPECT_GT(s[1], s[0]);
  EXPECT_GT(s[0], s[3]);
  EXPECT_EQ(s[3], 0.0);
}

// ---- fusion

TEST(Fusion, SumultiMatchesDefinition) {
  ParamSet<double> p;
  register_fusion<double>(p, {{2, 4, 1}, ShortFusion::Gru});
  auto& w = p.value("fusion.sumulti.weight");
  auto& b = p.value("fusion.sumulti.bias");
  w.fill(0.0);
  b.fill(0.0);
  // out_0 = (ĝ0-g0)^2 - ĝ1*g1 ; out_1 = ĝ0*g0
  w.at(0, 0) = 1;
  w.at(3, 0) = -1;
  w.at(2, 1) = 1;
  Tensor<double> g({1, 2}), gh({1, 2});
  g[0] = 1; g[1] = 2;
  gh[0] = 3; gh[1] = 0.5;
  Tape<double> t(p);
  const auto& out = t.value(sumulti_combine(t, t.constant(g), t.constant(gh)));
  EXPECT_DOUBLE_EQ(out[0], 4 - 1);
  EXPECT_DOUBLE_EQ(out[1], 3);
  gh[1] = 4;  // 4 - 8 < 0 -> relu
  Tape<double> t2(p);
  EXPECT_EQ(t2.value(sumulti_combine(t2, t2.constant(g), t2.constant(gh)))[0], 0.0);
}

TEST(Fusion, MatchVectorStopsAtLastRealRow) {
  ParamSet<double> p;
  register_fusion<double>(p, {{4, 8, 2}, ShortFusion::Gru});
  randomize(p, 51);
  std::mt19937_64 rng(52);
  const auto rows = random_tensor({10, 4}, rng);
  Mask mask(10, false);
  for (std::size_t i = 0; i < 7; ++i) mask[i] = true;
  Tape<double> t(p);
  Var full = match_vector(t, t.constant(rows), mask);
  Var h = t.constant(Tensor<double>({4}));
  for (std::size_t i = 0; i < 7; ++i)
    h = nn::gru_cell(t, ops::row(t, t.constant(rows), i), h, "fusion.match_gru");
  EXPECT_EQ(max_abs_diff(t.value(full), t.value(h)), 0.0);

  Var g = fuse_short(t, t.constant(rows), mask);
  for (std::size_t r = 7; r < 10; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(t.value(g).at(r, c), 0.0);
}

TEST(Fusion, GateAndScoreStayInsideUnitInterval) {
  ParamSet<double> p;
  register_fusion<double>(p, {{4, 8, 2}, ShortFusion::Gru});
  std::mt19937_64 rng(61);
  Tape<double> t0(p);
  auto zero = gated_score(t0, t0.constant(random_tensor({4}, rng)), t0.constant(Tensor<double>({4})));
  EXPECT_EQ(t0.value(zero.gate)[0], 0.5);
  EXPECT_EQ(t0.value(zero.y_hat)[0], 0.5);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    randomize(p, seed, 0.5);
    Tape<double> t(p);
    auto s = gated_score(t, t.constant(random_tensor({4}, rng)),
                         t.constant(random_tensor({4}, rng)));
    const double g = t.value(s.gate)[0], y = t.value(s.y_hat)[0];
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
    EXPECT_GT(y, 0.0);
    EXPECT_LT(y, 1.0);
    // the blend lies between g̃ and the projected preference
    Var m = t.constant(random_tensor({4}, rng));
    auto s2 = gated_score(t, m, t.constant(random_tensor({4}, rng)));
    for (std::size_t j = 0; j < 4; ++j) {
      const double a = t.value(m)[j], b = t.value(s2.r_used)[j], v = t.value(s2.blend)[j];
      EXPECT_LE(v, std::max(a, b) + 1e-12);
      EXPECT_GE(v, std::min(a, b) - 1e-12);
    }
  }
}

TEST(Fusion, AttentionShortPathKeepsShape) {
  ParamSet<double> p;
  register_fusion<double>(p, {{4, 8, 2}, ShortFusion::Transformer});
  EXPECT_FALSE(p.contains("fusion.short_gru.wz"));
  randomize(p, 71);
  std::mt19937_64 rng(72);
  Tape<double> t(p);
  const Mask mask{true, true, false};
  Var g = fuse_short_attention(t, t.constant(random_tensor({3, 4}, rng)), mask, 2);
  EXPECT_EQ(t.shape(g), (Shape{3, 4}));
}

// ---- whole model

namespace {

struct ModelFixture {
  data::SyntheticDataset syn = data::gen_synthetic(tiny_spec(), 5);
  std::vector<Tensor<double>> images = sticker_tensors<double>(syn.dataset.stickers);

  std::vector<double> scores(const ModelConfig& cfg, const data::Sample& s, std::uint64_t seed = 3) {
    PesrsModel<double> m(cfg);
    auto p = m.make_params(seed);
    randomize(p, seed);
    Tape<double> t(p);
    return m.forward(t, s, images).score_values;
  }
  const data::Sample& with_history() const {
    for (const auto& s : syn.dataset.samples)
      if (!s.history.empty()) return s;
    throw std::logic_error("no sample with history");
  }
};

}  // namespace

TEST(Model, ScoresAreProbabilitiesAndFlagsNoHistory) {
  ModelFixture f;
  auto cfg = tiny_config(f.syn.dataset);
  PesrsModel<double> m(cfg);
  auto p = m.make_params(1);
  for (const auto& s : f.syn.dataset.samples) {
    Tape<double> t(p);
    auto r = m.forward(t, s, f.images);
    ASSERT_EQ(r.score_values.size(), 10u);
    EXPECT_EQ(r.no_history, s.history.empty());
    EXPECT_EQ(r.emoji_logits.size(), 10u);
    for (double v : r.score_values) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Model, WithoutPreferenceMemoryIgnoresHistory) {
  ModelFixture f;
  auto cfg = tiny_config(f.syn.dataset);
  cfg.ablation.no_upm = true;
  const auto& s = f.with_history();
  auto changed = s;
  changed.history.clear();
  std::fill(changed.history_mask.begin(), changed.history_mask.end(), false);
  auto other = s;
  other.history[0].sticker = (other.history[0].sticker + 1) % f.syn.dataset.stickers.size();
  const auto base = f.scores(cfg, s);
  EXPECT_EQ(base, f.scores(cfg, changed));
  EXPECT_EQ(base, f.scores(cfg, other));

  cfg.ablation.no_upm = false;
  EXPECT_NE(f.scores(cfg, s), f.scores(cfg, other));
}

TEST(Model, AblationsRunAndKeepContract) {
  ModelFixture f;
  const auto& s = f.with_history();
  for (const char* flags : {"no_din", "no_fr", "fr2t", "no_tar", "no_classify"}) {
    auto cfg = tiny_config(f.syn.dataset);
    cfg.ablation = Ablations::parse(flags);
    auto v = f.scores(cfg, s);
    ASSERT_EQ(v.size(), 10u) << flags;
    for (double x : v) EXPECT_TRUE(x > 0 && x < 1) << flags;
  }
  for (auto variant : {MemoryVariant::AverageMem, MemoryVariant::WeightedMem}) {
    auto cfg = tiny_config(f.syn.dataset);
    cfg.memory = variant;
    EXPECT_EQ(f.scores(cfg, s).size(), 10u);
  }
}

TEST(Model, MostSelectedAbstainsWithoutHistory) {
  ModelFixture f;
  auto cfg = tiny_config(f.syn.dataset);
  cfg.memory = MemoryVariant::MostSelected;
  PesrsModel<double> m(cfg);
  auto p = m.make_params(1);
  for (const auto& s : f.syn.dataset.samples) {
    Tape<double> t(p);
    auto r = m.forward(t, s, f.images);
    EXPECT_EQ(r.abstain, s.history.empty());
  }
}

TEST(Model, InitialisationFollowsParameterKinds) {
  ModelFixture f;
  auto cfg = tiny_config(f.syn.dataset);
  PesrsModel<double> m(cfg);
  auto p = m.make_params(9);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& name = p.name(i);
    const auto& v = p.value(i).data();
    if (name.find(".norm.gain") != std::string::npos) {
      for (double x : v) EXPECT_EQ(x, 1.0);
    } else if (name.find(".norm.bias") != std::string::npos ||
               (name.rfind("sticker.conv", 0) == 0 && name.find(".bias") != std::string::npos)) {
      for (double x : v) EXPECT_EQ(x, 0.0);
    } else if (name.rfind("sticker.conv", 0) != 0) {
      for (double x : v) EXPECT_LE(std::abs(x), cfg.init_clip) << name;
    }
  }
  auto again = m.make_params(9);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p.value(i).data(), again.value(i).data());
}

TEST(Model, CandidateCountMismatchIsConfigError) {
  ModelFixture f;
  auto cfg = tiny_config(f.syn.dataset);
  PesrsModel<double> m(cfg);
  auto p = m.make_params(1);
  auto s = f.syn.dataset.samples[0];
  s.candidates.pop_back();
  Tape<double> t(p);
  EXPECT_THROW(m.forward(t, s, f.images), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  ModelConfig c;
  c.vocab_size = 40;
  c.n_emoji = 3;
  c.dim = 12;
  c.heads = 3;
  c.ablation = Ablations::parse("w/o-DIN,fr2t");
  c.memory = MemoryVariant::WeightedMem;
  const auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(ModelConfig::from_json(R"({"bogus": 1})"), ConfigError);
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Ablations::parse("w/o-everything"), ConfigError);
  EXPECT_THROW(parse_memory_variant("LongestMem"), ConfigError);
}
