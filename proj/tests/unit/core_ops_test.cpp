#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pesrs/core/gradcheck.hpp"
#include "pesrs/core/nn.hpp"

namespace pesrs {
namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor<double> t(std::move(shape));
  for (auto& x : t.data()) x = normal(rng);
  return t;
}

TEST(Linear, ShapeAndValues) {
  ParamSet<double> params;
  nn::register_linear(params, "fc", 2, 2);
  params.value("fc.weight") = Tensor<double>::matrix(2, 2, {2, 3, 4, 5});
  params.value("fc.bias") = Tensor<double>::vector({1, 1});
  Tape<double> t(params);
  Var y = nn::linear(t, t.constant(Tensor<double>::vector({1, 0})), "fc");
  EXPECT_EQ(t.value(y), Tensor<double>::vector({3, 4}));

  ParamSet<double> wide;
  nn::register_linear(wide, "fc", 8, 5);
  wide.init_truncated_normal(1, 0.02, 0.04);
  wide.value("fc.bias").fill(0);
  Tape<double> t2(wide);
  Var batch = nn::linear(t2, t2.constant(Tensor<double>({3, 8})), "fc");
  EXPECT_EQ(t2.shape(batch), (Shape{3, 5}));
  for (double v : t2.value(batch).data()) EXPECT_EQ(v, 0.0);
}

TEST(Linear, DimensionMismatchNamesOperation) {
  ParamSet<double> params;
  nn::register_linear(params, "gate", 4, 2);
  Tape<double> t(params);
  try {
    nn::linear(t, t.constant(Tensor<double>({3})), "gate");
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("linear(gate)"), std::string::npos);
  }
}

TEST(MaskedSoftmax, Examples) {
  ParamSet<double> none;
  Tape<double> t(none);
  auto sm = [&](Tensor<double> v, Mask m) { return t.value(ops::masked_softmax(t, t.constant(v), m)); };

  auto uniform = sm(Tensor<double>::vector({0, 0, 0}), {true, true, true});
  for (double p : uniform.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);

  auto single = sm(Tensor<double>::vector({5, 5}), {true, false});
  EXPECT_EQ(single[0], 1.0);
  EXPECT_EQ(single[1], 0.0);

  // Oracle: exp(i) / sum_j exp(j).
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  auto p = sm(Tensor<double>::vector({1, 2, 3}), {true, true, true});
  EXPECT_NEAR(p[0], std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(p[0], 0.0900, 1e-4);
  EXPECT_NEAR(p[1], 0.2447, 1e-4);
  EXPECT_NEAR(p[2], 0.6652, 1e-4);
}

TEST(MaskedSoftmax, AllMaskedIsAnError) {
  ParamSet<double> none;
  Tape<double> t(none);
  EXPECT_THROW(ops::masked_softmax(t, t.constant(Tensor<double>::vector({1, 2})), {false, false}),
               std::domain_error);
}

TEST(MaskedSoftmax, NormalisedAndShiftInvariant) {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution coin(0.6);
  std::normal_distribution<double> shift_dist(0.0, 10.0);
  ParamSet<double> none;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 12;
    Mask mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = coin(rng);
    mask[trial % n] = true;
    auto logits = random_tensor({n}, rng, 3.0);
    auto shifted = logits;
    const double c = shift_dist(rng);
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i]) shifted[i] += c;
    Tape<double> t(none);
    const auto& p = t.value(ops::masked_softmax(t, t.constant(logits), mask));
    const auto& q = t.value(ops::masked_softmax(t, t.constant(shifted), mask));
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) {
        EXPECT_EQ(p[i], 0.0);
      }
      EXPECT_GE(p[i], 0.0);
      EXPECT_NEAR(p[i], q[i], 1e-6);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

// Independent scalar GRU used as the oracle for gru_cell.
std::vector<double> scalar_gru(const ParamSet<double>& p, const std::string& pre,
                               const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t H = h.size(), I = x.size();
  auto gate = [&](const char* g, std::size_t j, bool with_h) {
    double acc = p.value(pre + ".b" + g)[j];
    for (std::size_t i = 0; i < I; ++i) acc += x[i] * p.value(pre + ".w" + g).at(i, j);
    if (with_h)
      for (std::size_t k = 0; k < H; ++k) acc += h[k] * p.value(pre + ".u" + g).at(k, j);
    return acc;
  };
  std::vector<double> out(H);
  for (std::size_t j = 0; j < H; ++j) {
    const double z = 1.0 / (1.0 + std::exp(-gate("z", j, true)));
    const double r = 1.0 / (1.0 + std::exp(-gate("r", j, true)));
    double hn = 0;
    for (std::size_t k = 0; k < H; ++k) hn += h[k] * p.value(pre + ".un").at(k, j);
    const double n = std::tanh(gate("n", j, false) + r * hn);
    out[j] = (1 - z) * n + z * h[j];
  }
  return out;
}

TEST(GruCell, ZeroParametersGiveZero) {
  ParamSet<double> params;
  nn::register_gru(params, "g", 5, 16);
  Tape<double> t(params);
  std::mt19937_64 rng(3);
  Var h = nn::gru_cell(t, t.constant(random_tensor({5}, rng)), t.constant(Tensor<double>({16})), "g");
  EXPECT_EQ(t.shape(h), Shape{16});
  for (double v : t.value(h).data()) EXPECT_EQ(v, 0.0);
}

TEST(GruCell, MatchesScalarOracle) {
  ParamSet<double> params;
  nn::register_gru(params, "g", 6, 4);
  params.init_truncated_normal(11, 0.5, 1.5);
  std::mt19937_64 rng(5);
  for (int step = 0; step < 5; ++step) {
    auto x = random_tensor({6}, rng);
    auto h = random_tensor({4}, rng, 0.5);
    Tape<double> t(params);
    const auto& got = t.value(nn::gru_cell(t, t.constant(x), t.constant(h), "g"));
    auto want = scalar_gru(params, "g", x.data(), h.data());
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(got[j], want[j], 1e-12);
      EXPECT_GT(got[j], -1.0);
      EXPECT_LT(got[j], 1.0);
    }
  }
}

TEST(GruCell, DimensionMismatch) {
  ParamSet<double> params;
  nn::register_gru(params, "g", 6, 4);
  Tape<double> t(params);
  EXPECT_THROW(nn::gru_cell(t, t.constant(Tensor<double>({5})), t.constant(Tensor<double>({4})), "g"),
               ShapeError);
}

TEST(ConvStack, ShapesAndZeroImage) {
  nn::ConvStackConfig cfg;
  cfg.image_size = 128;
  cfg.in_channels = 3;
  cfg.out_dim = 64;
  cfg.grid = 4;
  ParamSet<double> params;
  nn::register_conv_stack(params, "sticker", cfg);
  params.init_truncated_normal(1, 0.02, 0.04);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params.name(i).ends_with(".bias")) params.value(i).fill(0);
  Tape<double> t(params);
  auto [grid, flat] = nn::conv_stack(t, t.constant(Tensor<double>({128, 128, 3})), "sticker", cfg);
  EXPECT_EQ(t.shape(grid), (Shape{4, 4, 64}));
  EXPECT_EQ(t.shape(flat), Shape{64});
  for (double v : t.value(grid).data()) EXPECT_EQ(v, 0.0);
  for (double v : t.value(flat).data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvStack, WrongImageSize) {
  nn::ConvStackConfig cfg;
  cfg.image_size = 32;
  cfg.in_channels = 1;
  cfg.out_dim = 8;
  cfg.grid = 2;
  ParamSet<double> params;
  nn::register_conv_stack(params, "s", cfg);
  Tape<double> t(params);
  EXPECT_THROW(nn::conv_stack(t, t.constant(Tensor<double>({30, 30, 1})), "s", cfg), ShapeError);
}

TEST(ConvStack, ToyImagePassesGradCheck) {
  nn::ConvStackConfig cfg;
  cfg.image_size = 32;
  cfg.in_channels = 1;
  cfg.stage1 = 3;
  cfg.stage2 = 4;
  cfg.out_dim = 8;
  cfg.grid = 2;
  ParamSet<double> params;
  nn::register_conv_stack(params, "s", cfg);
  params.init_truncated_normal(2, 0.4, 1.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor<double> image({32, 32, 1});
  for (auto& v : image.data()) v = unit(rng);
  auto probe = random_tensor({2, 2, 8}, rng);
  auto probe_flat = random_tensor({8}, rng);
  auto loss = [&](Tape<double>& t) {
    auto [grid, flat] = nn::conv_stack(t, t.constant(image), "s", cfg);
    for (double v : t.value(grid).data()) EXPECT_TRUE(std::isfinite(v));
    Var a = ops::sum(t, ops::mul(t, grid, t.constant(probe)));
    Var b = ops::sum(t, ops::mul(t, flat, t.constant(probe_flat)));
    return ops::add(t, a, b);
  };
  auto report = grad_check(loss, params);
  EXPECT_TRUE(report.passed) << report.failure;
}

TEST(GradCheck, QuadraticLoss) {
  ParamSet<double> params;
  params.add("theta", {7});
  params.init_truncated_normal(4, 1.0, 3.0);
  auto loss = [](Tape<double>& t) {
    Var th = t.param("theta");
    return ops::sum(t, ops::mul(t, th, th));
  };
  GradSet<double> grads(params);
  Tape<double> t(params, &grads);
  t.backward(loss(t));
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_NEAR(grads[0][i], 2 * params.value(0)[i], 1e-15);
  }
  auto report = grad_check(loss, params);
  EXPECT_TRUE(report.passed);
  EXPECT_LE(report.max_rel_error, 1e-8);
}

// Identity forward whose backward doubles the gradient: an injected fault.
Var corrupt(Tape<double>& t, Var x) {
  return t.record(t.value(x), {x}, [x](Tape<double>& tp, const Tensor<double>& g) {
    if (auto* gx = tp.grad_slot(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += 2 * g[i];
  });
}

TEST(GradCheck, DetectsCorruptedBackwardOnExactlyThatParameter) {
  ParamSet<double> params;
  nn::register_linear(params, "a", 3, 3);
  nn::register_linear(params, "b", 3, 1);
  params.init_truncated_normal(8, 0.5, 1.5);
  Tensor<double> x = Tensor<double>::vector({0.3, -0.7, 1.1});
  auto loss = [&](Tape<double>& t) {
    Var h = ops::tanh(t, nn::linear(t, t.constant(x), "a"));
    Var w = corrupt(t, t.param("b.weight"));
    Var y = ops::add_bias(t, ops::matmul(t, h, w), t.param("b.bias"));
    return ops::sum(t, ops::mul(t, y, y));
  };
  auto report = grad_check(loss, params);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.failed_names(), std::vector<std::string>{"b.weight"});
}

TEST(GradCheck, NonFiniteLossReported) {
  ParamSet<double> params;
  params.add("p", {1});
  params.value(0)[0] = -1.0;
  auto loss = [](Tape<double>& t) {
    Var p = t.param("p");
    Tensor<double> v = t.value(p);
    v[0] = std::log(v[0]);
    return t.record(std::move(v), {p}, [](Tape<double>&, const Tensor<double>&) {});
  };
  auto report = grad_check(loss, params);
  EXPECT_FALSE(report.passed);
  EXPECT_FALSE(report.failure.empty());
}

// Randomised gradient checks over each primitive on small shapes.
TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(21);
  ParamSet<double> params;
  params.add("a", {3, 4});
  params.add("b", {3, 4});
  params.add("w", {4, 5});
  params.add("v", {4});
  params.add("s", {1});
  params.add("img", {6, 6, 2});
  params.add("k", {3, 3, 2, 3});
  params.add("kb", {3});
  params.add("table", {7, 4});
  params.add("rw", {12});
  params.init_truncated_normal(3, 0.8, 2.0);
  const Mask rows{true, false, true};
  const Mask cols{true, true, false, true};
  const std::vector<std::uint32_t> ids{2, 5, 2};
  std::vector<Tensor<double>> probes;
  for (int i = 0; i < 24; ++i) probes.push_back(random_tensor({64}, rng));

  auto project = [&](Tape<double>& t, Var x, int which) {
    const std::size_t n = t.value(x).size();
    Tensor<double> probe({n});
    std::copy_n(probes[which].data().begin(), n, probe.data().begin());
    return ops::sum(t, ops::mul(t, ops::reshape(t, x, {n}), t.constant(probe)));
  };

  auto loss = [&](Tape<double>& t) {
    Var a = t.param("a"), b = t.param("b"), w = t.param("w"), v = t.param("v");
    std::vector<Var> terms;
    terms.push_back(project(t, ops::add(t, a, b), 0));
    terms.push_back(project(t, ops::sub(t, a, b), 1));
    terms.push_back(project(t, ops::mul(t, a, b), 2));
    terms.push_back(project(t, ops::mul_scalar(t, a, t.param("s")), 3));
    terms.push_back(project(t, ops::one_minus(t, ops::sigmoid(t, a)), 4));
    terms.push_back(project(t, ops::tanh(t, b), 5));
    terms.push_back(project(t, ops::relu(t, a), 6));
    Var cat_parts[] = {a, b};
    terms.push_back(project(t, ops::concat(t, std::span<const Var>(cat_parts)), 7));
    Var rows_parts[] = {v, ops::row(t, a, 1)};
    terms.push_back(project(t, ops::stack(t, std::span<const Var>(rows_parts)), 8));
    terms.push_back(project(t, ops::transpose(t, a), 9));
    terms.push_back(project(t, ops::affine(t, a, w, Var{}), 10));
    terms.push_back(project(t, ops::matmul_bt(t, a, b), 11));
    terms.push_back(project(t, ops::add_bias(t, a, v), 12));
    terms.push_back(project(t, ops::masked_mean_rows(t, a, rows), 13));
    terms.push_back(project(t, ops::column_max(t, a, rows, cols), 14));
    terms.push_back(project(t, ops::row_max(t, b, cols), 15));
    terms.push_back(project(t, ops::masked_softmax(t, a, cols), 16));
    terms.push_back(project(t, ops::layer_norm(t, a, v, ops::scale(t, v, 0.5)), 17));
    terms.push_back(project(t, ops::embedding(t, t.param("table"), ids), 18));
    Var conv = ops::conv2d(t, t.param("img"), t.param("k"), t.param("kb"), 2, 1);
    terms.push_back(project(t, conv, 19));
    terms.push_back(project(t, ops::avg_pool(t, t.param("img"), 3), 20));
    terms.push_back(project(t, ops::global_avg_pool(t, conv), 21));
    const Mask words{true, false, true, true, true};
    Var rel = ops::relation_matrix(t, a, ops::transpose(t, w), t.param("rw"), words);
    terms.push_back(project(t, ops::row_max(t, rel, words), 22));
    terms.push_back(project(t, ops::column_max(t, rel, Mask{}, words), 23));
    terms.push_back(ops::hinge_loss(t, ops::row(t, a, 0), 1, 0.9));
    terms.push_back(ops::cross_entropy(t, ops::row(t, b, 2), 3));
    return ops::add_n(t, std::span<const Var>(terms));
  };
  auto report = grad_check(loss, params);
  EXPECT_TRUE(report.passed) << report.failure;
}

TEST(Tape, ForwardIsPure) {
  ParamSet<double> params;
  nn::register_gru(params, "g", 3, 3);
  params.init_truncated_normal(5, 0.3, 1.0);
  auto run = [&] {
    Tape<double> t(params);
    Var h = t.constant(Tensor<double>({3}));
    for (int i = 0; i < 4; ++i) h = nn::gru_cell(t, t.constant(Tensor<double>::vector({0.1 * i, 1, -1})), h, "g");
    return t.value(h);
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripAndErrors) {
  ParamSet<float> params;
  params.add("x.weight", {2, 3});
  params.add("x.bias", {3});
  params.init_truncated_normal(1, 0.02, 0.04);
  const auto path = std::filesystem::temp_directory_path() / "pesrs_ckpt_test.bin";
  write_checkpoint(path, make_checkpoint(params, "{\"dim\":3}"));
  auto ckpt = read_checkpoint(path);
  EXPECT_EQ(ckpt.metadata, "{\"dim\":3}");
  ParamSet<float> restored;
  restored.add("x.weight", {2, 3});
  restored.add("x.bias", {3});
  restore_checkpoint(ckpt, restored);
  EXPECT_EQ(restored.value(0), params.value(0));
  EXPECT_EQ(restored.value(1), params.value(1));

  ParamSet<float> wrong;
  wrong.add("x.weight", {3, 2});
  wrong.add("x.bias", {3});
  EXPECT_THROW(restore_checkpoint(ckpt, wrong), CheckpointError);

  {
    std::ofstream bad(path, std::ios::binary);
    bad << "NOTACKPT";
  }
  EXPECT_THROW(read_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(ParamSet, DuplicateNamesRejected) {
  ParamSet<double> params;
  params.add("a", {1});
  EXPECT_THROW(params.add("a", {2}), std::invalid_argument);
  EXPECT_THROW(params.index("missing"), std::out_of_range);
}

}  // namespace
}  // namespace pesrs
