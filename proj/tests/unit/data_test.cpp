#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "pesrs/data/dataset_io.hpp"
#include "pesrs/data/image_io.hpp"
#include "pesrs/data/sampling.hpp"
#include "pesrs/data/stats.hpp"
#include "pesrs/data/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pesrs::data;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("pesrs_data_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir / "images");
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DataConfig toy_config() {
  DataConfig c;
  c.max_words = 6;
  c.max_utterances = 3;
  c.max_history = 2;
  c.n_candidates = 3;
  c.image_size = 8;
  return c;
}

// Writes a tiny hand-made corpus: 4 solid-colour stickers, vocab of 5 words.
fs::path write_toy_corpus(const std::string& name, const std::vector<std::string>& lines) {
  auto dir = scratch_dir(name);
  {
    std::ofstream v(dir / "vocab.txt");
    v << "<pad>\n<unk>\nhello\nthere\ncat\ndog\n";
  }
  for (int i = 0; i < 4; ++i) {
    Image img{8, 8, 3, std::vector<float>(8 * 8 * 3, static_cast<float>(i) / 4.0f)};
    write_png(dir / ("images/" + std::to_string(i) + ".png"), img);
  }
  std::ofstream m(dir / "manifest.jsonl");
  for (const auto& l : lines) m << l << '\n';
  return dir;
}

const char* kGoodLine =
    R"({"context":["hello there","cat"],"candidates":["images/0.png","images/1.png","images/2.png"],)"
    R"("truth_index":1,"history":[{"context":["dog"],"sticker":"images/3.png"}],"user_id":"a"})";

}  // namespace

TEST(PadOrTruncate, ShortInputIsPadded) {
  std::vector<TokenId> raw{5, 6, 7, 8, 9};
  auto u = pad_or_truncate(raw, 30);
  ASSERT_EQ(u.tokens.size(), 30u);
  EXPECT_EQ(u.length(), 5u);
  for (std::size_t i = 5; i < 30; ++i) {
    EXPECT_EQ(u.tokens[i], kPadId);
    EXPECT_FALSE(u.mask[i]);
  }
}

TEST(PadOrTruncate, LongInputKeepsFirstWords) {
  std::vector<TokenId> raw(40);
  for (std::size_t i = 0; i < 40; ++i) raw[i] = static_cast<TokenId>(i + 2);
  auto u = pad_or_truncate(raw, 30);
  EXPECT_EQ(u.length(), 30u);
  EXPECT_EQ(u.tokens.front(), 2u);
  EXPECT_EQ(u.tokens.back(), 31u);
}

TEST(PadOrTruncate, EmptyInputAllPad) {
  auto u = pad_or_truncate({}, 30);
  EXPECT_EQ(u.length(), 0u);
  EXPECT_EQ(u.tokens, std::vector<TokenId>(30, kPadId));
}

TEST(PadOrTruncate, Idempotent) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> raw(rng() % 50);
    for (auto& t : raw) t = 2 + rng() % 100;
    const std::size_t max_len = 1 + rng() % 40;
    auto once = pad_or_truncate(raw, max_len);
    std::vector<TokenId> real(once.tokens.begin(), once.tokens.begin() + once.length());
    EXPECT_EQ(pad_or_truncate(real, max_len), once);
  }
}

TEST(Context, DropsEmptyAndKeepsMostRecent) {
  DataConfig c = toy_config();
  auto ctx = make_context({{2}, {}, {3}, {4}, {5}}, c);
  ASSERT_EQ(ctx.length(), 3u);
  EXPECT_EQ(ctx.utterances[0].tokens[0], 3u);
  EXPECT_EQ(ctx.utterances[2].tokens[0], 5u);
  EXPECT_THROW(make_context({{}, {}}, c), DataError);
  auto last = keep_last_utterances(ctx, 1);
  EXPECT_EQ(last.length(), 1u);
  EXPECT_EQ(last.utterances[0].tokens[0], 5u);
}

TEST(Vocabulary, RequiresMarkersAndMapsOov) {
  EXPECT_THROW(Vocabulary({"a", "b"}), DataError);
  EXPECT_THROW(Vocabulary({"<pad>", "<unk>", "x", "x"}), DataError);
  Vocabulary v({"<pad>", "<unk>", "hi"});
  EXPECT_EQ(v.encode("hi  zzz"), (std::vector<TokenId>{2, kOovId}));
}

TEST(SampleNegatives, PoolOf49) {
  std::vector<int> pool(50);
  for (int i = 0; i < 50; ++i) pool[i] = i;
  std::mt19937_64 rng(1);
  auto set = sample_negatives(pool, 17, 9, rng);
  ASSERT_EQ(set.candidates.size(), 10u);
  EXPECT_EQ(std::count(set.candidates.begin(), set.candidates.end(), 17), 1);
  EXPECT_EQ(set.candidates[set.truth_index], 17);
  EXPECT_EQ(std::set<int>(set.candidates.begin(), set.candidates.end()).size(), 10u);
}

TEST(SampleNegatives, ExhaustiveDraw) {
  std::vector<int> pool{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto set = sample_negatives(pool, 4, 9, rng);
    std::set<int> members(set.candidates.begin(), set.candidates.end());
    EXPECT_EQ(members, std::set<int>(pool.begin(), pool.end()));
  }
}

TEST(SampleNegatives, DeterministicAndErrors) {
  std::vector<int> pool(30);
  for (int i = 0; i < 30; ++i) pool[i] = i;
  std::mt19937_64 a(99), b(99);
  auto x = sample_negatives(pool, 3, 9, a);
  auto y = sample_negatives(pool, 3, 9, b);
  EXPECT_EQ(x.candidates, y.candidates);
  EXPECT_EQ(x.truth_index, y.truth_index);
  std::vector<int> small{0, 1, 2, 3};
  try {
    sample_negatives(small, 0, 9, a);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("size 4"), std::string::npos);
  }
}

TEST(SampleNegatives, NeverReturnsTruthImage) {
  // byte-identical copies of the truth image must be excluded too
  std::vector<Image> pool;
  for (int i = 0; i < 12; ++i)
    pool.push_back(Image{2, 2, 1, std::vector<float>(4, static_cast<float>(i % 6))});
  const Image truth = pool[3];
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto set = sample_negatives(pool, truth, 9, rng);
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
      if (i != set.truth_index) {
        EXPECT_FALSE(set.candidates[i] == truth);
      }
    }
  }
}

TEST(LoadDataset, TwoLinesTwoSamples) {
  auto dir = write_toy_corpus("two", {kGoodLine, kGoodLine});
  auto ds = load_dataset(dir, toy_config());
  ASSERT_EQ(ds.samples.size(), 2u);
  const auto& s = ds.samples[0];
  EXPECT_EQ(s.context.length(), 2u);
  EXPECT_EQ(s.truth_index, 1u);
  EXPECT_EQ(s.history.size(), 1u);
  EXPECT_EQ(s.history_mask, (pesrs::Mask{true, false}));
  EXPECT_EQ(ds.stickers.size(), 4u);
  EXPECT_NEAR(ds.stickers.image(s.truth()).pixels[0], 0.25f, 1.0f / 255);
}

TEST(LoadDataset, WrongCandidateCountNamesRecord) {
  auto dir = write_toy_corpus(
      "nine", {kGoodLine,
               R"({"record_id":"r42","context":["cat"],"candidates":["images/0.png","images/1.png"],"truth_index":0})"});
  try {
    load_dataset(dir, toy_config());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("r42"), std::string::npos);
  }
}

TEST(LoadDataset, IngestionErrorsCarryLine) {
  auto missing = write_toy_corpus(
      "missing", {R"({"context":["cat"],"candidates":["images/0.png","images/1.png","images/9.png"],"truth_index":0})"});
  EXPECT_THROW(load_dataset(missing, toy_config()), DataError);
  auto bad_truth = write_toy_corpus(
      "truth", {R"({"context":["cat"],"candidates":["images/0.png","images/1.png","images/2.png"],"truth_index":3})"});
  EXPECT_THROW(load_dataset(bad_truth, toy_config()), DataError);
  auto malformed = write_toy_corpus("malformed", {kGoodLine, "{not json"});
  try {
    load_dataset(malformed, toy_config());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Synthetic, SixtyFourValidSamples) {
  SyntheticSpec spec;
  auto syn = gen_synthetic(spec, 11);
  const auto& ds = syn.dataset;
  ASSERT_EQ(ds.samples.size(), 64u);
  for (const auto& s : ds.samples) {
    EXPECT_NO_THROW(validate_sample(s, ds.config, ds.stickers.size(), ds.vocab.size()));
  }
}

TEST(Synthetic, InvariantsOverRandomSpecs) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 15; ++trial) {
    SyntheticSpec spec;
    spec.samples = 5 + rng() % 20;
    spec.users = 1 + rng() % 5;
    spec.styles = 2 + rng() % 6;
    spec.stickers_per_style = 1 + rng() % 4;
    spec.config.n_candidates = 2 + rng() % ((spec.styles - 1) * spec.stickers_per_style);
    spec.config.max_utterances = 1 + rng() % 5;
    spec.config.max_history = rng() % 4;
    spec.config.image_size = 8;
    spec.signal = (rng() % 11) / 10.0;
    auto syn = gen_synthetic(spec, rng());
    const auto& ds = syn.dataset;
    ASSERT_EQ(ds.samples.size(), spec.samples);
    for (const auto& s : ds.samples)
      EXPECT_NO_THROW(validate_sample(s, ds.config, ds.stickers.size(), ds.vocab.size()));
  }
}

TEST(Synthetic, ZeroStylesRejected) {
  SyntheticSpec spec;
  spec.styles = 0;
  EXPECT_THROW(gen_synthetic(spec, 1), std::invalid_argument);
}

TEST(Synthetic, SameSeedBitIdenticalManifest) {
  SyntheticSpec spec;
  auto a = scratch_dir("syn_a"), b = scratch_dir("syn_b");
  write_dataset(a, gen_synthetic(spec, 2024).dataset);
  write_dataset(b, gen_synthetic(spec, 2024).dataset);
  EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
  EXPECT_EQ(slurp(a / "images/s3_v1.png"), slurp(b / "images/s3_v1.png"));
  auto c = scratch_dir("syn_c");
  write_dataset(c, gen_synthetic(spec, 2025).dataset);
  EXPECT_NE(slurp(a / "manifest.jsonl"), slurp(c / "manifest.jsonl"));
}

TEST(Synthetic, RoundTripsThroughDisk) {
  SyntheticSpec spec;
  auto syn = gen_synthetic(spec, 8);
  auto dir = scratch_dir("syn_rt");
  write_dataset(dir, syn.dataset);
  auto back = load_dataset(dir, spec.config);
  ASSERT_EQ(back.samples.size(), syn.dataset.samples.size());
  for (std::size_t i = 0; i < back.samples.size(); ++i) {
    const auto& x = back.samples[i];
    const auto& y = syn.dataset.samples[i];
    EXPECT_EQ(x.context, y.context);
    EXPECT_EQ(x.truth_index, y.truth_index);
    EXPECT_EQ(x.emoji_labels, y.emoji_labels);
    EXPECT_EQ(x.history.size(), y.history.size());
    EXPECT_EQ(back.stickers.image(x.truth()), syn.dataset.stickers.image(y.truth()));
  }
}

TEST(Synthetic, PlantedRuleIsPerfectAtFullSignal) {
  SyntheticSpec spec;
  spec.signal = 1.0;
  auto syn = gen_synthetic(spec, 77);
  std::size_t hits = 0;
  for (const auto& s : syn.dataset.samples) {
    auto scores = planted_scores(syn, s);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (scores[i] > scores[best]) best = i;
    hits += best == s.truth_index;
  }
  EXPECT_EQ(hits, syn.dataset.samples.size());
}

TEST(Stats, ToySetAverageWords) {
  Dataset ds;
  ds.config = toy_config();
  Sample s;
  s.raw_utterance_words = {4, 4};
  s.history.resize(1);
  ds.samples.push_back(s);
  auto r = dataset_stats(ds);
  EXPECT_EQ(r.pairs, 1u);
  EXPECT_DOUBLE_EQ(r.avg_words, 4.0);
  EXPECT_DOUBLE_EQ(r.history_coverage, 1.0);
  EXPECT_DOUBLE_EQ(r.avg_history_length, 1.0);
  EXPECT_FALSE(r.avg_participants.has_value());
  EXPECT_THROW(dataset_stats(Dataset{}), DataError);
}

TEST(Stats, LoadedCorpus) {
  auto dir = write_toy_corpus("stats", {kGoodLine});
  auto r = dataset_stats(load_dataset(dir, toy_config()));
  EXPECT_DOUBLE_EQ(r.avg_words, 1.5);
  EXPECT_EQ(r.history_histogram, (std::vector<std::size_t>{0, 1, 0}));
}
