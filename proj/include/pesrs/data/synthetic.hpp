#pragma once

#include <cstdint>
#include <vector>

#include "pesrs/data/types.hpp"

namespace pesrs::data {

struct SyntheticSpec {
  std::size_t samples = 64;
  std::size_t users = 8;
  std::size_t styles = 8;
  std::size_t stickers_per_style = 3;
  std::size_t words_per_style = 6;
  std::size_t filler_words = 12;
  std::size_t min_words = 2;
  std::size_t max_words = 6;
  /// Probability that a content token comes from the truth style's cluster.
  double signal = 1.0;
  /// Probability that a user picks their favourite variant of a style.
  double repeat = 0.54;
  /// Probability mass on a user's top style; the rest is spread uniformly.
  double concentration = 0.6;
  DataConfig config{.max_words = 8,
                    .max_utterances = 4,
                    .max_history = 4,
                    .n_candidates = 10,
                    .image_size = 32,
                    .image_channels = 3};

  void validate() const;
};

struct SyntheticDataset {
  Dataset dataset;
  std::vector<int> sticker_style;  ///< per StickerId
  std::vector<int> token_style;    ///< per TokenId, -1 for pad/unk/filler
};

SyntheticDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// The generator's planted rule: a candidate scores the number of context
/// tokens from its style cluster, plus a small bonus for matching history.
std::vector<double> planted_scores(const SyntheticDataset& data, const Sample& sample);

}  // namespace pesrs::data
