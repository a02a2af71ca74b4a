#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pesrs/core/tensor.hpp"

namespace pesrs::data {

using TokenId = std::uint32_t;
using StickerId = std::uint32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kOovId = 1;
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kOovToken = "<unk>";

/// Raised for malformed or inconsistent input data. `line` is the 1-based
/// manifest line when the error comes from ingestion, 0 otherwise.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct DataConfig {
  std::size_t max_words = 30;       ///< T_x
  std::size_t max_utterances = 10;  ///< T_u
  std::size_t max_history = 10;     ///< T_h
  std::size_t n_candidates = 10;    ///< T_c
  std::size_t image_size = 128;
  std::size_t image_channels = 3;
};

/// H x W x C pixels in [0, 1], row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Padded token sequence; mask is a prefix of trues marking real tokens.
struct Utterance {
  std::vector<TokenId> tokens;
  Mask mask;
  std::size_t length() const { return count_true(mask); }
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Utterances in chronological order, real ones first, padded to T_u.
struct DialogContext {
  std::vector<Utterance> utterances;
  Mask utterance_mask;
  std::size_t length() const { return count_true(utterance_mask); }
  friend bool operator==(const DialogContext&, const DialogContext&) = default;
};

struct HistoryPair {
  DialogContext context;
  StickerId sticker = 0;
  std::size_t position_index = 0;  ///< 1 = oldest retained
  friend bool operator==(const HistoryPair&, const HistoryPair&) = default;
};

struct Sample {
  std::string record_id;
  std::string user_id;
  DialogContext context;
  std::vector<StickerId> candidates;
  std::size_t truth_index = 0;
  std::vector<HistoryPair> history;  ///< chronological, at most T_h
  Mask history_mask;                 ///< length T_h, prefix of trues
  std::vector<int> emoji_labels;     ///< per candidate; empty when absent

  // Raw (pre-padding) facts kept for corpus statistics.
  std::vector<std::size_t> raw_utterance_words;
  std::optional<std::size_t> participants;

  StickerId truth() const { return candidates.at(truth_index); }
};

/// Interned sticker images addressed by their manifest-relative path.
class ImageStore {
 public:
  StickerId add(std::string path, Image image);
  std::optional<StickerId> find(const std::string& path) const;
  const Image& image(StickerId id) const { return images_.at(id); }
  const std::string& path(StickerId id) const { return paths_.at(id); }
  std::size_t size() const { return images_.size(); }

 private:
  std::vector<Image> images_;
  std::vector<std::string> paths_;
  std::unordered_map<std::string, StickerId> lookup_;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  /// The first two tokens must be the pad and OOV markers.
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Whitespace tokenisation; unknown words map to the OOV id.
  std::vector<TokenId> encode(const std::string& text) const;
  std::string decode(const Utterance& utt) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> lookup_;
};

struct Dataset {
  DataConfig config;
  Vocabulary vocab;
  ImageStore stickers;
  std::vector<std::string> emoji_vocab;
  std::vector<Sample> samples;
};

/// Keeps the first `max_len` tokens, pads the rest with kPadId.
Utterance pad_or_truncate(const std::vector<TokenId>& raw_tokens, std::size_t max_len);

/// Builds a context from raw utterances (oldest first). Empty utterances are
/// dropped; when more than T_u remain, the most recent T_u are kept.
/// Throws DataError when no utterance has a token.
DialogContext make_context(const std::vector<std::vector<TokenId>>& utterances,
                           const DataConfig& config);

/// Re-masks a context so only its last `keep` real utterances remain.
DialogContext keep_last_utterances(const DialogContext& context, std::size_t keep);

/// Checks every type invariant of a sample against the config.
void validate_sample(const Sample& sample, const DataConfig& config,
                     std::size_t sticker_count, std::size_t vocab_size);

/// Keeps the most recent `keep` history pairs, re-indexing positions from 1.
Sample truncate_history(const Sample& sample, std::size_t keep, std::size_t max_history);

}  // namespace pesrs::data
