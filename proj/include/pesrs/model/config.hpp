#pragma once

#include <string>
#include <vector>

#include "pesrs/core/nn.hpp"

namespace pesrs::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Table-2 ablations. All false is the full model.
struct Ablations {
  bool no_classify = false;  ///< w/o Classify
  bool no_din = false;       ///< w/o DIN
  bool no_fr = false;        ///< w/o FR
  bool fr2t = false;         ///< FR2T
  bool no_upm = false;       ///< w/o UPM
  bool no_tar = false;       ///< w/o TAR

  /// Comma-separated names: classify, din, fr, fr2t, upm, tar (case-insensitive,
  /// an optional "w/o-" or "no-" prefix is accepted).
  static Ablations parse(const std::string& list);
  std::string to_string() const;
  bool any() const { return no_classify || no_din || no_fr || fr2t || no_upm || no_tar; }
  friend bool operator==(const Ablations&, const Ablations&) = default;
};

enum class MemoryVariant { Full, AverageMem, WeightedMem, MostSelected };

MemoryVariant parse_memory_variant(const std::string& name);
std::string to_string(MemoryVariant v);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t n_emoji = 0;

  std::size_t dim = 100;  ///< d: embedding, hidden and sticker feature width
  std::size_t ffn_dim = 200;
  std::size_t heads = 2;
  std::size_t position_dim = 8;  ///< width of the t_k history position embedding

  std::size_t image_size = 128;
  std::size_t image_channels = 3;
  std::size_t conv_stage1 = 16;
  std::size_t conv_stage2 = 32;
  std::size_t grid = 4;  ///< p

  std::size_t max_words = 30;      ///< T_x
  std::size_t max_utterances = 10; ///< T_u
  std::size_t max_history = 10;    ///< T_h
  std::size_t n_candidates = 10;   ///< T_c

  double dropout = 0.1;
  double init_std = 0.01;
  double init_clip = 0.02;
  /// Word embedding table std (plain normal); 0 keeps the truncated normal above.
  double embedding_std = 0.0;

  bool share_history_encoder = true;
  bool share_memory_gru = false;

  Ablations ablation;
  MemoryVariant memory = MemoryVariant::Full;

  nn::ConvStackConfig conv() const {
    return {image_size, image_channels, conv_stage1, conv_stage2, dim, grid};
  }
  void validate() const;

  std::string to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static ModelConfig from_json(const std::string& text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace pesrs::model
