#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "pesrs/data/types.hpp"
#include "pesrs/model/config.hpp"
#include "pesrs/model/encoders.hpp"
#include "pesrs/model/fusion.hpp"
#include "pesrs/model/interaction.hpp"
#include "pesrs/model/memory.hpp"

namespace pesrs::model {

struct ForwardOptions {
  std::mt19937_64* dropout_rng = nullptr;  ///< null = evaluation mode
  bool trace = false;
};

/// Plain-value copy of the per-candidate internals, for reports.
struct CandidateTrace {
  double y_hat = 0;
  double gate = 0;
  std::vector<std::vector<double>> tau_s;  ///< per real utterance, p*p values
  std::vector<std::vector<double>> tau_u;  ///< per real utterance, T_x values
};

/// A softmax produced during the forward pass and the mask it was taken over.
struct AttentionProbe {
  std::string site;  ///< "utterance", "fusion" or "memory"
  Var weights;       ///< [rows, masked axis] or [T_h]
  Mask mask;
};

struct ForwardResult {
  Var scores;                     ///< [T_c] matching scores ŷ
  std::vector<Var> emoji_logits;  ///< per candidate; empty without an emoji head
  std::vector<double> score_values;
  bool abstain = false;     ///< MostSelected with empty history
  bool no_history = false;  ///< preference read-out is the zero vector
  std::vector<double> memory_weights;
  std::vector<CandidateTrace> candidates;  ///< filled when tracing
  std::vector<AttentionProbe> attention;   ///< filled when tracing; valid with the tape
};

template <typename Real>
class PesrsModel {
 public:
  explicit PesrsModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  void register_params(ParamSet<Real>& params) const;
  /// Truncated normal everywhere, except convolution kernels (He normal,
  /// zero bias) and layer-norm gain/bias (one/zero).
  void init_params(ParamSet<Real>& params, std::uint64_t seed) const;
  ParamSet<Real> make_params(std::uint64_t seed) const {
    ParamSet<Real> p;
    register_params(p);
    init_params(p, seed);
    return p;
  }

  /// Scores every candidate of `sample`. `images` is indexed by StickerId.
  ForwardResult forward(Tape<Real>& t, const data::Sample& sample,
                        std::span<const Tensor<Real>> images,
                        const ForwardOptions& opts = {}) const;

 private:
  MemoryConfig memory_config() const;
  FusionConfig fusion_config() const;
  BlockConfig block_config() const { return {cfg_.dim, cfg_.ffn_dim, cfg_.heads}; }

  ModelConfig cfg_;
};

/// Dataset images as tensors, indexed by StickerId.
template <typename Real>
std::vector<Tensor<Real>> sticker_tensors(const data::ImageStore& store);

/// Model config matching a dataset's shapes, leaving widths at their defaults.
ModelConfig config_for(const data::Dataset& dataset, ModelConfig base = {});

}  // namespace pesrs::model
