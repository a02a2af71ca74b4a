#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pesrs/eval/metrics.hpp"
#include "pesrs/model/model.hpp"

namespace pesrs::eval {

struct MetricSet {
  double map = 0;
  std::map<std::size_t, double> recall_at;  ///< k -> R_n@k
  std::size_t n_samples = 0;
};

struct SimilarityBucket {
  std::size_t index = 0;  ///< 0..4, low to high similarity
  double lo = 0, hi = 0;
  std::size_t count = 0;
  double recall_at_1 = 0;
};

struct EmojiMetrics {
  double accuracy = 0;
  double macro_f1 = 0;
  std::size_t n = 0;
};

struct EvalReport {
  MetricSet metrics;
  std::size_t abstained = 0;
  std::optional<EmojiMetrics> emoji;
  std::optional<double> mean_similarity;
  std::vector<SimilarityBucket> buckets;
  std::vector<std::pair<std::size_t, MetricSet>> utterance_sweep;
  std::vector<std::pair<std::size_t, MetricSet>> history_sweep;

  std::string to_json() const;
};

/// Per-sample model output kept for metrics and reports.
struct SamplePrediction {
  std::vector<double> scores;
  bool abstain = false;
  bool no_history = false;
  std::vector<std::vector<double>> emoji_logits;
  model::ForwardResult forward;  ///< trace fields populated when requested
};

template <typename Real>
std::vector<SamplePrediction> predict_all(const model::PesrsModel<Real>& model,
                                          const ParamSet<Real>& params,
                                          const std::vector<data::Sample>& samples,
                                          std::span<const Tensor<Real>> images,
                                          std::size_t threads = 1, bool trace = false);

/// Ranks from predictions; abstentions rank last (T_c).
MetricSet ranking_metrics(const std::vector<data::Sample>& samples,
                          const std::vector<SamplePrediction>& preds);

EmojiMetrics emoji_metrics(const std::vector<data::Sample>& samples,
                           const std::vector<SamplePrediction>& preds);

/// Mean SSIM between the truth sticker and each negative.
double candidate_similarity(const data::Sample& sample, const data::ImageStore& stickers);

/// Five equal-width buckets over [min, max] of `similarity`; a degenerate
/// range puts everything in the top bucket. Empty buckets are omitted.
std::vector<SimilarityBucket> bucket_by_similarity(const std::vector<double>& similarity,
                                                   const std::vector<int>& hit_at_1);
/// Bucket index per value under the same rule.
std::vector<std::size_t> bucket_indices(const std::vector<double>& similarity);

struct EvalOptions {
  std::size_t threads = 1;
  bool similarity = false;
  bool utterance_sweep = false;
  bool history_sweep = false;
};

template <typename Real>
EvalReport evaluate(const model::PesrsModel<Real>& model, const ParamSet<Real>& params,
                    const data::Dataset& dataset, const EvalOptions& opts = {});

/// One CSV row per sweep point: x,map,r10_1,r10_2,r10_5.
void write_sweep_csv(const std::filesystem::path& path, const std::string& x_name,
                     const std::vector<std::pair<std::size_t, MetricSet>>& sweep);

/// One JSON object per sample: memory weights, and per candidate ŷ, f_g,
/// τ^s as a p x p grid per utterance and τ^u per utterance.
void write_attention_report(const std::filesystem::path& path,
                            const std::vector<data::Sample>& samples,
                            const std::vector<SamplePrediction>& preds, std::size_t grid);

struct AttentionRecord {
  std::string record_id;
  std::vector<double> memory_weights;
  struct Candidate {
    double y_hat = 0, gate = 0;
    std::vector<std::vector<std::vector<double>>> tau_s;  ///< utterance x p x p
    std::vector<std::vector<double>> tau_u;
  };
  std::vector<Candidate> candidates;
};

std::vector<AttentionRecord> read_attention_report(const std::filesystem::path& path);

}  // namespace pesrs::eval
