#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pesrs/model/model.hpp"

namespace pesrs::train {

struct TrainConfig {
  double margin = 0.3;
  double lambda_cls = 1.0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;  ///< 0 disables clipping
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t checkpoint_every = 0;  ///< steps; 0 = final checkpoint only
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  std::string float_width = "float";  ///< "float" or "double"

  void validate() const;
  std::string to_json() const;
  /// Returns true when `key` is a training key and was applied.
  bool set(const std::string& key, const std::string& json_value);
};

/// Raised when a loss or gradient is not finite.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::string sample)
      : std::runtime_error(what), sample_id(std::move(sample)) {}
  std::string sample_id;
};

template <typename Real>
Var hinge_loss(Tape<Real>& t, Var scores, std::size_t truth_index, double margin);
template <typename Real>
Var emoji_loss(Tape<Real>& t, Var logits, std::size_t label);

template <typename Real>
struct SampleLoss {
  Var total;
  double hinge = 0;
  double emoji = 0;
};

/// hinge + lambda_cls * mean emoji cross-entropy over labelled candidates.
/// The emoji term is absent under the w/o Classify ablation.
template <typename Real>
SampleLoss<Real> sample_loss(Tape<Real>& t, const model::PesrsModel<Real>& model,
                             const data::Sample& sample, std::span<const Tensor<Real>> images,
                             const TrainConfig& cfg, std::mt19937_64* dropout_rng);

template <typename Real>
class Adam {
 public:
  Adam(const ParamSet<Real>& params, const TrainConfig& cfg);
  void step(ParamSet<Real>& params, const GradSet<Real>& grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;
  double hinge = 0;
  double emoji = 0;
  double grad_norm = 0;  ///< before clipping
};

/// One optimiser update on `batch`: per-sample gradients are computed
/// (optionally in parallel) and summed in batch order, averaged, clipped,
/// then applied.
template <typename Real>
StepMetrics train_step(const model::PesrsModel<Real>& model, ParamSet<Real>& params,
                       Adam<Real>& adam, std::span<const data::Sample* const> batch,
                       std::span<const Tensor<Real>> images, const TrainConfig& cfg,
                       std::size_t step_index);

struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  /// Called after each epoch with the 1-based epoch; return true to stop.
  std::function<bool(std::size_t)> on_epoch;
};

struct TrainOutputs {
  std::filesystem::path dir;  ///< empty = write nothing
  std::string model_metadata;
};

struct TrainSummary {
  std::size_t steps = 0;
  std::size_t epochs = 0;
  std::optional<StepMetrics> last;
};

/// Shuffled mini-batch training. With a non-empty output dir it writes
/// metrics.jsonl (deterministic), timing.jsonl (wall clock), periodic
/// checkpoints and model.ckpt.
template <typename Real>
TrainSummary train(const model::PesrsModel<Real>& model, ParamSet<Real>& params,
                   const data::Dataset& dataset, const TrainConfig& cfg,
                   const TrainHooks& hooks = {}, const TrainOutputs& outputs = {});

std::string metrics_json(const StepMetrics& m);

}  // namespace pesrs::train
