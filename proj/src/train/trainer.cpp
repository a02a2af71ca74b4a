#include "pesrs/train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace pesrs::train {

void TrainConfig::validate() const {
  if (!(margin > 0)) throw model::ConfigError("margin must be > 0");
  if (lambda_cls < 0) throw model::ConfigError("lambda_cls must be >= 0");
  if (lr < 0) throw model::ConfigError("lr must be >= 0");
  if (batch_size == 0) throw model::ConfigError("batch_size must be >= 1");
  if (threads == 0) throw model::ConfigError("threads must be >= 1");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || adam_eps <= 0) {
    throw model::ConfigError("invalid Adam hyperparameters");
  }
  if (float_width != "float" && float_width != "double") {
    throw model::ConfigError("float_width must be 'float' or 'double'");
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["margin"] = margin;
  j["lambda_cls"] = lambda_cls;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["clip_norm"] = clip_norm;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["checkpoint_every"] = checkpoint_every;
  j["threads"] = threads;
  j["seed"] = seed;
  j["float_width"] = float_width;
  return j.dump();
}

bool TrainConfig::set(const std::string& key, const std::string& json_value) {
  const auto v = nlohmann::json::parse(json_value);
  if (key == "margin") margin = v.get<double>();
  else if (key == "lambda_cls") lambda_cls = v.get<double>();
  else if (key == "lr") lr = v.get<double>();
  else if (key == "beta1") beta1 = v.get<double>();
  else if (key == "beta2") beta2 = v.get<double>();
  else if (key == "adam_eps") adam_eps = v.get<double>();
  else if (key == "clip_norm") clip_norm = v.get<double>();
  else if (key == "batch_size") batch_size = v.get<std::size_t>();
  else if (key == "max_epochs") max_epochs = v.get<std::size_t>();
  else if (key == "checkpoint_every") checkpoint_every = v.get<std::size_t>();
  else if (key == "threads") threads = v.get<std::size_t>();
  else if (key == "seed") seed = v.get<std::uint64_t>();
  else if (key == "float_width") float_width = v.get<std::string>();
  else return false;
  return true;
}

template <typename Real>
Var hinge_loss(Tape<Real>& t, Var scores, std::size_t truth_index, double margin) {
  const std::size_t n = t.value(scores).size();
  if (n < 2) throw std::invalid_argument("hinge_loss: need at least two candidates");
  if (truth_index >= n) throw std::invalid_argument("hinge_loss: truth index out of range");
  return ops::hinge_loss(t, scores, truth_index, static_cast<Real>(margin));
}

template <typename Real>
Var emoji_loss(Tape<Real>& t, Var logits, std::size_t label) {
  if (label >= t.value(logits).size()) {
    throw std::invalid_argument("emoji_loss: label " + std::to_string(label) + " out of range");
  }
  return ops::cross_entropy(t, logits, label);
}

template <typename Real>
SampleLoss<Real> sample_loss(Tape<Real>& t, const model::PesrsModel<Real>& model,
                             const data::Sample& sample, std::span<const Tensor<Real>> images,
                             const TrainConfig& cfg, std::mt19937_64* dropout_rng) {
  auto fwd = model.forward(t, sample, images, {dropout_rng, false});
  SampleLoss<Real> out;
  out.total = hinge_loss(t, fwd.scores, sample.truth_index, cfg.margin);
  out.hinge = static_cast<double>(t.value(out.total)[0]);
  const bool classify = !model.config().ablation.no_classify && !fwd.emoji_logits.empty() &&
                        !sample.emoji_labels.empty() && cfg.lambda_cls > 0;
  if (classify) {
    std::vector<Var> terms;
    for (std::size_t c = 0; c < sample.emoji_labels.size(); ++c) {
      terms.push_back(emoji_loss(t, fwd.emoji_logits[c],
                                 static_cast<std::size_t>(sample.emoji_labels[c])));
    }
    Var mean = ops::scale(t, ops::add_n<Real>(t, terms),
                          static_cast<Real>(1.0 / static_cast<double>(terms.size())));
    out.emoji = static_cast<double>(t.value(mean)[0]);
    out.total = ops::add(t, out.total, ops::scale(t, mean, static_cast<Real>(cfg.lambda_cls)));
  }
  return out;
}

template <typename Real>
Adam<Real>::Adam(const ParamSet<Real>& params, const TrainConfig& cfg)
    : lr_(cfg.lr), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).size(), 0.0);
    v_.emplace_back(params.value(i).size(), 0.0);
  }
}

template <typename Real>
void Adam<Real>::step(ParamSet<Real>& params, const GradSet<Real>& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.value(i).data();
    const auto& g = grads[i].data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = b1_ * m[j] + (1 - b1_) * gj;
      v[j] = b2_ * v[j] + (1 - b2_) * gj * gj;
      const double update = lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      p[j] = static_cast<Real>(static_cast<double>(p[j]) - update);
    }
  }
}

namespace {

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t step, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

}  // namespace

template <typename Real>
StepMetrics train_step(const model::PesrsModel<Real>& model, ParamSet<Real>& params,
                       Adam<Real>& adam, std::span<const data::Sample* const> batch,
                       std::span<const Tensor<Real>> images, const TrainConfig& cfg,
                       std::size_t step_index) {
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("train_step: empty batch");
  std::vector<GradSet<Real>> grads;
  grads.reserve(n);
  for (std::size_t i = 0; i < n; ++i) grads.emplace_back(params);
  std::vector<double> hinge(n), emoji(n), total(n);
  std::vector<std::exception_ptr> errors(n);

  auto work = [&](std::size_t i) {
    try {
      auto rng = sample_rng(cfg.seed, step_index, i);
      Tape<Real> t(params, &grads[i]);
      auto loss = sample_loss(t, model, *batch[i], images, cfg, &rng);
      hinge[i] = loss.hinge;
      emoji[i] = loss.emoji;
      total[i] = static_cast<double>(t.value(loss.total)[0]);
      if (!std::isfinite(total[i])) {
        throw NumericError("non-finite loss on sample " + batch[i]->record_id,
                           batch[i]->record_id);
      }
      t.backward(loss.total);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(cfg.threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  GradSet<Real> sum(params);
  for (auto& g : grads) sum += g;
  sum.scale(static_cast<Real>(1.0 / static_cast<double>(n)));

  StepMetrics m;
  m.step = step_index;
  m.grad_norm = sum.global_norm();
  if (!std::isfinite(m.grad_norm)) {
    throw NumericError("non-finite gradient at step " + std::to_string(step_index),
                       batch.front()->record_id);
  }
  if (cfg.clip_norm > 0 && m.grad_norm > cfg.clip_norm) {
    sum.scale(static_cast<Real>(cfg.clip_norm / m.grad_norm));
  }
  adam.step(params, sum);
  for (std::size_t i = 0; i < n; ++i) {
    m.loss += total[i];
    m.hinge += hinge[i];
    m.emoji += emoji[i];
  }
  const double inv = 1.0 / static_cast<double>(n);
  m.loss *= inv;
  m.hinge *= inv;
  m.emoji *= inv;
  return m;
}

std::string metrics_json(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["hinge"] = m.hinge;
  j["emoji"] = m.emoji;
  j["grad_norm"] = m.grad_norm;
  return j.dump();
}

template <typename Real>
TrainSummary train(const model::PesrsModel<Real>& model, ParamSet<Real>& params,
                   const data::Dataset& dataset, const TrainConfig& cfg,
                   const TrainHooks& hooks, const TrainOutputs& outputs) {
  cfg.validate();
  if (dataset.samples.empty()) throw data::DataError("train: empty dataset");
  if (model.config().memory == model::MemoryVariant::MostSelected) {
    throw model::ConfigError("the MostSelected variant is rule-based and has nothing to train");
  }
  const auto images = model::sticker_tensors<Real>(dataset.stickers);
  Adam<Real> adam(params, cfg);

  std::ofstream metrics, timing;
  const bool write = !outputs.dir.empty();
  if (write) {
    std::filesystem::create_directories(outputs.dir);
    metrics.open(outputs.dir / "metrics.jsonl");
    timing.open(outputs.dir / "timing.jsonl");
    if (!metrics || !timing) throw std::runtime_error("cannot write logs in " + outputs.dir.string());
  }
  const auto start = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(cfg.seed);
  TrainSummary summary;
  std::vector<const data::Sample*> batch;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) {
        batch.push_back(&dataset.samples[order[i]]);
      }
      auto m = train_step<Real>(model, params, adam, batch, images, cfg, summary.steps + 1);
      m.epoch = epoch;
      ++summary.steps;
      summary.last = m;
      if (write) {
        metrics << metrics_json(m) << '\n';
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        timing << "{\"step\":" << m.step << ",\"wall_seconds\":" << secs << "}\n";
        if (cfg.checkpoint_every > 0 && summary.steps % cfg.checkpoint_every == 0) {
          write_checkpoint(outputs.dir / ("step" + std::to_string(summary.steps) + ".ckpt"),
                           make_checkpoint(params, outputs.model_metadata));
        }
      }
      if (hooks.on_step) hooks.on_step(m);
    }
    summary.epochs = epoch;
    if (hooks.on_epoch && hooks.on_epoch(epoch)) break;
  }
  if (write) {
    metrics.flush();
    write_checkpoint(outputs.dir / "model.ckpt", make_checkpoint(params, outputs.model_metadata));
  }
  return summary;
}

#define PESRS_INSTANTIATE_TRAIN(R)                                                          \
  template Var hinge_loss<R>(Tape<R>&, Var, std::size_t, double);                           \
  template Var emoji_loss<R>(Tape<R>&, Var, std::size_t);                                   \
  template SampleLoss<R> sample_loss<R>(Tape<R>&, const model::PesrsModel<R>&,             \
                                        const data::Sample&, std::span<const Tensor<R>>,   \
                                        const TrainConfig&, std::mt19937_64*);             \
  template class Adam<R>;                                                                   \
  template StepMetrics train_step<R>(const model::PesrsModel<R>&, ParamSet<R>&, Adam<R>&,  \
                                     std::span<const data::Sample* const>,                 \
                                     std::span<const Tensor<R>>, const TrainConfig&,       \
                                     std::size_t);                                         \
  template TrainSummary train<R>(const model::PesrsModel<R>&, ParamSet<R>&,                \
                                 const data::Dataset&, const TrainConfig&,                 \
                                 const TrainHooks&, const TrainOutputs&);

PESRS_INSTANTIATE_TRAIN(float)
PESRS_INSTANTIATE_TRAIN(double)

}  // namespace pesrs::train
