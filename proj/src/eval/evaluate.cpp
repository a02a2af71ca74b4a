#include "pesrs/eval/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>

#include <json.hpp>

#include "pesrs/eval/ssim.hpp"

namespace pesrs::eval {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

template <typename Real>
std::vector<SamplePrediction> predict_all(const model::PesrsModel<Real>& model,
                                          const ParamSet<Real>& params,
                                          const std::vector<data::Sample>& samples,
                                          std::span<const Tensor<Real>> images,
                                          std::size_t threads, bool trace) {
  std::vector<SamplePrediction> out(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  auto work = [&](std::size_t i) {
    try {
      Tape<Real> t(params);
      auto fwd = model.forward(t, samples[i], images, {nullptr, trace});
      auto& p = out[i];
      p.scores = fwd.score_values;
      p.abstain = fwd.abstain;
      p.no_history = fwd.no_history;
      for (Var v : fwd.emoji_logits) {
        const auto& d = t.value(v).data();
        p.emoji_logits.emplace_back(d.begin(), d.end());
      }
      fwd.emoji_logits.clear();
      p.forward = std::move(fwd);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, samples.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < samples.size(); i += workers) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

MetricSet ranking_metrics(const std::vector<data::Sample>& samples,
                          const std::vector<SamplePrediction>& preds) {
  RankingAccumulator acc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (preds[i].abstain) {
      acc.add_rank(samples[i].candidates.size());
    } else {
      acc.add(preds[i].scores, samples[i].truth_index);
    }
  }
  MetricSet m;
  m.n_samples = acc.count();
  m.map = acc.map();
  for (auto k : kRecallCutoffs) m.recall_at[k] = acc.recall(k);
  return m;
}

EmojiMetrics emoji_metrics(const std::vector<data::Sample>& samples,
                           const std::vector<SamplePrediction>& preds) {
  std::map<int, std::size_t> tp, fp, fn;
  std::set<int> classes;
  EmojiMetrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& labels = samples[i].emoji_labels;
    const auto& logits = preds[i].emoji_logits;
    if (labels.empty() || logits.size() != labels.size()) continue;
    for (std::size_t c = 0; c < labels.size(); ++c) {
      const auto& l = logits[c];
      const int guess = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
      const int truth = labels[c];
      classes.insert(guess);
      classes.insert(truth);
      ++m.n;
      if (guess == truth) {
        ++correct;
        ++tp[truth];
      } else {
        ++fp[guess];
        ++fn[truth];
      }
    }
  }
  if (m.n == 0) return m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  double f1_sum = 0;
  for (int c : classes) {
    const double t = static_cast<double>(tp[c]);
    const double denom = 2 * t + static_cast<double>(fp[c] + fn[c]);
    f1_sum += denom > 0 ? 2 * t / denom : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(classes.size());
  return m;
}

double candidate_similarity(const data::Sample& sample, const data::ImageStore& stickers) {
  const auto& truth = stickers.image(sample.truth());
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < sample.candidates.size(); ++c) {
    if (c == sample.truth_index) continue;
    sum += ssim(truth, stickers.image(sample.candidates[c]));
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 1.0;
}

std::vector<std::size_t> bucket_indices(const std::vector<double>& similarity) {
  constexpr std::size_t kBuckets = 5;
  std::vector<std::size_t> out(similarity.size(), kBuckets - 1);
  if (similarity.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(similarity.begin(), similarity.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < similarity.size(); ++i) {
    const double pos = (similarity[i] - lo) / (hi - lo) * static_cast<double>(kBuckets);
    out[i] = std::min(kBuckets - 1, static_cast<std::size_t>(pos));
  }
  return out;
}

std::vector<SimilarityBucket> bucket_by_similarity(const std::vector<double>& similarity,
                                                   const std::vector<int>& hit_at_1) {
  constexpr std::size_t kBuckets = 5;
  const auto idx = bucket_indices(similarity);
  std::vector<SimilarityBucket> all(kBuckets);
  double lo = 0, hi = 0;
  if (!similarity.empty()) {
    lo = *std::min_element(similarity.begin(), similarity.end());
    hi = *std::max_element(similarity.begin(), similarity.end());
  }
  const double width = (hi - lo) / static_cast<double>(kBuckets);
  std::vector<std::size_t> hits(kBuckets, 0);
  for (std::size_t b = 0; b < kBuckets; ++b) {
    all[b].index = b;
    all[b].lo = lo + width * static_cast<double>(b);
    all[b].hi = b + 1 == kBuckets ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ++all[idx[i]].count;
    hits[idx[i]] += hit_at_1[i] ? 1 : 0;
  }
  std::vector<SimilarityBucket> out;
  for (std::size_t b = 0; b < kBuckets; ++b) {
    if (all[b].count == 0) continue;
    all[b].recall_at_1 = static_cast<double>(hits[b]) / static_cast<double>(all[b].count);
    out.push_back(all[b]);
  }
  return out;
}

template <typename Real>
EvalReport evaluate(const model::PesrsModel<Real>& model, const ParamSet<Real>& params,
                    const data::Dataset& dataset, const EvalOptions& opts) {
  if (dataset.config.n_candidates != model.config().n_candidates) {
    throw model::ConfigError("dataset has T_c=" + std::to_string(dataset.config.n_candidates) +
                             " but the model was built for " +
                             std::to_string(model.config().n_candidates));
  }
  const auto image_store = model::sticker_tensors<Real>(dataset.stickers);
  const std::span<const Tensor<Real>> images(image_store);
  EvalReport report;
  const auto preds = predict_all(model, params, dataset.samples, images, opts.threads);
  report.metrics = ranking_metrics(dataset.samples, preds);
  for (const auto& p : preds) report.abstained += p.abstain ? 1 : 0;
  if (!model.config().ablation.no_classify) {
    auto em = emoji_metrics(dataset.samples, preds);
    if (em.n > 0) report.emoji = em;
  }

  if (opts.similarity) {
    std::vector<double> sim;
    std::vector<int> hit;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
      const auto& s = dataset.samples[i];
      sim.push_back(candidate_similarity(s, dataset.stickers));
      hit.push_back(!preds[i].abstain && recall_at_k(preds[i].scores, s.truth_index, 1));
    }
    double total = 0;
    for (double v : sim) total += v;
    report.mean_similarity = sim.empty() ? 0.0 : total / static_cast<double>(sim.size());
    report.buckets = bucket_by_similarity(sim, hit);
  }
  if (opts.utterance_sweep) {
    const std::size_t top = std::min<std::size_t>(18, dataset.config.max_utterances);
    for (std::size_t len = std::min<std::size_t>(3, top); len <= top; ++len) {
      auto samples = dataset.samples;
      for (auto& s : samples) s.context = data::keep_last_utterances(s.context, len);
      report.utterance_sweep.emplace_back(
          len, ranking_metrics(samples, predict_all(model, params, samples, images, opts.threads)));
    }
  }
  if (opts.history_sweep) {
    for (std::size_t len = 0; len <= dataset.config.max_history; ++len) {
      auto samples = dataset.samples;
      for (auto& s : samples) s = data::truncate_history(s, len, dataset.config.max_history);
      report.history_sweep.emplace_back(
          len, ranking_metrics(samples, predict_all(model, params, samples, images, opts.threads)));
    }
  }
  return report;
}

namespace {

ojson metric_json(const MetricSet& m) {
  ojson j;
  j["map"] = m.map;
  ojson r;
  for (const auto& [k, v] : m.recall_at) r[std::to_string(k)] = v;
  j["recall_at"] = r;
  j["n_samples"] = m.n_samples;
  return j;
}

}  // namespace

std::string EvalReport::to_json() const {
  ojson j = metric_json(metrics);
  j["abstained"] = abstained;
  if (emoji) {
    j["emoji"] = {{"accuracy", emoji->accuracy}, {"macro_f1", emoji->macro_f1}, {"n", emoji->n}};
  }
  if (mean_similarity) j["mean_similarity"] = *mean_similarity;
  if (!buckets.empty()) {
    ojson arr = ojson::array();
    for (const auto& b : buckets) {
      ojson e;
      e["bucket"] = b.index;
      e["lo"] = b.lo;
      e["hi"] = b.hi;
      e["count"] = b.count;
      e["recall_at_1"] = b.recall_at_1;
      arr.push_back(e);
    }
    j["bucket_table"] = arr;
  }
  auto sweep_json = [](const std::vector<std::pair<std::size_t, MetricSet>>& sweep) {
    ojson arr = ojson::array();
    for (const auto& [x, m] : sweep) {
      ojson e;
      e["x"] = x;
      e["metrics"] = metric_json(m);
      arr.push_back(e);
    }
    return arr;
  };
  if (!utterance_sweep.empty()) j["utterance_sweep"] = sweep_json(utterance_sweep);
  if (!history_sweep.empty()) j["history_sweep"] = sweep_json(history_sweep);
  return j.dump(2);
}

void write_sweep_csv(const std::filesystem::path& path, const std::string& x_name,
                     const std::vector<std::pair<std::size_t, MetricSet>>& sweep) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << x_name << ",map,r10_1,r10_2,r10_5\n";
  for (const auto& [x, m] : sweep) {
    out << x << ',' << m.map << ',' << m.recall_at.at(1) << ',' << m.recall_at.at(2) << ','
        << m.recall_at.at(5) << '\n';
  }
}

void write_attention_report(const std::filesystem::path& path,
                            const std::vector<data::Sample>& samples,
                            const std::vector<SamplePrediction>& preds, std::size_t grid) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& fwd = preds[i].forward;
    ojson j;
    j["record_id"] = samples[i].record_id;
    j["truth_index"] = samples[i].truth_index;
    j["no_history"] = preds[i].no_history;
    j["memory_weights"] = fwd.memory_weights;
    ojson cands = ojson::array();
    for (std::size_t c = 0; c < fwd.candidates.size(); ++c) {
      const auto& ct = fwd.candidates[c];
      ojson e;
      e["index"] = c;
      e["y_hat"] = ct.y_hat;
      e["gate"] = ct.gate;
      ojson grids = ojson::array();
      for (const auto& ts : ct.tau_s) {
        ojson g = ojson::array();
        for (std::size_t r = 0; r < grid; ++r) {
          g.push_back(std::vector<double>(ts.begin() + static_cast<std::ptrdiff_t>(r * grid),
                                          ts.begin() + static_cast<std::ptrdiff_t>((r + 1) * grid)));
        }
        grids.push_back(g);
      }
      e["tau_s"] = grids;
      e["tau_u"] = ct.tau_u;
      cands.push_back(e);
    }
    j["candidates"] = cands;
    out << j.dump() << '\n';
  }
}

std::vector<AttentionRecord> read_attention_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<AttentionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    AttentionRecord r;
    r.record_id = j.at("record_id").get<std::string>();
    r.memory_weights = j.at("memory_weights").get<std::vector<double>>();
    for (const auto& c : j.at("candidates")) {
      AttentionRecord::Candidate cand;
      cand.y_hat = c.at("y_hat").get<double>();
      cand.gate = c.at("gate").get<double>();
      cand.tau_s = c.at("tau_s").get<std::vector<std::vector<std::vector<double>>>>();
      cand.tau_u = c.at("tau_u").get<std::vector<std::vector<double>>>();
      r.candidates.push_back(std::move(cand));
    }
    out.push_back(std::move(r));
  }
  return out;
}

#define PESRS_INSTANTIATE_EVAL(R)                                                             \
  template std::vector<SamplePrediction> predict_all<R>(                                      \
      const model::PesrsModel<R>&, const ParamSet<R>&, const std::vector<data::Sample>&,     \
      std::span<const Tensor<R>>, std::size_t, bool);                                         \
  template EvalReport evaluate<R>(const model::PesrsModel<R>&, const ParamSet<R>&,           \
                                  const data::Dataset&, const EvalOptions&);

PESRS_INSTANTIATE_EVAL(float)
PESRS_INSTANTIATE_EVAL(double)

}  // namespace pesrs::eval
