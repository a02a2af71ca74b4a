#include "pesrs/model/model.hpp"

#include <array>
#include <cmath>
#include <unordered_map>

#include "pesrs/data/image_io.hpp"

namespace pesrs::model {

template <typename Real>
PesrsModel<Real>::PesrsModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

template <typename Real>
MemoryConfig PesrsModel<Real>::memory_config() const {
  return {cfg_.dim, cfg_.position_dim, cfg_.max_history, !cfg_.ablation.no_tar,
          cfg_.share_memory_gru};
}

template <typename Real>
FusionConfig PesrsModel<Real>::fusion_config() const {
  FusionConfig f{block_config(), ShortFusion::Gru};
  if (cfg_.ablation.no_fr) f.short_path = ShortFusion::None;
  if (cfg_.ablation.fr2t) f.short_path = ShortFusion::Transformer;
  return f;
}

template <typename Real>
void PesrsModel<Real>::register_params(ParamSet<Real>& params) const {
  nn::register_conv_stack(params, "sticker", cfg_.conv());
  if (cfg_.n_emoji > 0) register_emoji_head(params, cfg_.dim, cfg_.n_emoji);
  register_utterance_encoder(params, cfg_.vocab_size, block_config());
  if (!cfg_.share_history_encoder && !cfg_.ablation.no_upm) {
    register_transformer_block(params, "history_utterance", block_config());
  }
  if (cfg_.ablation.no_din) {
    nn::register_linear(params, "nodin", 2 * cfg_.dim, cfg_.dim);
  } else {
    register_interaction(params, cfg_.dim);
  }
  if (!cfg_.ablation.no_upm) register_memory(params, memory_config());
  register_fusion(params, fusion_config());
}

template <typename Real>
void PesrsModel<Real>::init_params(ParamSet<Real>& params, std::uint64_t seed) const {
  params.init_truncated_normal(seed, cfg_.init_std, cfg_.init_clip);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    auto& v = params.value(i);
    if (name.rfind("sticker.conv", 0) == 0 && ends_with(name, ".kernel")) {
      const double fan_in = static_cast<double>(v.dim(0) * v.dim(1) * v.dim(2));
      std::normal_distribution<double> he(0.0, std::sqrt(2.0 / fan_in));
      for (auto& x : v.data()) x = static_cast<Real>(he(rng));
    } else if (name.rfind("sticker.conv", 0) == 0 && ends_with(name, ".bias")) {
      v.fill(Real{0});
    } else if (ends_with(name, ".norm.gain")) {
      v.fill(Real{1});
    } else if (ends_with(name, ".norm.bias")) {
      v.fill(Real{0});
    } else if (name == "embedding" && cfg_.embedding_std > 0) {
      std::normal_distribution<double> normal(0.0, cfg_.embedding_std);
      for (auto& x : v.data()) x = static_cast<Real>(normal(rng));
    }
  }
}

namespace {

std::vector<double> values_of(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> values_of(const Tensor<double>& t) { return t.data(); }

}  // namespace

template <typename Real>
ForwardResult PesrsModel<Real>::forward(Tape<Real>& t, const data::Sample& sample,
                                        std::span<const Tensor<Real>> images,
                                        const ForwardOptions& opts) const {
  ForwardResult res;
  const std::size_t n_cand = sample.candidates.size();
  if (n_cand != cfg_.n_candidates) {
    throw ConfigError("sample " + sample.record_id + " has " + std::to_string(n_cand) +
                      " candidates, model expects " + std::to_string(cfg_.n_candidates));
  }
  if (sample.context.utterances.size() != cfg_.max_utterances) {
    throw ConfigError("sample " + sample.record_id + ": context length differs from T_u");
  }

  if (cfg_.memory == MemoryVariant::MostSelected) {
    std::vector<data::StickerId> hist;
    for (const auto& h : sample.history) hist.push_back(h.sticker);
    res.abstain = hist.empty();
    res.no_history = hist.empty();
    res.score_values = most_selected_scores(hist, sample.candidates);
    Tensor<Real> s({n_cand});
    for (std::size_t i = 0; i < n_cand; ++i) s[i] = static_cast<Real>(res.score_values[i]);
    res.scores = t.constant(std::move(s));
    return res;
  }

  const nn::Dropout drop{cfg_.dropout, opts.dropout_rng};
  const auto conv = cfg_.conv();

  std::unordered_map<data::StickerId, StickerRep> sticker_cache;
  auto sticker = [&](data::StickerId id) -> const StickerRep& {
    auto it = sticker_cache.find(id);
    if (it != sticker_cache.end()) return it->second;
    if (id >= images.size()) throw data::DataError("unknown sticker id " + std::to_string(id));
    StickerRep rep = encode_sticker(t, t.constant(images[id]), conv);
    return sticker_cache.emplace(id, rep).first->second;
  };

  const Mask& utt_mask = sample.context.utterance_mask;
  std::vector<UtteranceRep> utts;
  for (std::size_t i = 0; i < utt_mask.size(); ++i) {
    if (utt_mask[i]) utts.push_back(encode_utterance(t, sample.context.utterances[i], cfg_.heads, drop));
  }
  if (opts.trace) {
    for (const auto& u : utts)
      for (Var a : u.attention) res.attention.push_back({"utterance", a, u.mask});
  }

  // preference memory
  Var r_pref = t.constant(Tensor<Real>({cfg_.dim}));
  res.no_history = true;
  if (!cfg_.ablation.no_upm && !sample.history.empty()) {
    const std::string hist_block =
        cfg_.share_history_encoder ? "utterance" : "history_utterance";
    std::vector<Var> contexts, stickers;
    for (std::size_t k = 0; k < sample.history.size(); ++k) {
      const auto& pair = sample.history[k];
      if (pair.position_index != k + 1) {
        throw data::DataError("sample " + sample.record_id + ": history out of order");
      }
      std::vector<Var> means;
      const auto& ctx = pair.context;
      for (std::size_t i = 0; i < ctx.utterances.size(); ++i) {
        if (!ctx.utterance_mask[i]) continue;
        auto rep = encode_utterance(t, ctx.utterances[i], cfg_.heads, drop, "embedding", hist_block);
        means.push_back(ops::masked_mean_rows(t, rep.hidden, rep.mask));
      }
      contexts.push_back(means.size() == 1
                             ? means.front()
                             : ops::column_max(t, ops::stack<Real>(t, means), Mask{}, Mask{}));
      stickers.push_back(sticker(pair.sticker).flat);
    }
    const auto mem = encode_history<Real>(t, contexts, stickers, memory_config());
    MemoryRead read;
    switch (cfg_.memory) {
      case MemoryVariant::AverageMem: read = average_read(t, mem); break;
      case MemoryVariant::WeightedMem:
        read = weighted_read(t, build_query<Real>(t, utts), mem);
        break;
      default: read = memory_read(t, build_query<Real>(t, utts), mem); break;
    }
    r_pref = read.r_pref;
    res.no_history = read.no_history;
    if (read.weights.valid()) {
      res.memory_weights = values_of(t.value(read.weights));
      if (opts.trace) res.attention.push_back({"memory", read.weights, mem.slot_mask});
    }
  }

  const auto fusion = fusion_config();
  Var zero_row = t.constant(Tensor<Real>({cfg_.dim}));
  std::vector<Var> y;
  for (std::size_t c = 0; c < n_cand; ++c) {
    const StickerRep& rep = sticker(sample.candidates[c]);
    if (cfg_.n_emoji > 0) res.emoji_logits.push_back(classify_emoji(t, rep.flat));
    CandidateTrace trace;

    std::vector<Var> q2_rows;
    std::size_t next = 0;
    for (std::size_t i = 0; i < utt_mask.size(); ++i) {
      if (!utt_mask[i]) {
        q2_rows.push_back(zero_row);
        continue;
      }
      const UtteranceRep& u = utts[next++];
      if (cfg_.ablation.no_din) {
        const std::array<Var, 2> parts{rep.flat, ops::masked_mean_rows(t, u.hidden, u.mask)};
        q2_rows.push_back(ops::relu(t, nn::linear(t, ops::concat<Real>(t, parts), "nodin")));
      } else {
        auto inter = deep_interact(t, rep, u);
        q2_rows.push_back(inter.q2);
        if (opts.trace) {
          trace.tau_s.push_back(values_of(t.value(inter.tau_s)));
          trace.tau_u.push_back(values_of(t.value(inter.tau_u)));
        }
      }
    }
    Var q2_seq = ops::stack<Real>(t, q2_rows);
    Var g;
    switch (fusion.short_path) {
      case ShortFusion::Gru: g = fuse_short(t, q2_seq, utt_mask); break;
      case ShortFusion::Transformer:
        g = fuse_short_attention(t, q2_seq, utt_mask, cfg_.heads, drop);
        break;
      case ShortFusion::None: g = q2_seq; break;
    }
    auto long_range = fuse_long(t, q2_seq, utt_mask, cfg_.heads, drop);
    Var g_hat = long_range.out;
    if (opts.trace) {
      for (Var a : long_range.attention) res.attention.push_back({"fusion", a, utt_mask});
    }
    Var g_bar = sumulti_combine(t, g, g_hat);
    Var match = match_vector(t, g_bar, utt_mask);
    auto score = gated_score(t, match, r_pref);
    y.push_back(score.y_hat);
    if (opts.trace) {
      trace.y_hat = static_cast<double>(t.value(score.y_hat)[0]);
      trace.gate = static_cast<double>(t.value(score.gate)[0]);
      res.candidates.push_back(std::move(trace));
    }
  }
  res.scores = ops::concat<Real>(t, y);
  res.score_values = values_of(t.value(res.scores));
  return res;
}

template <typename Real>
std::vector<Tensor<Real>> sticker_tensors(const data::ImageStore& store) {
  std::vector<Tensor<Real>> out;
  out.reserve(store.size());
  for (data::StickerId id = 0; id < store.size(); ++id) {
    out.push_back(data::to_tensor<Real>(store.image(id)));
  }
  return out;
}

ModelConfig config_for(const data::Dataset& dataset, ModelConfig base) {
  base.vocab_size = dataset.vocab.size();
  base.n_emoji = dataset.emoji_vocab.size();
  if (base.n_emoji == 0) {
    int top = -1;
    for (const auto& s : dataset.samples)
      for (int l : s.emoji_labels) top = std::max(top, l);
    base.n_emoji = static_cast<std::size_t>(top + 1);
  }
  if (base.n_emoji == 0) base.ablation.no_classify = true;
  base.image_size = dataset.config.image_size;
  base.image_channels = dataset.config.image_channels;
  base.max_words = dataset.config.max_words;
  base.max_utterances = dataset.config.max_utterances;
  base.max_history = dataset.config.max_history;
  base.n_candidates = dataset.config.n_candidates;
  return base;
}

template class PesrsModel<float>;
template class PesrsModel<double>;
template std::vector<Tensor<float>> sticker_tensors<float>(const data::ImageStore&);
template std::vector<Tensor<double>> sticker_tensors<double>(const data::ImageStore&);

}  // namespace pesrs::model
