#include "pesrs/data/synthetic.hpp"

#include <cmath>
#include <random>

#include "pesrs/data/image_io.hpp"
#include "pesrs/data/sampling.hpp"

namespace pesrs::data {

void SyntheticSpec::validate() const {
  if (styles == 0) throw std::invalid_argument("synthetic spec: need at least one style");
  if (stickers_per_style == 0 || words_per_style == 0 || users == 0 || samples == 0) {
    throw std::invalid_argument("synthetic spec: counts must be positive");
  }
  if ((styles - 1) * stickers_per_style + 1 < config.n_candidates) {
    throw std::invalid_argument("synthetic spec: too few off-style stickers for " +
                                std::to_string(config.n_candidates) + " candidates");
  }
  if (min_words == 0 || min_words > max_words) {
    throw std::invalid_argument("synthetic spec: bad word range");
  }
  for (double p : {signal, repeat, concentration})
    if (p < 0 || p > 1) throw std::invalid_argument("synthetic spec: probabilities must lie in [0,1]");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

Image style_image(std::size_t style, std::size_t variant, std::size_t n_styles,
                  const DataConfig& config) {
  Image img;
  img.height = img.width = config.image_size;
  img.channels = config.image_channels;
  img.pixels.resize(img.height * img.width * img.channels);

  // hue wheel colour
  const double hue = static_cast<double>(style) / static_cast<double>(n_styles);
  double rgb[3];
  for (int c = 0; c < 3; ++c) {
    const double k = std::fmod(5.0 - 2.0 * c + hue * 6.0, 6.0);
    rgb[c] = 1.0 - std::max(0.0, std::min({k, 4.0 - k, 1.0}));
  }
  const std::size_t kind = style % 4;
  const double freq = 2.0 + static_cast<double>((style / 4) % 3);
  const double phase = 0.7 * static_cast<double>(variant);
  const double size = static_cast<double>(config.image_size);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
      double t = 0;
      switch (kind) {
        case 0: t = std::sin(2 * kPi * freq * v + phase); break;
        case 1: t = std::sin(2 * kPi * freq * u + phase); break;
        case 2: t = std::sin(2 * kPi * freq * u + phase) * std::sin(2 * kPi * freq * v); break;
        default: t = std::sin(2 * kPi * freq * (u + v) + phase); break;
      }
      const double shade = 0.55 + 0.4 * t;
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double base = img.channels == 1 ? (rgb[0] + rgb[1] + rgb[2]) / 3.0 : rgb[c];
        img.pixels[(y * img.width + x) * img.channels + c] = static_cast<float>(base * shade);
      }
    }
  }
  quantize_8bit(img);
  return img;
}

struct Generator {
  const SyntheticSpec& spec;
  std::mt19937_64 rng;
  SyntheticDataset out;
  std::vector<std::vector<StickerId>> by_style;
  std::vector<std::vector<double>> preference;  // user x style
  std::vector<std::vector<std::size_t>> favourite;

  bool coin(double p) { return std::uniform_real_distribution<double>(0, 1)(rng) < p; }
  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }

  TokenId style_word(std::size_t style) {
    return static_cast<TokenId>(2 + style * spec.words_per_style + uniform(0, spec.words_per_style - 1));
  }
  TokenId filler() {
    return static_cast<TokenId>(2 + spec.styles * spec.words_per_style + uniform(0, spec.filler_words - 1));
  }

  DialogContext context(std::size_t style) {
    const std::size_t n_utt = uniform(1, spec.config.max_utterances);
    const std::size_t max_w = std::min(spec.max_words, spec.config.max_words);
    const std::size_t min_w = std::min(spec.min_words, max_w);
    std::vector<std::vector<TokenId>> raw(n_utt);
    for (auto& utt : raw) {
      const std::size_t n = uniform(min_w, max_w);
      const std::size_t anchor = uniform(0, n - 1);
      for (std::size_t i = 0; i < n; ++i) {
        if (i != anchor && spec.filler_words > 0 && coin(0.5)) {
          utt.push_back(filler());
        } else {
          utt.push_back(style_word(coin(spec.signal) ? style : uniform(0, spec.styles - 1)));
        }
      }
    }
    return make_context(raw, spec.config);
  }

  std::size_t pick_style(std::size_t user) {
    std::discrete_distribution<std::size_t> d(preference[user].begin(), preference[user].end());
    return d(rng);
  }

  StickerId pick_sticker(std::size_t user, std::size_t style) {
    const std::size_t v = coin(spec.repeat) ? favourite[user][style]
                                            : uniform(0, spec.stickers_per_style - 1);
    return by_style[style][v];
  }

  void build_vocab() {
    std::vector<std::string> tokens{kPadToken, kOovToken};
    out.token_style.assign(2, -1);
    for (std::size_t s = 0; s < spec.styles; ++s) {
      for (std::size_t w = 0; w < spec.words_per_style; ++w) {
        tokens.push_back("s" + std::to_string(s) + "w" + std::to_string(w));
        out.token_style.push_back(static_cast<int>(s));
      }
    }
    for (std::size_t f = 0; f < spec.filler_words; ++f) {
      tokens.push_back("f" + std::to_string(f));
      out.token_style.push_back(-1);
    }
    out.dataset.vocab = Vocabulary(std::move(tokens));
  }

  void build_stickers() {
    by_style.resize(spec.styles);
    for (std::size_t s = 0; s < spec.styles; ++s) {
      out.dataset.emoji_vocab.push_back("style" + std::to_string(s));
      for (std::size_t v = 0; v < spec.stickers_per_style; ++v) {
        const std::string path =
            "images/s" + std::to_string(s) + "_v" + std::to_string(v) + ".png";
        by_style[s].push_back(out.dataset.stickers.add(path, style_image(s, v, spec.styles, spec.config)));
        out.sticker_style.push_back(static_cast<int>(s));
      }
    }
  }

  void build_users() {
    preference.assign(spec.users, std::vector<double>(spec.styles, 0.0));
    favourite.assign(spec.users, std::vector<std::size_t>(spec.styles, 0));
    for (std::size_t u = 0; u < spec.users; ++u) {
      const std::size_t top = uniform(0, spec.styles - 1);
      for (std::size_t s = 0; s < spec.styles; ++s) {
        preference[u][s] = (1.0 - spec.concentration) / static_cast<double>(spec.styles) +
                           (s == top ? spec.concentration : 0.0);
        favourite[u][s] = uniform(0, spec.stickers_per_style - 1);
      }
    }
  }

  Sample sample(std::size_t index) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof(id), "syn%05zu", index);
    s.record_id = id;
    const std::size_t user = index % spec.users;
    s.user_id = "u" + std::to_string(user);

    const std::size_t n_hist = uniform(0, spec.config.max_history);
    for (std::size_t k = 0; k < n_hist; ++k) {
      const std::size_t style = pick_style(user);
      HistoryPair p;
      p.context = context(style);
      p.sticker = pick_sticker(user, style);
      p.position_index = k + 1;
      s.history.push_back(std::move(p));
    }
    s.history_mask.assign(spec.config.max_history, false);
    for (std::size_t k = 0; k < n_hist; ++k) s.history_mask[k] = true;

    const std::size_t style = pick_style(user);
    const StickerId truth = pick_sticker(user, style);
    s.context = context(style);
    for (const auto& u : s.context.utterances)
      if (u.length() > 0) s.raw_utterance_words.push_back(u.length());

    std::vector<StickerId> pool;
    for (std::size_t other = 0; other < spec.styles; ++other)
      if (other != style) pool.insert(pool.end(), by_style[other].begin(), by_style[other].end());
    auto cand = sample_negatives(pool, truth, spec.config.n_candidates - 1, rng);
    s.candidates = std::move(cand.candidates);
    s.truth_index = cand.truth_index;
    for (auto c : s.candidates) s.emoji_labels.push_back(out.sticker_style[c]);
    s.participants = uniform(2, 6);
    return s;
  }
};

}  // namespace

SyntheticDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Generator g{spec, std::mt19937_64(seed), {}, {}, {}, {}};
  g.out.dataset.config = spec.config;
  g.build_vocab();
  g.build_stickers();
  g.build_users();
  for (std::size_t i = 0; i < spec.samples; ++i) g.out.dataset.samples.push_back(g.sample(i));
  return std::move(g.out);
}

std::vector<double> planted_scores(const SyntheticDataset& data, const Sample& sample) {
  std::vector<double> votes(data.dataset.emoji_vocab.size(), 0.0);
  for (const auto& u : sample.context.utterances) {
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      if (!u.mask[i]) break;
      const int st = data.token_style.at(u.tokens[i]);
      if (st >= 0) votes[static_cast<std::size_t>(st)] += 1.0;
    }
  }
  std::vector<double> scores;
  for (auto c : sample.candidates) {
    double s = votes[static_cast<std::size_t>(data.sticker_style.at(c))];
    for (const auto& h : sample.history)
      if (h.sticker == c) s += 0.01;
    scores.push_back(s);
  }
  return scores;
}

}  // namespace pesrs::data
