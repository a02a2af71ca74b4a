#include "pesrs/data/types.hpp"

#include <fstream>
#include <sstream>

namespace pesrs::data {

StickerId ImageStore::add(std::string path, Image image) {
  if (auto existing = find(path)) return *existing;
  const auto id = static_cast<StickerId>(images_.size());
  lookup_.emplace(path, id);
  paths_.push_back(std::move(path));
  images_.push_back(std::move(image));
  return id;
}

std::optional<StickerId> ImageStore::find(const std::string& path) const {
  auto it = lookup_.find(path);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[kPadId] != kPadToken || tokens_[kOovId] != kOovToken) {
    throw DataError(std::string("vocabulary must start with ") + kPadToken + " and " +
                    kOovToken);
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!lookup_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw DataError("vocabulary: duplicate token '" + tokens_[i] + "'", i + 1);
    }
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = lookup_.find(token);
  return it == lookup_.end() ? kOovId : it->second;
}

std::vector<TokenId> Vocabulary::encode(const std::string& text) const {
  std::istringstream words(text);
  std::vector<TokenId> out;
  std::string word;
  while (words >> word) out.push_back(id(word));
  return out;
}

std::string Vocabulary::decode(const Utterance& utt) const {
  std::string out;
  for (std::size_t i = 0; i < utt.tokens.size(); ++i) {
    if (!utt.mask[i]) break;
    if (!out.empty()) out += ' ';
    out += token(utt.tokens[i]);
  }
  return out;
}

Utterance pad_or_truncate(const std::vector<TokenId>& raw_tokens, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("pad_or_truncate: max_len must be >= 1");
  Utterance u;
  u.tokens.assign(max_len, kPadId);
  u.mask.assign(max_len, false);
  const std::size_t n = std::min(raw_tokens.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    u.tokens[i] = raw_tokens[i];
    u.mask[i] = true;
  }
  return u;
}

DialogContext make_context(const std::vector<std::vector<TokenId>>& utterances,
                           const DataConfig& config) {
  std::vector<const std::vector<TokenId>*> real;
  for (const auto& u : utterances)
    if (!u.empty()) real.push_back(&u);
  if (real.empty()) throw DataError("dialog context has no non-empty utterance");
  const std::size_t skip =
      real.size() > config.max_utterances ? real.size() - config.max_utterances : 0;
  DialogContext ctx;
  for (std::size_t i = skip; i < real.size(); ++i) {
    ctx.utterances.push_back(pad_or_truncate(*real[i], config.max_words));
    ctx.utterance_mask.push_back(true);
  }
  while (ctx.utterances.size() < config.max_utterances) {
    ctx.utterances.push_back(pad_or_truncate({}, config.max_words));
    ctx.utterance_mask.push_back(false);
  }
  return ctx;
}

DialogContext keep_last_utterances(const DialogContext& context, std::size_t keep) {
  const std::size_t real = context.length();
  if (keep == 0) throw std::invalid_argument("keep_last_utterances: keep must be >= 1");
  if (keep >= real) return context;
  DialogContext out;
  const std::size_t max_words = context.utterances.front().tokens.size();
  for (std::size_t i = real - keep; i < real; ++i) {
    out.utterances.push_back(context.utterances[i]);
    out.utterance_mask.push_back(true);
  }
  while (out.utterances.size() < context.utterances.size()) {
    out.utterances.push_back(pad_or_truncate({}, max_words));
    out.utterance_mask.push_back(false);
  }
  return out;
}

namespace {

bool is_prefix_mask(const Mask& mask) {
  bool seen_false = false;
  for (bool b : mask) {
    if (b && seen_false) return false;
    if (!b) seen_false = true;
  }
  return true;
}

void validate_context(const DialogContext& ctx, const DataConfig& config,
                      std::size_t vocab_size, const std::string& where) {
  if (ctx.utterances.size() != config.max_utterances ||
      ctx.utterance_mask.size() != config.max_utterances) {
    throw DataError(where + ": context must hold exactly T_u utterances");
  }
  if (ctx.length() == 0) throw DataError(where + ": context has no real utterance");
  if (!is_prefix_mask(ctx.utterance_mask)) throw DataError(where + ": utterance mask not a prefix");
  for (std::size_t i = 0; i < ctx.utterances.size(); ++i) {
    const auto& u = ctx.utterances[i];
    if (u.tokens.size() != config.max_words || u.mask.size() != config.max_words) {
      throw DataError(where + ": utterance length must equal T_x");
    }
    if (!is_prefix_mask(u.mask)) throw DataError(where + ": token mask not a prefix");
    if (ctx.utterance_mask[i] != (u.length() > 0)) {
      throw DataError(where + ": utterance mask disagrees with token mask");
    }
    for (std::size_t j = 0; j < u.tokens.size(); ++j) {
      if (u.tokens[j] >= vocab_size) throw DataError(where + ": token id out of vocabulary");
      if (!u.mask[j] && u.tokens[j] != kPadId) throw DataError(where + ": non-pad token in padding");
    }
  }
}

}  // namespace

void validate_sample(const Sample& s, const DataConfig& config,
                     std::size_t sticker_count, std::size_t vocab_size) {
  const std::string where = "sample " + s.record_id;
  validate_context(s.context, config, vocab_size, where);
  if (s.candidates.size() != config.n_candidates) {
    throw DataError(where + ": has " + std::to_string(s.candidates.size()) +
                    " candidates, expected " + std::to_string(config.n_candidates));
  }
  if (s.truth_index >= s.candidates.size()) throw DataError(where + ": truth_index out of range");
  for (auto c : s.candidates)
    if (c >= sticker_count) throw DataError(where + ": unknown sticker id");
  if (s.history.size() > config.max_history) throw DataError(where + ": history longer than T_h");
  if (s.history_mask.size() != config.max_history || count_true(s.history_mask) != s.history.size() ||
      !is_prefix_mask(s.history_mask)) {
    throw DataError(where + ": history mask inconsistent");
  }
  for (std::size_t k = 0; k < s.history.size(); ++k) {
    if (s.history[k].position_index != k + 1) {
      throw DataError(where + ": history positions must be 1..n in order");
    }
    if (s.history[k].sticker >= sticker_count) throw DataError(where + ": unknown history sticker");
    validate_context(s.history[k].context, config, vocab_size, where + " history");
  }
  if (!s.emoji_labels.empty() && s.emoji_labels.size() != s.candidates.size()) {
    throw DataError(where + ": emoji_labels must have one entry per candidate");
  }
}

Sample truncate_history(const Sample& sample, std::size_t keep, std::size_t max_history) {
  Sample out = sample;
  if (keep < out.history.size()) {
    out.history.erase(out.history.begin(),
                      out.history.begin() + static_cast<std::ptrdiff_t>(out.history.size() - keep));
  }
  for (std::size_t k = 0; k < out.history.size(); ++k) out.history[k].position_index = k + 1;
  out.history_mask.assign(max_history, false);
  for (std::size_t k = 0; k < out.history.size(); ++k) out.history_mask[k] = true;
  return out;
}

}  // namespace pesrs::data
