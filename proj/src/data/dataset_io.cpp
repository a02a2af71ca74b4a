#include "pesrs/data/dataset_io.hpp"

#include <fstream>

#include <json.hpp>

#include "pesrs/data/image_io.hpp"

namespace pesrs::data {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

struct Reader {
  const fs::path& dir;
  const DataConfig& config;
  Dataset& out;
  std::size_t line = 0;

  [[noreturn]] void fail(const std::string& record, const std::string& what) const {
    throw DataError(record.empty() ? what : "record " + record + ": " + what, line);
  }

  StickerId sticker(const json& path, const std::string& record) {
    if (!path.is_string()) fail(record, "sticker path must be a string");
    const auto rel = path.get<std::string>();
    if (auto id = out.stickers.find(rel)) return *id;
    const fs::path full = dir / rel;
    if (!fs::exists(full)) fail(record, "missing image file " + full.string());
    Image img;
    try {
      img = read_png(full, config.image_channels);
    } catch (const DataError& e) {
      fail(record, e.what());
    }
    return out.stickers.add(rel, resize(img, config.image_size, config.image_size));
  }

  DialogContext context(const json& utterances, const std::string& record,
                        std::vector<std::size_t>* raw_words) {
    if (!utterances.is_array()) fail(record, "context must be an array of strings");
    std::vector<std::vector<TokenId>> raw;
    for (const auto& u : utterances) {
      if (!u.is_string()) fail(record, "context must be an array of strings");
      raw.push_back(out.vocab.encode(u.get<std::string>()));
      if (raw_words && !raw.back().empty()) raw_words->push_back(raw.back().size());
    }
    try {
      return make_context(raw, config);
    } catch (const DataError& e) {
      fail(record, e.what());
    }
  }

  Sample sample(const json& j) {
    Sample s;
    s.record_id = j.contains("record_id") ? j["record_id"].get<std::string>()
                                          : std::to_string(line);
    const std::string& rec = s.record_id;
    for (const char* key : {"context", "candidates", "truth_index"})
      if (!j.contains(key)) fail(rec, std::string("missing field '") + key + "'");
    s.user_id = j.value("user_id", std::string{});
    s.context = context(j["context"], rec, &s.raw_utterance_words);
    if (!j["candidates"].is_array()) fail(rec, "candidates must be an array");
    for (const auto& c : j["candidates"]) s.candidates.push_back(sticker(c, rec));
    if (s.candidates.size() != config.n_candidates) {
      fail(rec, "has " + std::to_string(s.candidates.size()) + " candidates, expected " +
                    std::to_string(config.n_candidates));
    }
    const auto& ti = j["truth_index"];
    if (!ti.is_number_integer() || ti.get<long long>() < 0 ||
        ti.get<long long>() >= static_cast<long long>(s.candidates.size())) {
      fail(rec, "truth_index out of range");
    }
    s.truth_index = ti.get<std::size_t>();

    if (j.contains("history")) {
      const auto& hist = j["history"];
      if (!hist.is_array()) fail(rec, "history must be an array");
      const std::size_t skip =
          hist.size() > config.max_history ? hist.size() - config.max_history : 0;
      for (std::size_t k = skip; k < hist.size(); ++k) {
        const auto& h = hist[k];
        if (!h.is_object() || !h.contains("context") || !h.contains("sticker")) {
          fail(rec, "history entries need 'context' and 'sticker'");
        }
        HistoryPair p;
        p.context = context(h["context"], rec, nullptr);
        p.sticker = sticker(h["sticker"], rec);
        p.position_index = s.history.size() + 1;
        s.history.push_back(std::move(p));
      }
    }
    s.history_mask.assign(config.max_history, false);
    for (std::size_t k = 0; k < s.history.size(); ++k) s.history_mask[k] = true;

    if (j.contains("emoji_labels")) {
      for (const auto& e : j["emoji_labels"]) {
        if (!e.is_number_integer()) fail(rec, "emoji_labels must be integers");
        const int label = e.get<int>();
        if (label < 0 || (!out.emoji_vocab.empty() &&
                          static_cast<std::size_t>(label) >= out.emoji_vocab.size())) {
          fail(rec, "emoji label out of range");
        }
        s.emoji_labels.push_back(label);
      }
    }
    if (j.contains("context_users")) s.participants = j["context_users"].get<std::size_t>();
    try {
      validate_sample(s, config, out.stickers.size(), out.vocab.size());
    } catch (const DataError& e) {
      throw DataError(e.what(), line);
    }
    return s;
  }
};

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

ojson context_json(const DialogContext& ctx, const Vocabulary& vocab) {
  ojson arr = ojson::array();
  for (std::size_t i = 0; i < ctx.utterances.size(); ++i)
    if (ctx.utterance_mask[i]) arr.push_back(vocab.decode(ctx.utterances[i]));
  return arr;
}

}  // namespace

Dataset load_dataset(const fs::path& dir, const DataConfig& config) {
  Dataset out;
  out.config = config;
  out.vocab = Vocabulary::load((dir / "vocab.txt").string());
  if (fs::exists(dir / "emoji.txt")) out.emoji_vocab = read_lines(dir / "emoji.txt");

  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  Reader reader{dir, config, out};
  std::string text;
  while (std::getline(in, text)) {
    ++reader.line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError(std::string("malformed record: ") + e.what(), reader.line);
    }
    if (!j.is_object()) throw DataError("malformed record: not an object", reader.line);
    try {
      out.samples.push_back(reader.sample(j));
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed record: ") + e.what(), reader.line);
    }
  }
  return out;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir / "images");
  dataset.vocab.save((dir / "vocab.txt").string());
  if (!dataset.emoji_vocab.empty()) {
    std::ofstream emoji(dir / "emoji.txt");
    for (const auto& e : dataset.emoji_vocab) emoji << e << '\n';
  }
  for (StickerId id = 0; id < dataset.stickers.size(); ++id) {
    write_png(dir / dataset.stickers.path(id), dataset.stickers.image(id));
  }
  std::ofstream out(dir / "manifest.jsonl");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  for (const auto& s : dataset.samples) {
    ojson j;
    j["record_id"] = s.record_id;
    j["user_id"] = s.user_id;
    j["context"] = context_json(s.context, dataset.vocab);
    j["candidates"] = ojson::array();
    for (auto c : s.candidates) j["candidates"].push_back(dataset.stickers.path(c));
    j["truth_index"] = s.truth_index;
    j["history"] = ojson::array();
    for (const auto& h : s.history) {
      j["history"].push_back(ojson{{"context", context_json(h.context, dataset.vocab)},
                              {"sticker", dataset.stickers.path(h.sticker)}});
    }
    if (!s.emoji_labels.empty()) j["emoji_labels"] = s.emoji_labels;
    if (s.participants) j["context_users"] = *s.participants;
    out << j.dump() << '\n';
  }
}

}  // namespace pesrs::data
