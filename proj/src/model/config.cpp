#include "pesrs/model/config.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <json.hpp>

namespace pesrs::model {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

}  // namespace

Ablations Ablations::parse(const std::string& list) {
  Ablations a;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string name = lower(trim(item));
    if (name.empty() || name == "none") continue;
    for (const char* prefix : {"w/o-", "w/o_", "w/o", "no-", "no_"}) {
      if (name.rfind(prefix, 0) == 0) {
        name = name.substr(std::string(prefix).size());
        break;
      }
    }
    if (name == "classify") a.no_classify = true;
    else if (name == "din") a.no_din = true;
    else if (name == "fr") a.no_fr = true;
    else if (name == "fr2t") a.fr2t = true;
    else if (name == "upm") a.no_upm = true;
    else if (name == "tar") a.no_tar = true;
    else throw ConfigError("unknown ablation '" + trim(item) + "'");
  }
  return a;
}

std::string Ablations::to_string() const {
  std::vector<std::string> parts;
  if (no_classify) parts.push_back("classify");
  if (no_din) parts.push_back("din");
  if (no_fr) parts.push_back("fr");
  if (fr2t) parts.push_back("fr2t");
  if (no_upm) parts.push_back("upm");
  if (no_tar) parts.push_back("tar");
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ",") + p;
  return out;
}

MemoryVariant parse_memory_variant(const std::string& name) {
  const std::string n = lower(name);
  if (n == "full") return MemoryVariant::Full;
  if (n == "averagemem" || n == "average") return MemoryVariant::AverageMem;
  if (n == "weightedmem" || n == "weighted") return MemoryVariant::WeightedMem;
  if (n == "mostselected" || n == "most-selected") return MemoryVariant::MostSelected;
  throw ConfigError("unknown memory variant '" + name + "'");
}

std::string to_string(MemoryVariant v) {
  switch (v) {
    case MemoryVariant::Full: return "full";
    case MemoryVariant::AverageMem: return "averagemem";
    case MemoryVariant::WeightedMem: return "weightedmem";
    case MemoryVariant::MostSelected: return "mostselected";
  }
  return "full";
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must cover the pad and unk tokens");
  if (dim == 0 || ffn_dim == 0 || heads == 0 || position_dim == 0) {
    throw ConfigError("dimensions must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (max_words == 0 || max_utterances == 0 || n_candidates < 2) {
    throw ConfigError("max_words, max_utterances must be >= 1 and n_candidates >= 2");
  }
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
  if (!(init_std > 0) || !(init_clip > 0) || embedding_std < 0) {
    throw ConfigError("init_std and init_clip must be > 0, embedding_std >= 0");
  }
  if (!ablation.no_classify && n_emoji == 0) {
    throw ConfigError("emoji classification enabled but no emoji vocabulary configured");
  }
  if (ablation.fr2t && ablation.no_fr) {
    throw ConfigError("ablations fr2t and w/o FR are mutually exclusive");
  }
  if (ablation.no_upm && memory != MemoryVariant::Full) {
    throw ConfigError("memory variants require the preference memory (drop w/o UPM)");
  }
  try {
    conv().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["n_emoji"] = n_emoji;
  j["dim"] = dim;
  j["ffn_dim"] = ffn_dim;
  j["heads"] = heads;
  j["position_dim"] = position_dim;
  j["image_size"] = image_size;
  j["image_channels"] = image_channels;
  j["conv_stage1"] = conv_stage1;
  j["conv_stage2"] = conv_stage2;
  j["grid"] = grid;
  j["max_words"] = max_words;
  j["max_utterances"] = max_utterances;
  j["max_history"] = max_history;
  j["n_candidates"] = n_candidates;
  j["dropout"] = dropout;
  j["init_std"] = init_std;
  j["init_clip"] = init_clip;
  j["embedding_std"] = embedding_std;
  j["share_history_encoder"] = share_history_encoder;
  j["share_memory_gru"] = share_memory_gru;
  j["ablation"] = ablation.to_string();
  j["memory_variant"] = model::to_string(memory);
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const auto& v = it.value();
    if (k == "vocab_size") c.vocab_size = v.get<std::size_t>();
    else if (k == "n_emoji") c.n_emoji = v.get<std::size_t>();
    else if (k == "dim") c.dim = v.get<std::size_t>();
    else if (k == "ffn_dim") c.ffn_dim = v.get<std::size_t>();
    else if (k == "heads") c.heads = v.get<std::size_t>();
    else if (k == "position_dim") c.position_dim = v.get<std::size_t>();
    else if (k == "image_size") c.image_size = v.get<std::size_t>();
    else if (k == "image_channels") c.image_channels = v.get<std::size_t>();
    else if (k == "conv_stage1") c.conv_stage1 = v.get<std::size_t>();
    else if (k == "conv_stage2") c.conv_stage2 = v.get<std::size_t>();
    else if (k == "grid") c.grid = v.get<std::size_t>();
    else if (k == "max_words") c.max_words = v.get<std::size_t>();
    else if (k == "max_utterances") c.max_utterances = v.get<std::size_t>();
    else if (k == "max_history") c.max_history = v.get<std::size_t>();
    else if (k == "n_candidates") c.n_candidates = v.get<std::size_t>();
    else if (k == "dropout") c.dropout = v.get<double>();
    else if (k == "init_std") c.init_std = v.get<double>();
    else if (k == "init_clip") c.init_clip = v.get<double>();
    else if (k == "embedding_std") c.embedding_std = v.get<double>();
    else if (k == "share_history_encoder") c.share_history_encoder = v.get<bool>();
    else if (k == "share_memory_gru") c.share_memory_gru = v.get<bool>();
    else if (k == "ablation") c.ablation = Ablations::parse(v.get<std::string>());
    else if (k == "memory_variant") c.memory = parse_memory_variant(v.get<std::string>());
    else throw ConfigError("unknown model config key '" + k + "'");
  }
  return c;
}

}  // namespace pesrs::model
