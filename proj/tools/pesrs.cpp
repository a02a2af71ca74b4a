#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pesrs/data/dataset_io.hpp"
#include "pesrs/data/stats.hpp"
#include "pesrs/data/synthetic.hpp"
#include "pesrs/eval/evaluate.hpp"
#include "pesrs/train/trainer.hpp"

using namespace pesrs;
using nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> ablation;
  std::optional<std::string> memory_variant;
  std::string data_dir;
  std::string out;
  std::string model_path;
  std::string record;
  std::optional<std::size_t> samples;
  std::optional<std::size_t> epochs;
  bool dump_attention = false;
  bool similarity = false;
  bool stats = false;
  std::vector<std::string> sweeps;
};

// ---- configuration

struct Resolved {
  json file = json::object();
  data::DataConfig data;
  data::SyntheticSpec synthetic;
  model::ModelConfig model;
  train::TrainConfig train;
  std::uint64_t seed = 1;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

void apply_data(data::DataConfig& d, const json& j, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto v = it.value().get<std::size_t>();
    if (it.key() == "max_words") d.max_words = v;
    else if (it.key() == "max_utterances") d.max_utterances = v;
    else if (it.key() == "max_history") d.max_history = v;
    else if (it.key() == "n_candidates") d.n_candidates = v;
    else if (it.key() == "image_size") d.image_size = v;
    else if (it.key() == "image_channels") d.image_channels = v;
    else throw UsageError(where + ": unknown data key '" + it.key() + "'");
  }
}

ojson data_json(const data::DataConfig& d) {
  return {{"max_words", d.max_words},         {"max_utterances", d.max_utterances},
          {"max_history", d.max_history},     {"n_candidates", d.n_candidates},
          {"image_size", d.image_size},       {"image_channels", d.image_channels}};
}

void apply_synthetic(data::SyntheticSpec& s, const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "samples") s.samples = v.get<std::size_t>();
    else if (k == "users") s.users = v.get<std::size_t>();
    else if (k == "styles") s.styles = v.get<std::size_t>();
    else if (k == "stickers_per_style") s.stickers_per_style = v.get<std::size_t>();
    else if (k == "words_per_style") s.words_per_style = v.get<std::size_t>();
    else if (k == "filler_words") s.filler_words = v.get<std::size_t>();
    else if (k == "min_words") s.min_words = v.get<std::size_t>();
    else if (k == "max_words") s.max_words = v.get<std::size_t>();
    else if (k == "signal") s.signal = v.get<double>();
    else if (k == "repeat") s.repeat = v.get<double>();
    else if (k == "concentration") s.concentration = v.get<double>();
    else throw UsageError("config: unknown synthetic key '" + k + "'");
  }
}

ojson synthetic_json(const data::SyntheticSpec& s) {
  ojson j;
  j["samples"] = s.samples;
  j["users"] = s.users;
  j["styles"] = s.styles;
  j["stickers_per_style"] = s.stickers_per_style;
  j["words_per_style"] = s.words_per_style;
  j["filler_words"] = s.filler_words;
  j["min_words"] = s.min_words;
  j["max_words"] = s.max_words;
  j["signal"] = s.signal;
  j["repeat"] = s.repeat;
  j["concentration"] = s.concentration;
  return j;
}

Resolved resolve(const Options& o) {
  Resolved r;
  r.synthetic = data::SyntheticSpec{};
  r.data = r.synthetic.config;
  if (!o.config_path.empty()) r.file = read_json_file(o.config_path);
  if (!r.file.is_object()) throw UsageError("config must be a JSON object");
  try {
    for (auto it = r.file.begin(); it != r.file.end(); ++it) {
      const auto& k = it.key();
      const auto& v = it.value();
      if (k == "data") apply_data(r.data, v, "config");
      else if (k == "synthetic") apply_synthetic(r.synthetic, v);
      else if (k == "model") r.model = model::ModelConfig::from_json(v.dump());
      else if (k == "train") {
        for (auto t = v.begin(); t != v.end(); ++t)
          if (!r.train.set(t.key(), t.value().dump()))
            throw UsageError("config: unknown train key '" + t.key() + "'");
      } else if (k == "seed") r.seed = v.get<std::uint64_t>();
      else throw UsageError("config: unknown section '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (o.seed) r.seed = *o.seed;
  r.train.seed = r.seed;
  if (o.threads) r.train.threads = *o.threads;
  if (o.epochs) r.train.max_epochs = *o.epochs;
  if (o.samples) r.synthetic.samples = *o.samples;
  if (o.ablation) r.model.ablation = model::Ablations::parse(*o.ablation);
  if (o.memory_variant) r.model.memory = model::parse_memory_variant(*o.memory_variant);
  r.synthetic.config = r.data;
  r.train.validate();
  return r;
}

void log_config(const std::string& verb, const Resolved& r) {
  ojson j;
  j["verb"] = verb;
  j["seed"] = r.seed;
  j["data"] = data_json(r.data);
  j["synthetic"] = synthetic_json(r.synthetic);
  j["model"] = ojson::parse(r.model.to_json());
  j["train"] = ojson::parse(r.train.to_json());
  std::cerr << "resolved config: " << j.dump() << '\n';
}

data::Dataset load(const Options& o, Resolved& r) {
  if (o.data_dir.empty()) throw UsageError("--data is required");
  const fs::path meta = fs::path(o.data_dir) / "data.json";
  data::DataConfig d = r.data;
  if (fs::exists(meta)) {
    d = data::DataConfig{};
    apply_data(d, read_json_file(meta), meta.string());
    if (r.file.contains("data")) apply_data(d, r.file["data"], "config");
  }
  r.data = d;
  return data::load_dataset(o.data_dir, d);
}

struct Loaded {
  model::ModelConfig model;
  Checkpoint ckpt;
  bool have = false;
};

// Model config from a checkpoint (when given) with flag overrides applied.
Loaded load_model(const Options& o, Resolved& r, const data::Dataset& dataset) {
  Loaded out;
  if (o.model_path.empty()) {
    if (r.model.memory != model::MemoryVariant::MostSelected) {
      throw UsageError("--model is required unless --memory-variant MostSelected");
    }
    out.model = model::config_for(dataset, r.model);
    return out;
  }
  out.ckpt = read_checkpoint(o.model_path);
  out.have = true;
  json meta;
  try {
    meta = json::parse(out.ckpt.metadata);
  } catch (const json::exception&) {
    throw CheckpointError("checkpoint " + o.model_path + " has no readable model config");
  }
  out.model = model::ModelConfig::from_json(meta.at("model").dump());
  if (meta.contains("train")) r.train.float_width = meta["train"].value("float_width", "float");
  if (o.ablation && !(model::Ablations::parse(*o.ablation) == out.model.ablation)) {
    throw UsageError("checkpoint was trained with ablation '" + out.model.ablation.to_string() +
                     "'");
  }
  if (o.memory_variant) out.model.memory = model::parse_memory_variant(*o.memory_variant);
  r.model = out.model;
  return out;
}

template <typename Real>
ParamSet<Real> model_params(const model::PesrsModel<Real>& m, const Loaded& l) {
  ParamSet<Real> p;
  m.register_params(p);
  if (l.have) restore_checkpoint(l.ckpt, p);
  return p;
}

// ---- verbs

int gen_data(const Options& o) {
  auto r = resolve(o);
  log_config("gen-data", r);
  if (o.out.empty()) throw UsageError("--out is required");
  r.synthetic.validate();
  const auto syn = data::gen_synthetic(r.synthetic, r.seed);
  data::write_dataset(o.out, syn.dataset);
  std::ofstream(fs::path(o.out) / "data.json") << data_json(r.data).dump(2) << '\n';
  std::cout << "wrote " << syn.dataset.samples.size() << " samples and "
            << syn.dataset.stickers.size() << " stickers to " << o.out << '\n';
  return kOk;
}

template <typename Real>
int train_as(const Options& o, Resolved& r, const data::Dataset& dataset) {
  model::PesrsModel<Real> m(r.model);
  auto params = m.make_params(r.seed);
  ojson meta;
  meta["model"] = ojson::parse(r.model.to_json());
  meta["train"] = ojson::parse(r.train.to_json());
  meta["data"] = data_json(r.data);
  fs::create_directories(o.out);
  std::ofstream(fs::path(o.out) / "config.json") << meta.dump(2) << '\n';
  train::TrainHooks hooks;
  hooks.on_epoch = [&](std::size_t epoch) {
    std::cerr << "epoch " << epoch << " done\n";
    return false;
  };
  auto summary = train::train(m, params, dataset, r.train, hooks, {o.out, meta.dump()});
  std::cout << "trained " << summary.steps << " steps over " << summary.epochs << " epochs";
  if (summary.last) std::cout << ", last loss " << summary.last->loss;
  std::cout << "\ncheckpoint: " << (fs::path(o.out) / "model.ckpt").string() << '\n';
  return kOk;
}

int train_cmd(const Options& o) {
  auto r = resolve(o);
  if (o.out.empty()) throw UsageError("--out is required");
  const auto dataset = load(o, r);
  r.model = model::config_for(dataset, r.model);
  r.model.validate();
  log_config("train", r);
  return r.train.float_width == "double" ? train_as<double>(o, r, dataset)
                                         : train_as<float>(o, r, dataset);
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text << '\n';
  std::cout << "wrote " << path << '\n';
}

template <typename Real>
int eval_as(const Options& o, const Loaded& l, const data::Dataset& dataset, std::size_t threads) {
  model::PesrsModel<Real> m(l.model);
  const auto params = model_params(m, l);
  eval::EvalOptions opts;
  opts.threads = threads;
  write_or_print(o.out, eval::evaluate(m, params, dataset, opts).to_json());
  return kOk;
}

int eval_cmd(const Options& o) {
  auto r = resolve(o);
  const auto dataset = load(o, r);
  const auto l = load_model(o, r, dataset);
  log_config("eval", r);
  return r.train.float_width == "double" ? eval_as<double>(o, l, dataset, r.train.threads)
                                         : eval_as<float>(o, l, dataset, r.train.threads);
}

template <typename Real>
int predict_as(const Options& o, const Loaded& l, const data::Dataset& dataset) {
  const data::Sample* sample = nullptr;
  for (const auto& s : dataset.samples)
    if (s.record_id == o.record) sample = &s;
  if (!sample) {
    char* end = nullptr;
    const auto idx = std::strtoul(o.record.c_str(), &end, 10);
    if (!o.record.empty() && *end == '\0' && idx < dataset.samples.size()) sample = &dataset.samples[idx];
  }
  if (!sample) throw data::DataError("no record '" + o.record + "' in " + o.data_dir);

  model::PesrsModel<Real> m(l.model);
  const auto params = model_params(m, l);
  const auto images = model::sticker_tensors<Real>(dataset.stickers);
  const std::vector<data::Sample> one{*sample};
  const auto pred = eval::predict_all<Real>(m, params, one, images, 1, true).front();

  std::vector<std::size_t> order(pred.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return pred.scores[a] > pred.scores[b]; });
  std::cout << "record " << sample->record_id << " user " << sample->user_id << '\n';
  std::cout << "gate path: " << (pred.no_history ? "no-history" : "memory") << '\n';
  if (pred.abstain) std::cout << "MostSelected abstains: the user has no history\n";
  std::printf("%-5s %-6s %-28s %-10s %-10s\n", "rank", "index", "sticker", "y_hat", "f_g");
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t c = order[rank];
    const bool traced = c < pred.forward.candidates.size();
    const double gate = traced ? pred.forward.candidates[c].gate : std::nan("");
    std::printf("%-5zu %-6zu %-28s %-10.6f %-10.6f%s\n", rank + 1, c,
                dataset.stickers.path(sample->candidates[c]).c_str(), pred.scores[c], gate,
                c == sample->truth_index ? "  <- truth" : "");
  }
  return kOk;
}

int predict_cmd(const Options& o) {
  auto r = resolve(o);
  if (o.record.empty()) throw UsageError("--record is required");
  const auto dataset = load(o, r);
  const auto l = load_model(o, r, dataset);
  log_config("predict", r);
  return r.train.float_width == "double" ? predict_as<double>(o, l, dataset)
                                         : predict_as<float>(o, l, dataset);
}

template <typename Real>
int analyze_as(const Options& o, const Loaded& l, const data::Dataset& dataset, std::size_t threads) {
  const fs::path out = o.out.empty() ? fs::path("analysis") : fs::path(o.out);
  fs::create_directories(out);
  model::PesrsModel<Real> m(l.model);
  const auto params = model_params(m, l);

  eval::EvalOptions opts;
  opts.threads = threads;
  opts.similarity = o.similarity;
  for (const auto& s : o.sweeps) {
    if (s == "utterances") opts.utterance_sweep = true;
    else if (s == "history") opts.history_sweep = true;
    else throw UsageError("--sweep takes 'utterances' or 'history', not '" + s + "'");
  }
  const auto report = eval::evaluate(m, params, dataset, opts);
  write_or_print((out / "report.json").string(), report.to_json());
  if (opts.utterance_sweep) {
    eval::write_sweep_csv(out / "sweep_utterances.csv", "utterances", report.utterance_sweep);
    std::cout << "wrote " << (out / "sweep_utterances.csv").string() << '\n';
  }
  if (opts.history_sweep) {
    eval::write_sweep_csv(out / "sweep_history.csv", "history", report.history_sweep);
    std::cout << "wrote " << (out / "sweep_history.csv").string() << '\n';
  }
  if (o.dump_attention) {
    const auto images = model::sticker_tensors<Real>(dataset.stickers);
    const auto preds = eval::predict_all<Real>(m, params, dataset.samples, images, threads, true);
    eval::write_attention_report(out / "attention.jsonl", dataset.samples, preds, l.model.grid);
    std::cout << "wrote " << (out / "attention.jsonl").string() << '\n';
  }
  return kOk;
}

int analyze_cmd(const Options& o) {
  auto r = resolve(o);
  const auto dataset = load(o, r);
  if (o.stats) {
    const fs::path out = o.out.empty() ? fs::path("analysis") : fs::path(o.out);
    fs::create_directories(out);
    write_or_print((out / "stats.json").string(), data::dataset_stats(dataset).to_json());
    if (!o.similarity && o.sweeps.empty() && !o.dump_attention) return kOk;
  }
  const auto l = load_model(o, r, dataset);
  log_config("analyze", r);
  return r.train.float_width == "double" ? analyze_as<double>(o, l, dataset, r.train.threads)
                                         : analyze_as<float>(o, l, dataset, r.train.threads);
}

void common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON config (sections: data, synthetic, model, train, seed)");
  cmd->add_option("--seed", o.seed, "Seed for every random stream");
  cmd->add_option("--threads", o.threads, "Worker threads (1 = bit-reproducible)")->check(CLI::PositiveNumber);
  cmd->add_option("--ablation", o.ablation, "Comma list: classify,din,fr,fr2t,upm,tar");
  cmd->add_option("--memory-variant", o.memory_variant, "Full, AverageMem, WeightedMem or MostSelected");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized sticker response selection: data, training, evaluation"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  common(gen, o);
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--samples", o.samples, "Number of samples");

  auto* tr = app.add_subcommand("train", "Train a model");
  common(tr, o);
  tr->add_option("--data", o.data_dir, "Dataset directory")->required();
  tr->add_option("--out", o.out, "Run directory for checkpoints and logs")->required();
  tr->add_option("--epochs", o.epochs, "Override train.max_epochs");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  common(ev, o);
  ev->add_option("--data", o.data_dir, "Dataset directory")->required();
  ev->add_option("--model", o.model_path, "Checkpoint");
  ev->add_option("--out", o.out, "Write the report here instead of stdout");

  auto* pr = app.add_subcommand("predict", "Rank the candidates of one record");
  common(pr, o);
  pr->add_option("--data", o.data_dir, "Dataset directory")->required();
  pr->add_option("--model", o.model_path, "Checkpoint");
  pr->add_option("--record", o.record, "record_id or 0-based manifest index")->required();

  auto* an = app.add_subcommand("analyze", "Similarity buckets, sweeps, attention dumps");
  common(an, o);
  an->add_option("--data", o.data_dir, "Dataset directory")->required();
  an->add_option("--model", o.model_path, "Checkpoint");
  an->add_option("--out", o.out, "Output directory (default ./analysis)");
  an->add_flag("--similarity", o.similarity, "Candidate SSIM buckets");
  an->add_option("--sweep", o.sweeps, "utterances and/or history");
  an->add_flag("--dump-attention", o.dump_attention, "Write attention.jsonl");
  an->add_flag("--stats", o.stats, "Corpus statistics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << '\n' << app.help();
    return kUsage;
  }

  try {
    if (*gen) return gen_data(o);
    if (*tr) return train_cmd(o);
    if (*ev) return eval_cmd(o);
    if (*pr) return predict_cmd(o);
    if (*an) return analyze_cmd(o);
  } catch (const train::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const model::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const data::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
