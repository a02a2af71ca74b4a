#include "pesrs/data/stats.hpp"

#include <json.hpp>

namespace pesrs::data {

StatsReport dataset_stats(const Dataset& dataset) {
  if (dataset.samples.empty()) throw DataError("dataset_stats: empty dataset");
  StatsReport r;
  r.pairs = dataset.samples.size();
  r.history_histogram.assign(dataset.config.max_history + 1, 0);
  double words = 0, participants = 0;
  std::size_t utterances = 0, with_participants = 0, with_history = 0, history_total = 0;
  for (const auto& s : dataset.samples) {
    for (auto w : s.raw_utterance_words) words += static_cast<double>(w);
    utterances += s.raw_utterance_words.size();
    if (s.participants) {
      participants += static_cast<double>(*s.participants);
      ++with_participants;
    }
    const std::size_t h = s.history.size();
    if (h >= r.history_histogram.size()) r.history_histogram.resize(h + 1, 0);
    ++r.history_histogram[h];
    history_total += h;
    if (h > 0) ++with_history;
  }
  const auto n = static_cast<double>(r.pairs);
  r.avg_words = utterances ? words / static_cast<double>(utterances) : 0.0;
  if (with_participants) r.avg_participants = participants / static_cast<double>(with_participants);
  r.history_coverage = static_cast<double>(with_history) / n;
  r.avg_history_length = static_cast<double>(history_total) / n;
  return r;
}

std::string StatsReport::to_json() const {
  nlohmann::ordered_json j;
  j["pairs"] = pairs;
  j["avg_words"] = avg_words;
  if (avg_participants) j["avg_participants"] = *avg_participants;
  else j["avg_participants"] = nullptr;
  j["history_histogram"] = history_histogram;
  j["history_coverage"] = history_coverage;
  j["avg_history_length"] = avg_history_length;
  return j.dump(2);
}

}  // namespace pesrs::data
