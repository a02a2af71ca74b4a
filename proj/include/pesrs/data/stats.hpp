#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pesrs/data/types.hpp"

namespace pesrs::data {

struct StatsReport {
  std::size_t pairs = 0;
  double avg_words = 0;  ///< mean raw word count over non-empty context utterances
  std::optional<double> avg_participants;
  std::vector<std::size_t> history_histogram;  ///< index = retained history length
  double history_coverage = 0;                 ///< fraction with >= 1 history pair
  double avg_history_length = 0;               ///< over all samples

  std::string to_json() const;
};

StatsReport dataset_stats(const Dataset& dataset);

}  // namespace pesrs::data
