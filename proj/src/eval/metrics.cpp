#include "pesrs/eval/metrics.hpp"

#include <stdexcept>
#include <string>

namespace pesrs::eval {

std::size_t truth_rank(std::span<const double> scores, std::size_t truth_index) {
  if (truth_index >= scores.size()) {
    throw std::invalid_argument("truth index " + std::to_string(truth_index) + " out of range for " +
                                std::to_string(scores.size()) + " candidates");
  }
  const double s = scores[truth_index];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > s || (scores[i] == s && i < truth_index)) ++rank;
  }
  return rank;
}

double average_precision(std::span<const double> scores, std::size_t truth_index) {
  return 1.0 / static_cast<double>(truth_rank(scores, truth_index));
}

int recall_at_k(std::span<const double> scores, std::size_t truth_index, std::size_t k) {
  if (k == 0 || k > scores.size()) {
    throw std::invalid_argument("recall_at_k: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(scores.size()) + "]");
  }
  return truth_rank(scores, truth_index) <= k ? 1 : 0;
}

void RankingAccumulator::add_rank(std::size_t rank) {
  ++n_;
  ap_sum_ += 1.0 / static_cast<double>(rank);
  for (std::size_t i = 0; i < kRecallCutoffs.size(); ++i)
    if (rank <= kRecallCutoffs[i]) ++hits_[i];
}

double RankingAccumulator::map() const {
  return n_ ? ap_sum_ / static_cast<double>(n_) : 0.0;
}

double RankingAccumulator::recall(std::size_t k) const {
  for (std::size_t i = 0; i < kRecallCutoffs.size(); ++i) {
    if (kRecallCutoffs[i] == k) return n_ ? static_cast<double>(hits_[i]) / static_cast<double>(n_) : 0.0;
  }
  throw std::invalid_argument("recall cutoff " + std::to_string(k) + " is not tracked");
}

}  // namespace pesrs::eval
