#pragma once

#include <array>
#include <cstddef>
#include <span>

namespace pesrs::eval {

/// 1-based rank of the truth under descending score; ties go to the lower
/// candidate index.
std::size_t truth_rank(std::span<const double> scores, std::size_t truth_index);

/// Single-relevant average precision: 1 / rank.
double average_precision(std::span<const double> scores, std::size_t truth_index);

/// 1 when the truth ranks within the top k, else 0. Requires 1 <= k <= T_c.
int recall_at_k(std::span<const double> scores, std::size_t truth_index, std::size_t k);

inline constexpr std::array<std::size_t, 3> kRecallCutoffs{1, 2, 5};

/// Running MAP and R_n@{1,2,5} over ranks.
class RankingAccumulator {
 public:
  void add_rank(std::size_t rank);
  void add(std::span<const double> scores, std::size_t truth_index) {
    add_rank(truth_rank(scores, truth_index));
  }
  std::size_t count() const { return n_; }
  double map() const;
  double recall(std::size_t k) const;

 private:
  std::size_t n_ = 0;
  double ap_sum_ = 0;
  std::array<std::size_t, kRecallCutoffs.size()> hits_{};
};

}  // namespace pesrs::eval
