#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pesrs::data {

template <typename T>
struct CandidateSet {
  std::vector<T> candidates;
  std::size_t truth_index = 0;
};

/// Draws k distinct negatives uniformly without replacement from the pool
/// members that differ from `truth`, then inserts the truth at a random slot.
template <typename T, typename Rng>
CandidateSet<T> sample_negatives(const std::vector<T>& pool, const T& truth, std::size_t k,
                                 Rng& rng) {
  std::vector<const T*> eligible;
  eligible.reserve(pool.size());
  for (const auto& item : pool)
    if (!(item == truth)) eligible.push_back(&item);
  if (eligible.size() < k) {
    throw std::invalid_argument("sample_negatives: sticker set of size " +
                                std::to_string(pool.size()) + " has only " +
                                std::to_string(eligible.size()) + " non-truth stickers, need " +
                                std::to_string(k));
  }
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  CandidateSet<T> out;
  std::uniform_int_distribution<std::size_t> slot(0, k);
  out.truth_index = slot(rng);
  out.candidates.reserve(k + 1);
  for (std::size_t i = 0; i < k; ++i) {
    if (i == out.truth_index) out.candidates.push_back(truth);
    out.candidates.push_back(*eligible[i]);
  }
  if (out.truth_index == k) out.candidates.push_back(truth);
  return out;
}

}  // namespace pesrs::data
