#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pesrs/core/nn.hpp"
#include "pesrs/data/types.hpp"
#include "pesrs/model/encoders.hpp"

namespace pesrs::model {

struct MemoryConfig {
  std::size_t dim = 100;
  std::size_t position_dim = 8;
  std::size_t max_history = 10;
  bool position_aware = true;  ///< false for the w/o TAR ablation
  bool shared_gru = false;
};

template <typename Real>
void register_memory(ParamSet<Real>& params, const MemoryConfig& cfg,
                     const std::string& prefix = "memory");

struct PreferenceMemory {
  Var keys;    ///< [T_h, d], zero rows at masked slots
  Var values;  ///< [T_h, d]
  Mask slot_mask;
  std::size_t length() const { return count_true(slot_mask); }
};

/// Builds the key/value memory from pooled history inputs (oldest first):
/// `contexts[k]` is h̄^k and `stickers[k]` is Ō_k, both [d]. With position
/// awareness, each chain runs a GRU over t_k ⊕ input from a zero state.
template <typename Real>
PreferenceMemory encode_history(Tape<Real>& t, std::span<const Var> contexts,
                                std::span<const Var> stickers, const MemoryConfig& cfg,
                                const std::string& prefix = "memory");

/// Mean over real words per utterance, then elementwise max across utterances.
template <typename Real>
Var build_query(Tape<Real>& t, std::span<const UtteranceRep> utterances);

struct MemoryRead {
  Var r_pref;   ///< [d]
  Var weights;  ///< [T_h] slot weights; invalid when there is no history
  bool no_history = false;
};

/// delta = softmax over real slots of h W ĥ^k; r = sum_k delta_k Ô_k.
template <typename Real>
MemoryRead memory_read(Tape<Real>& t, Var query, const PreferenceMemory& mem,
                       const std::string& prefix = "memory");
/// Unweighted mean of the real value slots.
template <typename Real>
MemoryRead average_read(Tape<Real>& t, const PreferenceMemory& mem);
/// delta = softmax over real slots of h W Ô_k (no key addressing).
template <typename Real>
MemoryRead weighted_read(Tape<Real>& t, Var query, const PreferenceMemory& mem,
                         const std::string& prefix = "memory");

/// The user's modal history sticker, ties broken by the most recent use.
/// Empty history abstains.
std::optional<data::StickerId> most_selected(std::span<const data::StickerId> history);

/// Candidate ranking scores for the MostSelected rule: use count plus a
/// recency fraction below 1, so the modal sticker ranks first.
std::vector<double> most_selected_scores(std::span<const data::StickerId> history,
                                         std::span<const data::StickerId> candidates);

}  // namespace pesrs::model
