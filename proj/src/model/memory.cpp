#include "pesrs/model/memory.hpp"

#include <array>
#include <cmath>
#include <map>

namespace pesrs::model {

namespace {

std::string key_gru(const MemoryConfig& cfg, const std::string& prefix) {
  return prefix + (cfg.shared_gru ? ".gru" : ".key_gru");
}
std::string value_gru(const MemoryConfig& cfg, const std::string& prefix) {
  return prefix + (cfg.shared_gru ? ".gru" : ".value_gru");
}

}  // namespace

template <typename Real>
void register_memory(ParamSet<Real>& params, const MemoryConfig& cfg, const std::string& prefix) {
  params.add(prefix + ".address", {cfg.dim, cfg.dim});
  if (!cfg.position_aware) return;
  params.add(prefix + ".position", {cfg.max_history, cfg.position_dim});
  nn::register_gru(params, key_gru(cfg, prefix), cfg.dim + cfg.position_dim, cfg.dim);
  if (!cfg.shared_gru) {
    nn::register_gru(params, value_gru(cfg, prefix), cfg.dim + cfg.position_dim, cfg.dim);
  }
}

template <typename Real>
PreferenceMemory encode_history(Tape<Real>& t, std::span<const Var> contexts,
                                std::span<const Var> stickers, const MemoryConfig& cfg,
                                const std::string& prefix) {
  if (contexts.size() != stickers.size() || contexts.size() > cfg.max_history) {
    throw ShapeError("encode_history: " + std::to_string(contexts.size()) + " contexts, " +
                     std::to_string(stickers.size()) + " stickers, T_h=" +
                     std::to_string(cfg.max_history));
  }
  PreferenceMemory mem;
  const std::size_t n = contexts.size();
  mem.slot_mask.assign(cfg.max_history, false);
  for (std::size_t k = 0; k < n; ++k) mem.slot_mask[k] = true;

  std::vector<Var> keys, values;
  if (cfg.position_aware) {
    Var table = t.param(prefix + ".position");
    Var hk = t.constant(Tensor<Real>({cfg.dim}));
    Var ok = hk;
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint32_t pos = static_cast<std::uint32_t>(k);
      Var tk = ops::reshape(t, ops::embedding(t, table, std::span<const std::uint32_t>(&pos, 1)),
                            {cfg.position_dim});
      const std::array<Var, 2> key_in{tk, contexts[k]};
      const std::array<Var, 2> value_in{tk, stickers[k]};
      hk = nn::gru_cell(t, ops::concat<Real>(t, key_in), hk, key_gru(cfg, prefix));
      ok = nn::gru_cell(t, ops::concat<Real>(t, value_in), ok, value_gru(cfg, prefix));
      keys.push_back(hk);
      values.push_back(ok);
    }
  } else {
    keys.assign(contexts.begin(), contexts.end());
    values.assign(stickers.begin(), stickers.end());
  }
  Var zero = t.constant(Tensor<Real>({cfg.dim}));
  while (keys.size() < cfg.max_history) {
    keys.push_back(zero);
    values.push_back(zero);
  }
  if (cfg.max_history == 0) {
    mem.keys = t.constant(Tensor<Real>({0, cfg.dim}));
    mem.values = mem.keys;
  } else {
    mem.keys = ops::stack<Real>(t, keys);
    mem.values = ops::stack<Real>(t, values);
  }
  return mem;
}

template <typename Real>
Var build_query(Tape<Real>& t, std::span<const UtteranceRep> utterances) {
  if (utterances.empty()) throw std::invalid_argument("build_query: no utterance");
  std::vector<Var> means;
  for (const auto& u : utterances) means.push_back(ops::masked_mean_rows(t, u.hidden, u.mask));
  if (means.size() == 1) return means.front();
  return ops::column_max(t, ops::stack<Real>(t, means), Mask{}, Mask{});
}

namespace {

template <typename Real>
MemoryRead empty_read(Tape<Real>& t, const PreferenceMemory& mem) {
  MemoryRead out;
  out.r_pref = t.constant(Tensor<Real>({t.value(mem.values).cols()}));
  out.no_history = true;
  return out;
}

template <typename Real>
MemoryRead attend(Tape<Real>& t, Var query, Var slots, const PreferenceMemory& mem,
                  const std::string& prefix) {
  if (mem.length() == 0) return empty_read(t, mem);
  Var projected = ops::matmul(t, query, t.param(prefix + ".address"));   // [d]
  Var scores = ops::matmul_bt(t, ops::reshape(t, projected, {1, t.value(projected).size()}),
                              slots);                                     // [1, T_h]
  Var delta = ops::reshape(t, ops::masked_softmax(t, scores, mem.slot_mask),
                           {mem.slot_mask.size()});
  MemoryRead out;
  out.weights = delta;
  out.r_pref = ops::matmul(t, delta, mem.values);
  return out;
}

}  // namespace

template <typename Real>
MemoryRead memory_read(Tape<Real>& t, Var query, const PreferenceMemory& mem,
                       const std::string& prefix) {
  return attend(t, query, mem.keys, mem, prefix);
}

template <typename Real>
MemoryRead weighted_read(Tape<Real>& t, Var query, const PreferenceMemory& mem,
                         const std::string& prefix) {
  return attend(t, query, mem.values, mem, prefix);
}

template <typename Real>
MemoryRead average_read(Tape<Real>& t, const PreferenceMemory& mem) {
  const std::size_t n = mem.length();
  if (n == 0) return empty_read(t, mem);
  Tensor<Real> w({mem.slot_mask.size()});
  for (std::size_t k = 0; k < n; ++k) w[k] = Real{1} / static_cast<Real>(n);
  MemoryRead out;
  out.weights = t.constant(w);
  out.r_pref = ops::matmul(t, out.weights, mem.values);
  return out;
}

std::optional<data::StickerId> most_selected(std::span<const data::StickerId> history) {
  if (history.empty()) return std::nullopt;
  std::map<data::StickerId, std::pair<std::size_t, std::size_t>> seen;  // count, last use
  for (std::size_t k = 0; k < history.size(); ++k) {
    auto& e = seen[history[k]];
    ++e.first;
    e.second = k;
  }
  auto best = seen.begin();
  for (auto it = seen.begin(); it != seen.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

std::vector<double> most_selected_scores(std::span<const data::StickerId> history,
                                         std::span<const data::StickerId> candidates) {
  std::vector<double> scores(candidates.size(), 0.0);
  const double slots = static_cast<double>(history.size() + 1);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t k = 0; k < history.size(); ++k) {
      if (history[k] != candidates[i]) continue;
      scores[i] = std::floor(scores[i]) + 1.0 + static_cast<double>(k + 1) / slots;
    }
  }
  return scores;
}

#define PESRS_INSTANTIATE_MEMORY(R)                                                         \
  template void register_memory<R>(ParamSet<R>&, const MemoryConfig&, const std::string&); \
  template PreferenceMemory encode_history<R>(Tape<R>&, std::span<const Var>,              \
                                              std::span<const Var>, const MemoryConfig&,   \
                                              const std::string&);                         \
  template Var build_query<R>(Tape<R>&, std::span<const UtteranceRep>);                    \
  template MemoryRead memory_read<R>(Tape<R>&, Var, const PreferenceMemory&,               \
                                     const std::string&);                                  \
  template MemoryRead weighted_read<R>(Tape<R>&, Var, const PreferenceMemory&,             \
                                       const std::string&);                                \
  template MemoryRead average_read<R>(Tape<R>&, const PreferenceMemory&);

PESRS_INSTANTIATE_MEMORY(float)
PESRS_INSTANTIATE_MEMORY(double)

}  // namespace pesrs::model
