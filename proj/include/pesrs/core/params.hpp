#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pesrs/core/tensor.hpp"

namespace pesrs {

/// Named, ordered collection of trainable tensors. Names are unique and the
/// registration order is the canonical iteration order (checkpoints, gradient
/// buffers, the gradient checker all walk it).
template <typename Real>
class ParamSet {
 public:
  std::size_t add(std::string name, Shape shape);

  bool contains(std::string_view name) const;
  /// Throws std::out_of_range naming the missing parameter.
  std::size_t index(std::string_view name) const;

  std::size_t size() const { return values_.size(); }
  std::size_t element_count() const;

  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  Tensor<Real>& value(std::size_t i) { return values_[i]; }
  const Tensor<Real>& value(std::size_t i) const { return values_[i]; }
  Tensor<Real>& value(std::string_view name) { return values_[index(name)]; }
  const Tensor<Real>& value(std::string_view name) const {
    return values_[index(name)];
  }

  /// Gaussian with the given std, resampled until it falls in [-clip, clip].
  void init_truncated_normal(std::uint64_t seed, double stddev, double clip);
  void zero();

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (std::size_t i = 0; i < size(); ++i) {
      out.add(names_[i], values_[i].shape());
      out.value(i) = values_[i].template cast<Other>();
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<Real>> values_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Gradient buffers aligned with a ParamSet's registration order.
template <typename Real>
class GradSet {
 public:
  GradSet() = default;
  explicit GradSet(const ParamSet<Real>& params);

  std::size_t size() const { return grads_.size(); }
  Tensor<Real>& operator[](std::size_t i) { return grads_[i]; }
  const Tensor<Real>& operator[](std::size_t i) const { return grads_[i]; }

  void zero();
  GradSet& operator+=(const GradSet& other);
  void scale(Real factor);
  double global_norm() const;

 private:
  std::vector<Tensor<Real>> grads_;
};

/// Checkpoint container: magic + version header, an opaque metadata string
/// (the model config as JSON), then name -> shape -> row-major f64 values.
struct Checkpoint {
  static constexpr char kMagic[8] = {'P', 'E', 'S', 'R', 'S', 'C', 'K', 'P'};
  static constexpr std::uint32_t kVersion = 1;

  std::string metadata;
  std::vector<std::string> names;
  std::vector<Tensor<double>> values;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename Real>
Checkpoint make_checkpoint(const ParamSet<Real>& params, std::string metadata);

/// Copies checkpoint values into an already-registered ParamSet. Every
/// parameter must be present with an identical shape.
template <typename Real>
void restore_checkpoint(const Checkpoint& ckpt, ParamSet<Real>& params);

}  // namespace pesrs
