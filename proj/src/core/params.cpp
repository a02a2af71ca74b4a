#include "pesrs/core/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pesrs {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
std::size_t ParamSet<Real>::add(std::string name, Shape shape) {
  if (lookup_.contains(name)) {
    throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
  }
  lookup_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.emplace_back(std::move(shape));
  return values_.size() - 1;
}

template <typename Real>
bool ParamSet<Real>::contains(std::string_view name) const {
  return lookup_.find(std::string(name)) != lookup_.end();
}

template <typename Real>
std::size_t ParamSet<Real>::index(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) {
    throw std::out_of_range("ParamSet: no parameter named '" +
                            std::string(name) + "'");
  }
  return it->second;
}

template <typename Real>
std::size_t ParamSet<Real>::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

template <typename Real>
void ParamSet<Real>::init_truncated_normal(std::uint64_t seed, double stddev,
                                           double clip) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : values_) {
    for (auto& x : v.data()) {
      double draw = normal(rng);
      while (std::abs(draw) > clip) draw = normal(rng);
      x = static_cast<Real>(draw);
    }
  }
}

template <typename Real>
void ParamSet<Real>::zero() {
  for (auto& v : values_) v.fill(Real{0});
}

template <typename Real>
GradSet<Real>::GradSet(const ParamSet<Real>& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads_.emplace_back(params.value(i).shape());
  }
}

template <typename Real>
void GradSet<Real>::zero() {
  for (auto& g : grads_) g.fill(Real{0});
}

template <typename Real>
GradSet<Real>& GradSet<Real>::operator+=(const GradSet& other) {
  if (other.grads_.size() != grads_.size()) {
    throw ShapeError("GradSet::+=: parameter count mismatch");
  }
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
  return *this;
}

template <typename Real>
void GradSet<Real>::scale(Real factor) {
  for (auto& g : grads_) {
    for (auto& x : g.data()) x *= factor;
  }
}

template <typename Real>
double GradSet<Real>::global_norm() const {
  double sq = 0.0;
  for (const auto& g : grads_) {
    for (Real x : g.data()) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  return std::sqrt(sq);
}

namespace {

template <typename T>
void put(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw CheckpointError("checkpoint truncated");
  return value;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  auto n = get<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw CheckpointError("checkpoint string too long");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("checkpoint truncated");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(Checkpoint::kMagic, sizeof(Checkpoint::kMagic));
  put<std::uint32_t>(os, Checkpoint::kVersion);
  put_string(os, ckpt.metadata);
  put<std::uint64_t>(os, ckpt.names.size());
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    const auto& t = ckpt.values[i];
    put_string(os, ckpt.names[i]);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto extent : t.shape()) put<std::uint64_t>(os, extent);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw CheckpointError("write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof(Checkpoint::kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, Checkpoint::kMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  auto version = get<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.metadata = get_string(is);
  auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    ckpt.names.push_back(get_string(is));
    auto rank = get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& extent : shape) extent = get<std::uint64_t>(is);
    Tensor<double> t(shape);
    is.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint truncated in " + ckpt.names.back());
    ckpt.values.push_back(std::move(t));
  }
  return ckpt;
}

template <typename Real>
Checkpoint make_checkpoint(const ParamSet<Real>& params, std::string metadata) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.names.push_back(params.name(i));
    ckpt.values.push_back(params.value(i).template cast<double>());
  }
  return ckpt;
}

template <typename Real>
void restore_checkpoint(const Checkpoint& ckpt, ParamSet<Real>& params) {
  if (ckpt.names.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.names.size()) +
                          " parameters, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) {
    if (!params.contains(ckpt.names[i])) {
      throw CheckpointError("unexpected parameter '" + ckpt.names[i] + "'");
    }
    auto& target = params.value(ckpt.names[i]);
    if (target.shape() != ckpt.values[i].shape()) {
      throw CheckpointError("shape mismatch for '" + ckpt.names[i] + "': " +
                            shape_string(ckpt.values[i].shape()) + " vs " +
                            shape_string(target.shape()));
    }
    target = ckpt.values[i].template cast<Real>();
  }
}

template class ParamSet<float>;
template class ParamSet<double>;
template class GradSet<float>;
template class GradSet<double>;
template Checkpoint make_checkpoint(const ParamSet<float>&, std::string);
template Checkpoint make_checkpoint(const ParamSet<double>&, std::string);
template void restore_checkpoint(const Checkpoint&, ParamSet<float>&);
template void restore_checkpoint(const Checkpoint&, ParamSet<double>&);

}  // namespace pesrs
