#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "psmmlab/tensor.hpp"

namespace psmmlab {

// Fixed splitting of one 64-bit seed into independent sub-seeds.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;  // false for batch-norm running statistics
};

// Named registry of every tensor a model owns. Insertion order is stable and
// defines the checkpoint layout.
class ParameterSet {
 public:
  Tensor& add(const std::string& name, Tensor value, bool trainable = true) {
    require(!index_.contains(name), "duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    if (trainable) value.ensure_grad();
    params_.push_back({name, std::move(value), trainable});
    return params_.back().value;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return params_[it->second];
  }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "unknown parameter: " + name);
    return it->second;
  }
  Parameter& at(std::size_t i) { return params_.at(i); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

  // Number of trainable scalars.
  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_)
      if (p.trainable) p.value.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

inline Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace psmmlab
