#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tacmamba/common.hpp"

namespace tacmamba {

// Flat parameter storage with a named-view directory. All trainable state of a
// model lives in one store; optimizers walk the flat array, checkpoints walk
// the directory. Views never overlap and the total size is fixed once built.
template <typename R>
class ParamStore {
 public:
  struct View {
    std::size_t offset = 0;
    std::vector<std::int64_t> shape;
    std::size_t numel = 0;
  };

  std::span<R> add(const std::string& name, std::vector<std::int64_t> shape) {
    if (views_.count(name)) throw StateError("duplicate parameter view: " + name);
    std::size_t n = static_cast<std::size_t>(Tensor<R>::numel_of(shape));
    View v{values_.size(), std::move(shape), n};
    values_.resize(values_.size() + n, R(0));
    trainable_.resize(values_.size(), 1);
    views_.emplace(name, v);
    return span(name);
  }

  bool has(const std::string& name) const { return views_.count(name) != 0; }

  std::span<R> span(const std::string& name) {
    const View& v = view(name);
    return std::span<R>(values_.data() + v.offset, v.numel);
  }
  std::span<const R> span(const std::string& name) const {
    const View& v = view(name);
    return std::span<const R>(values_.data() + v.offset, v.numel);
  }
  const View& view(const std::string& name) const {
    auto it = views_.find(name);
    if (it == views_.end()) throw StateError("unknown parameter view: " + name);
    return it->second;
  }

  const std::map<std::string, View>& views() const { return views_; }
  std::vector<R>& values() { return values_; }
  const std::vector<R>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  bool trainable_at(std::size_t i) const { return trainable_[i] != 0; }
  bool view_trainable(const std::string& name) const {
    const View& v = view(name);
    return trainable_[v.offset] != 0;
  }

  // Marks every parameter whose view name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool flag) {
    for (const auto& [name, v] : views_) {
      if (name.rfind(prefix, 0) == 0) {
        for (std::size_t i = 0; i < v.numel; ++i) trainable_[v.offset + i] = flag ? 1 : 0;
      }
    }
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (auto f : trainable_) n += f;
    return n;
  }

 private:
  std::vector<R> values_;
  std::vector<std::uint8_t> trainable_;
  std::map<std::string, View> views_;
};

// Seeded weight-fill helpers shared by model initializers.
template <typename R>
void fill_uniform(std::span<R> dst, std::mt19937& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : dst) x = static_cast<R>(dist(rng));
}

template <typename R>
void fill_kaiming_uniform(std::span<R> dst, std::mt19937& rng, std::int64_t fan_in) {
  double k = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  fill_uniform(dst, rng, -k, k);
}

}  // namespace tacmamba
