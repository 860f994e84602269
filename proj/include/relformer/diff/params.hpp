#pragma once

#include <string>
#include <utility>
#include <vector>

#include "relformer/diff/tensor.hpp"

namespace relformer::diff {

// Ordered, named view over trainable leaves. Order defines checkpoint layout
// and optimizer state alignment.
template <typename T>
class ParameterList {
 public:
  void Add(std::string name, Tensor<T> tensor) { entries_.emplace_back(std::move(name), std::move(tensor)); }

  void Append(const std::string& prefix, const ParameterList& other) {
    for (const auto& [name, t] : other.entries_) Add(prefix + name, t);
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor<T>& operator[](std::size_t i) { return entries_[i].second; }
  const Tensor<T>& operator[](std::size_t i) const { return entries_[i].second; }

  std::size_t NumScalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void ZeroGrad() {
    for (auto& e : entries_) e.second.ZeroGrad();
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

}  // namespace relformer::diff
