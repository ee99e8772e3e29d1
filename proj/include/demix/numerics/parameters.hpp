#pragma once

#include "demix/numerics/tensor.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace demix {

/// Named tensors in registration order. Names are unique; lookup is by name.
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T>& add(std::string name, Tensor<T> value) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<T>& get(const std::string& name) { return entries_.at(position(name)).second; }
  const Tensor<T>& get(const std::string& name) const { return entries_.at(position(name)).second; }

  const Tensor<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

 private:
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
bool bitwise_equal(const ParameterSet<T>& a, const ParameterSet<T>& b) {
  if (a.size() != b.size()) return false;
  auto ib = b.begin();
  for (const auto& [name, t] : a) {
    if (ib->first != name || !bitwise_equal(t, ib->second)) return false;
    ++ib;
  }
  return true;
}

}  // namespace demix
