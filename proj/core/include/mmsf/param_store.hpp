#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mmsf/mat.hpp"

namespace mmsf::num {

// Flat named registry of trainable arrays with per-name gradient slots and
// Adam moment buffers. Iteration always goes through the insertion-ordered
// vector so parameter order (and everything downstream: updates, checkpoints)
// is deterministic.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Mat<T> value;
    Mat<T> grad;
    Mat<T> m;  // Adam first moment
    Mat<T> v;  // Adam second moment
  };

  int add(const std::string& name, Mat<T> value) {
    if (index_.count(name)) throw Error("parameter name not unique: " + name);
    Entry e;
    e.name = name;
    e.grad = Mat<T>::zeros(value.rows, value.cols);
    e.m = Mat<T>::zeros(value.rows, value.cols);
    e.v = Mat<T>::zeros(value.rows, value.cols);
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    int id = int(entries_.size()) - 1;
    index_[name] = id;
    return id;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }

  Entry& at(int id) { return entries_[size_t(id)]; }
  const Entry& at(int id) const { return entries_[size_t(id)]; }
  Entry& at(const std::string& name) { return entries_[size_t(id_of(name))]; }

  int count() const { return int(entries_.size()); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& e : entries_)
      std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
  }

  // Total trainable scalar count.
  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  // Approximate serialized size assuming the store's own precision.
  size_t byte_size() const { return scalar_count() * sizeof(T); }

  int64_t step = 0;  // optimizer step counter

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace mmsf::num
