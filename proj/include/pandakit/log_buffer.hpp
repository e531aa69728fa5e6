#pragma once

#include <cstddef>
#include <vector>

namespace pandakit {

// Fixed-capacity ring buffer; once full, each push drops the oldest entry.
template <typename T>
class LogBuffer {
 public:
  explicit LogBuffer(std::size_t capacity = 0) { reset(capacity); }

  // Drops all entries and sets a new capacity.
  void reset(std::size_t capacity) {
    data_.clear();
    data_.reserve(capacity);
    capacity_ = capacity;
    head_ = 0;
  }

  void push(const T& value) {
    if (capacity_ == 0) return;
    if (data_.size() < capacity_) {
      data_.push_back(value);
    } else {
      data_[head_] = value;
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }

  // Oldest to newest.
  std::vector<T> snapshot() const {
    std::vector<T> out;
    out.reserve(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out.push_back(data_[(head_ + i) % data_.size()]);
    return out;
  }

 private:
  std::vector<T> data_;
  std::size_t capacity_ = 0;
  std::size_t head_ = 0;
};

}  // namespace pandakit
