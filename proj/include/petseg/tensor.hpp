#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "petseg/error.hpp"
#include "petseg/volume.hpp"

namespace petseg {

// Dense batch of multi-channel volumes, laid out [n][c][z][y][x] with x
// fastest (the same order as VolumeGrid).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int batch, int channels, Shape3 spatial, T fill = T(0))
      : batch_(batch), channels_(channels), spatial_(spatial),
        data_(static_cast<std::size_t>(batch) * static_cast<std::size_t>(channels) * spatial.voxels(), fill) {}

  int batch() const { return batch_; }
  int channels() const { return channels_; }
  const Shape3& spatial() const { return spatial_; }
  std::size_t voxels() const { return spatial_.voxels(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T* channel(int n, int c) { return data_.data() + offset(n, c); }
  const T* channel(int n, int c) const { return data_.data() + offset(n, c); }
  T* sample(int n) { return channel(n, 0); }
  const T* sample(int n) const { return channel(n, 0); }

  T& at(int n, int c, int x, int y, int z) { return data_[offset(n, c) + spatial_.index(x, y, z)]; }
  T at(int n, int c, int x, int y, int z) const { return data_[offset(n, c) + spatial_.index(x, y, z)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const {
    return batch_ == o.batch_ && channels_ == o.channels_ && spatial_ == o.spatial_;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  std::size_t offset(int n, int c) const {
    return (static_cast<std::size_t>(n) * static_cast<std::size_t>(channels_) + static_cast<std::size_t>(c)) *
           spatial_.voxels();
  }

  int batch_ = 0;
  int channels_ = 0;
  Shape3 spatial_{};
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw GeometryError(std::string(what) + ": tensor shape mismatch (" + std::to_string(a.channels()) + "x" +
                        to_string(a.spatial()) + " vs " + std::to_string(b.channels()) + "x" +
                        to_string(b.spatial()) + ")");
  }
}

}  // namespace petseg
