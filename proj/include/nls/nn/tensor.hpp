#pragma once

#include <array>
#include <cstddef>
#include <new>
#include <string>
#include <vector>

#include "nls/core/error.hpp"

namespace nls::nn {

/// 64-byte aligned storage. Vectorized kernels peel unaligned heads with
/// scalar code, so a fixed alignment keeps results independent of where the
/// heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW tensor. Matrices are stored as (n, c, 1, 1).
template <typename T>
struct Tensor {
  std::array<int, 4> shape{0, 0, 1, 1};
  Buffer<T> data;

  Tensor() = default;
  Tensor(int n, int c, int h = 1, int w = 1, T fill = T{})
      : shape{n, c, h, w}, data(static_cast<std::size_t>(n) * c * h * w, fill) {}

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(shape[2]) * shape[3]; }

  T& at(int i, int ch, int y = 0, int x = 0) {
    return data[((static_cast<std::size_t>(i) * shape[1] + ch) * shape[2] + y) * shape[3] + x];
  }
  T at(int i, int ch, int y = 0, int x = 0) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + ch) * shape[2] + y) * shape[3] + x];
  }

  T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * shape[1] * plane(); }
  const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * shape[1] * plane(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const std::array<int, 4>& s) {
  return "(" + std::to_string(s[0]) + ", " + std::to_string(s[1]) + ", " + std::to_string(s[2]) + ", " +
         std::to_string(s[3]) + ")";
}

template <typename T>
void require_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  }
}

}  // namespace nls::nn
