#pragma once

#include <vector>

#include "obfrev/graph.hpp"

namespace obfrev {

/// Dense 64-bit value tensor in (channels, height, width) row-major layout.
/// Flat feature vectors (fc outputs) use shape (features, 1, 1) with
/// spatial == false.
struct Tensor {
  TensorShape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(TensorShape s) : shape(s), data(static_cast<size_t>(s.volume()), 0.0) {}

  static Tensor zeros(TensorShape s) { return Tensor(s); }

  int64_t volume() const { return shape.volume(); }

  double& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape.h + y) * shape.w + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape.h + y) * shape.w + x];
  }
};

}  // namespace obfrev
