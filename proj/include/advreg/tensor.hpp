// Dense 64-bit float tensors of rank 1 or 2. Row-major storage.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "advreg/common.hpp"

namespace advreg {

using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> values;
  // Handle into the active tape when this tensor was produced by a taped op.
  NodeId node_id = kNoNode;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<double> v)
      : shape(std::move(s)), values(std::move(v)) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
      throw DimensionError("tensor shape/value length mismatch");
    }
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d <= 0) throw DimensionError("non-positive dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> s) {
    auto n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  static Tensor full(std::vector<std::int64_t> s, double v) {
    auto n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<double> v) {
    auto n = static_cast<std::int64_t>(v.size());
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::int64_t rows, std::int64_t cols,
                       std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::int64_t cols() const { return rank() == 2 ? shape[1] : 1; }
  bool is_scalar() const { return numel() == 1; }

  double& at(std::int64_t r, std::int64_t c) {
    return values[static_cast<std::size_t>(r * cols() + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return values[static_cast<std::size_t>(r * cols() + c)];
  }
  double& operator[](std::int64_t i) { return values[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return values[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace advreg
