#pragma once

#include <string>
#include <vector>

#include "pifield/common.hpp"
#include "pifield/rng.hpp"

namespace pifield {

// Dense row-major float32 array. Reductions inside kernels accumulate in
// double; storage stays 32-bit.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
  }
  Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<long>(data.size()) != numel_of(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int e : s) {
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
      n *= e;
    }
    return n;
  }
  static std::string shape_str(const std::vector<int>& s);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor ones(std::vector<int> s) { return full(std::move(s), 1.0f); }
  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  long numel() const { return static_cast<long>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  float& operator[](long i) { return data[static_cast<size_t>(i)]; }
  float operator[](long i) const { return data[static_cast<size_t>(i)]; }

  // 2-d accessors used by the matrix kernels.
  float& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  float at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  bool all_finite() const;
  Tensor reshaped(std::vector<int> s) const {
    if (numel_of(s) != numel())
      throw ShapeError("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }
};

// Kaiming-uniform fan-in initialization, biases left to zero by callers.
Tensor kaiming_uniform(std::vector<int> shape, long fan_in, Rng& rng);

}  // namespace pifield
