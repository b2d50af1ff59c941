#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvs/errors.hpp"

namespace nvs {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor. `grad`, when non-empty, mirrors `data`'s shape;
// parameters keep requires_grad set so tapes accumulate into them.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)), data(shape_size(shape), S(0)) {}
  Tensor(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
    if (data.size() != shape_size(shape))
      throw ShapeError("tensor: element count " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }

  static Tensor full(Shape sh, S v) {
    Tensor t(std::move(sh));
    for (auto& x : t.data) x = v;
    return t;
  }

  std::size_t size() const { return data.size(); }

  std::size_t rows() const {
    if (shape.empty()) throw ShapeError("tensor: rows() on rank-0 tensor");
    return shape[0];
  }

  // Elements per leading-axis slice; treats any rank >= 1 as a matrix.
  std::size_t cols() const {
    if (shape.empty()) throw ShapeError("tensor: cols() on rank-0 tensor");
    return size() / shape[0];
  }

  S& at2(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  S at2(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }

  void zero_grad() { grad.assign(data.size(), S(0)); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    out.requires_grad = requires_grad;
    return out;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Row-major boolean matrix; true = allowed. Used for attention masks.
struct BoolMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> v;

  BoolMatrix() = default;
  BoolMatrix(std::size_t r, std::size_t c, bool fill = false)
      : rows(r), cols(c), v(r * c, fill ? 1 : 0) {}

  bool at(std::size_t r, std::size_t c) const { return v[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool x) { v[r * cols + c] = x ? 1 : 0; }

  bool operator==(const BoolMatrix& o) const {
    return rows == o.rows && cols == o.cols && v == o.v;
  }
};

}  // namespace nvs
