#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace stmbr {

/// Dense row-major tensor. Activations are NCHW; parameters are 1-, 2- or 4-D.
/// A dimension of zero is legal and yields an empty tensor (used e.g. for the
/// zero-channel auxiliary input when channel boosting is disabled).
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(checked_numel(shape)), T(0));
  }

  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (checked_numel(shape) != static_cast<int64_t>(data.size()))
      throw std::invalid_argument("tensor: shape does not match data length");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  bool empty() const { return data.empty(); }
  int ndim() const { return static_cast<int>(shape.size()); }

  int dim(int i) const {
    if (i < 0 || i >= ndim()) throw std::invalid_argument("tensor: dimension index out of range");
    return shape[static_cast<size_t>(i)];
  }

  // NCHW accessors; no bounds checks on the hot path.
  T& at4(int n, int c, int h, int w) {
    return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T at4(int n, int c, int h, int w) const {
    return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  T& at2(int r, int c) { return data[static_cast<size_t>(static_cast<int64_t>(r) * shape[1] + c)]; }
  T at2(int r, int c) const { return data[static_cast<size_t>(static_cast<int64_t>(r) * shape[1] + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename U>
  Tensor<U> astype() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  static int64_t checked_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Every primitive op calls this on its output: a non-finite value is an
/// error surfaced immediately, never propagated.
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op) {
  for (const T v : t.data) {
    if (!std::isfinite(static_cast<double>(v)))
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
  }
}

/// Flat row-major argmax positions into the pre-pool tensor, one per pooled
/// output element.
struct PoolIndices {
  std::vector<int> shape;  // same as the pooled output
  std::vector<int64_t> flat;

  bool empty() const { return flat.empty(); }
};

}  // namespace stmbr
