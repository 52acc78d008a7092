#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "asdkit/common.hpp"

namespace asdkit::ag {

/// Dense row-major tensor of doubles, rank 0..3. Rank 0 is a scalar with one
/// element. Shapes are value types; no views, every op owns its storage.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(size_t(count(shape)), 0.0);
  }

  static Tensor scalar(double x) {
    Tensor t{std::vector<int>{}};
    t.v[0] = x;
    return t;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double x) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }

  static Tensor from(std::vector<int> s, std::vector<double> data) {
    Tensor t;
    t.shape = std::move(s);
    if (int64_t(data.size()) != count(t.shape))
      throw ContractError("tensor data size does not match shape " + shape_str(t.shape));
    t.v = std::move(data);
    return t;
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  int64_t numel() const { return int64_t(v.size()); }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }

  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }

  double& at(int r, int c) { return v[size_t(r) * cols() + c]; }
  double at(int r, int c) const { return v[size_t(r) * cols() + c]; }

  double& at(int b, int t, int c) {
    return v[(size_t(b) * shape[1] + t) * shape[2] + c];
  }
  double at(int b, int t, int c) const {
    return v[(size_t(b) * shape[1] + t) * shape[2] + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
  }
  std::string shape_str() const { return shape_str(shape); }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ContractError(std::string(op) + ": shape mismatch " + a.shape_str() +
                        " vs " + b.shape_str());
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw ContractError(std::string(op) + ": expected rank-2 tensor, got " + t.shape_str());
}

/// Fill with U(-a, a).
inline void fill_uniform(Tensor& t, double a, Rng& rng) {
  for (double& x : t.v) x = rng.uniform(-a, a);
}

inline void fill_gaussian(Tensor& t, double stdev, Rng& rng) {
  for (double& x : t.v) x = stdev * rng.gaussian();
}

}  // namespace asdkit::ag
