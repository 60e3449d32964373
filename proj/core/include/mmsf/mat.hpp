#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "mmsf/errors.hpp"
#include "mmsf/rng.hpp"

namespace mmsf::num {

// Dense row-major matrix. Float for training arithmetic, double for oracle
// and gradient tests; everything downstream is templated on the scalar.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), T(0)) {}
  Mat(int r, int c, T fill) : rows(r), cols(c), data(size_t(r) * size_t(c), fill) {}

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat full(int r, int c, T v) { return Mat(r, c, v); }

  static Mat row_vec(std::initializer_list<T> vals) {
    Mat m(1, int(vals.size()));
    int i = 0;
    for (T v : vals) m.data[size_t(i++)] = v;
    return m;
  }

  static Mat col_vec(std::initializer_list<T> vals) {
    Mat m(int(vals.size()), 1);
    int i = 0;
    for (T v : vals) m.data[size_t(i++)] = v;
    return m;
  }

  T& operator()(int r, int c) { return data[size_t(r) * size_t(cols) + size_t(c)]; }
  T operator()(int r, int c) const { return data[size_t(r) * size_t(cols) + size_t(c)]; }

  T* row_ptr(int r) { return data.data() + size_t(r) * size_t(cols); }
  const T* row_ptr(int r) const { return data.data() + size_t(r) * size_t(cols); }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <class U>
  Mat<U> cast() const {
    Mat<U> m(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) m.data[i] = U(data[i]);
    return m;
  }
};

template <class T>
inline void check_shape(const Mat<T>& m, int r, int c, const char* what) {
  if (m.rows != r || m.cols != c)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(r) + "x" +
                     std::to_string(c) + ", got " + std::to_string(m.rows) + "x" +
                     std::to_string(m.cols));
}

// C = A * B, plain ikj loop; adequate for desk-scale widths.
template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: inner dims disagree");
  Mat<T> c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a.row_ptr(i);
    T* crow = c.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      T av = arow[k];
      if (av == T(0)) continue;
      const T* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class T>
Mat<T> transpose(const Mat<T>& a) {
  Mat<T> t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
T dot(const Mat<T>& a, const Mat<T>& b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  T s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// Vector ops below treat any Mat as a flat vector.

template <class T>
T norm2(const Mat<T>& a) {
  T s = 0;
  for (T v : a.data) s += v * v;
  return T(std::sqrt(double(s)));
}

// a.b / (|a||b|). Zero-norm input is an error by contract: the synthetic
// generators never emit zero patches, so silence here would mask bugs.
template <class T>
T cosine_similarity(const Mat<T>& a, const Mat<T>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  if (a.size() == 0) throw DegenerateInputError("cosine_similarity: empty vectors");
  T na = norm2(a), nb = norm2(b);
  if (na == T(0) || nb == T(0))
    throw DegenerateInputError("cosine_similarity: zero-norm vector");
  T s = dot(a, b) / (na * nb);
  if (s > T(1)) s = T(1);
  if (s < T(-1)) s = T(-1);
  return s;
}

// Numerically stable softmax over a flat vector (max subtraction).
template <class T>
Mat<T> softmax(const Mat<T>& x) {
  Mat<T> y(x.rows, x.cols);
  if (x.size() == 0) return y;
  T mx = x.data[0];
  for (T v : x.data) mx = std::max(mx, v);
  T sum = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    y.data[i] = T(std::exp(double(x.data[i] - mx)));
    sum += y.data[i];
  }
  for (auto& v : y.data) v /= sum;
  return y;
}

// (x - mean) / sqrt(var + eps) * gamma + beta over a flat vector.
// Population variance; eps guards the constant-vector case.
template <class T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gamma, const Mat<T>& beta, T eps) {
  if (x.size() != gamma.size() || x.size() != beta.size())
    throw ShapeError("layer_norm: length mismatch");
  if (!(eps > T(0))) throw DegenerateInputError("layer_norm: eps must be > 0");
  size_t n = x.size();
  T mean = 0;
  for (T v : x.data) mean += v;
  mean /= T(n);
  T var = 0;
  for (T v : x.data) var += (v - mean) * (v - mean);
  var /= T(n);
  T inv = T(1) / T(std::sqrt(double(var + eps)));
  Mat<T> y(x.rows, x.cols);
  for (size_t i = 0; i < n; ++i)
    y.data[i] = (x.data[i] - mean) * inv * gamma.data[i] + beta.data[i];
  return y;
}

template <class T>
Mat<T> random_normal(int r, int c, T stddev, Rng& rng) {
  Mat<T> m(r, c);
  for (auto& v : m.data) v = T(rng.normal() * double(stddev));
  return m;
}

template <class T>
Mat<T> random_uniform(int r, int c, T lo, T hi, Rng& rng) {
  Mat<T> m(r, c);
  for (auto& v : m.data) v = T(rng.uniform(double(lo), double(hi)));
  return m;
}

}  // namespace mmsf::num
