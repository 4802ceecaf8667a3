#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "promptkd/rng.hpp"

namespace promptkd {

// Dense row-major matrix. Vectors are 1xN or Nx1 as convenient.
template <typename T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, T(0)) {}

  T* data() { return a.data(); }
  const T* data() const { return a.data(); }
  T& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  T at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
  T* row(int r) { return a.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
  size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(T v) { std::fill(a.begin(), a.end(), v); }
  void zero() { fill(T(0)); }

  static Mat randn(int r, int c, Rng& rng, T stddev) {
    Mat m(r, c);
    for (auto& x : m.a) x = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
    return m;
  }
  static Mat constant(int r, int c, T v) {
    Mat m(r, c);
    m.fill(v);
    return m;
  }
};

// C += A * B
template <typename T>
void matmul_acc(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
  assert(A.cols == B.rows && C.rows == A.rows && C.cols == B.cols);
  const int n = A.rows, m = A.cols, k = B.cols;
  for (int i = 0; i < n; ++i) {
    T* __restrict__ ci = C.row(i);
    const T* __restrict__ ai = A.row(i);
    for (int p = 0; p < m; ++p) {
      const T aip = ai[p];
      if (aip == T(0)) continue;
      const T* __restrict__ bp = B.row(p);
      for (int j = 0; j < k; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += A * B^T
template <typename T>
void matmul_nt_acc(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
  assert(A.cols == B.cols && C.rows == A.rows && C.cols == B.rows);
  const int n = A.rows, m = A.cols, k = B.rows;
  for (int i = 0; i < n; ++i) {
    T* __restrict__ ci = C.row(i);
    const T* __restrict__ ai = A.row(i);
    for (int j = 0; j < k; ++j) {
      const T* __restrict__ bj = B.row(j);
      T s = T(0);
      for (int p = 0; p < m; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C += A^T * B
template <typename T>
void matmul_tn_acc(const Mat<T>& A, const Mat<T>& B, Mat<T>& C) {
  assert(A.rows == B.rows && C.rows == A.cols && C.cols == B.cols);
  const int n = A.rows, m = A.cols, k = B.cols;
  for (int p = 0; p < n; ++p) {
    const T* __restrict__ ap = A.row(p);
    const T* __restrict__ bp = B.row(p);
    for (int i = 0; i < m; ++i) {
      const T api = ap[i];
      if (api == T(0)) continue;
      T* __restrict__ ci = C.row(i);
      for (int j = 0; j < k; ++j) ci[j] += api * bp[j];
    }
  }
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace promptkd
