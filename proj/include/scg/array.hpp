#pragma once

// Dense rank<=2 arrays of doubles, row-major. Everything the models in this
// library touch is either a vector (cols == 1) or a small matrix, so no
// broadcasting machinery beyond what the graph ops implement.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace scg {

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {
    if (a.size() != static_cast<size_t>(r) * c) throw std::invalid_argument("Mat: data size mismatch");
  }

  static Mat zeros(int r, int c) { return Mat(r, c); }
  static Mat vec(std::initializer_list<double> xs) {
    Mat m(static_cast<int>(xs.size()), 1);
    int i = 0;
    for (double x : xs) m.a[i++] = x;
    return m;
  }
  static Mat vec(const std::vector<double>& xs) {
    Mat m(static_cast<int>(xs.size()), 1);
    m.a = xs;
    return m;
  }

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
  double& operator[](int i) { return a[i]; }
  double operator[](int i) const { return a[i]; }

  int size() const { return rows * cols; }
  bool is_vector() const { return cols == 1; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double x : a)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double v) {
    for (double& x : a) x = v;
  }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

inline double dot(const Mat& x, const Mat& y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) s += x.a[i] * y.a[i];
  return s;
}

inline double norm2(const Mat& x) { return std::sqrt(dot(x, x)); }

}  // namespace scg
