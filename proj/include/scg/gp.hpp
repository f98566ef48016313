#pragma once

// Small dense Gaussian-process regressor with an RBF kernel, used as the
// Bayesian-optimization surrogate. Sized for tens of points, so a plain
// Cholesky is plenty.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "scg/array.hpp"

namespace scg {

struct GpConfig {
  double length_scale = 1.5;
  double signal_var = 1.0;
  double noise_var = 1e-6;
};

class GaussianProcess {
 public:
  explicit GaussianProcess(GpConfig cfg) : cfg_(cfg) {}

  // Fits on the given points; throws after jitter escalation fails.
  void fit(const std::vector<Mat>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.empty()) throw std::invalid_argument("gp: bad training set");
    xs_ = xs;
    const int n = static_cast<int>(xs.size());
    // center the targets; the GP models residuals around the mean
    y_mean_ = 0.0;
    for (double y : ys) y_mean_ += y;
    y_mean_ /= n;

    Mat K(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        double k = kernel(xs[i], xs[j]);
        K(i, j) = k;
        K(j, i) = k;
      }
    double jitter = 1e-8;
    while (true) {
      Mat A = K;
      for (int i = 0; i < n; ++i) A(i, i) += cfg_.noise_var + jitter;
      if (cholesky(A, chol_)) break;
      jitter *= 100.0;
      if (jitter > 1e-4) throw std::runtime_error("gp: Cholesky failed after jitter escalation");
    }
    alpha_.assign(n, 0.0);
    std::vector<double> rhs(n);
    for (int i = 0; i < n; ++i) rhs[i] = ys[i] - y_mean_;
    // solve L L^T alpha = rhs
    std::vector<double> tmp(n);
    forward_sub(chol_, rhs, tmp);
    backward_sub(chol_, tmp, alpha_);
  }

  // Posterior mean and variance at x.
  std::pair<double, double> predict(const Mat& x) const {
    const int n = static_cast<int>(xs_.size());
    std::vector<double> k(n);
    for (int i = 0; i < n; ++i) k[i] = kernel(x, xs_[i]);
    double mu = y_mean_;
    for (int i = 0; i < n; ++i) mu += k[i] * alpha_[i];
    std::vector<double> v(n);
    forward_sub(chol_, k, v);
    double var = cfg_.signal_var;
    for (int i = 0; i < n; ++i) var -= v[i] * v[i];
    return {mu, std::max(0.0, var)};
  }

 private:
  GpConfig cfg_;
  std::vector<Mat> xs_;
  std::vector<double> alpha_;
  Mat chol_;
  double y_mean_ = 0.0;

  double kernel(const Mat& a, const Mat& b) const {
    double d2 = 0.0;
    for (int i = 0; i < a.size(); ++i) {
      double d = a.a[i] - b.a[i];
      d2 += d * d;
    }
    return cfg_.signal_var * std::exp(-0.5 * d2 / (cfg_.length_scale * cfg_.length_scale));
  }

  static bool cholesky(const Mat& A, Mat& L) {
    const int n = A.rows;
    L = Mat(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j <= i; ++j) {
        double s = A(i, j);
        for (int k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
        if (i == j) {
          if (s <= 0.0) return false;
          L(i, i) = std::sqrt(s);
        } else {
          L(i, j) = s / L(j, j);
        }
      }
    }
    return true;
  }

  static void forward_sub(const Mat& L, const std::vector<double>& b, std::vector<double>& x) {
    const int n = L.rows;
    x.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
      double s = b[i];
      for (int k = 0; k < i; ++k) s -= L(i, k) * x[k];
      x[i] = s / L(i, i);
    }
  }

  static void backward_sub(const Mat& L, const std::vector<double>& b, std::vector<double>& x) {
    const int n = L.rows;
    x.assign(n, 0.0);
    for (int i = n - 1; i >= 0; --i) {
      double s = b[i];
      for (int k = i + 1; k < n; ++k) s -= L(k, i) * x[k];
      x[i] = s / L(i, i);
    }
  }
};

}  // namespace scg
