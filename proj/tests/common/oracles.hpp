#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "thzleaf/dtree.hpp"
#include "thzleaf/matrix.hpp"

namespace oracle {

using wide = boost::multiprecision::cpp_bin_float_50;

/// Normal equations in 50-digit arithmetic, Gaussian elimination with partial pivoting.
inline std::vector<double> poly_fit(std::span<const double> t, std::span<const double> y, int n, double lo,
                                    double hi) {
  const std::size_t p = static_cast<std::size_t>(n) + 1;
  std::vector<std::vector<wide>> A(p, std::vector<wide>(p + 1, wide(0)));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const wide u = (wide(2) * wide(t[i]) - (wide(lo) + wide(hi))) / (wide(hi) - wide(lo));
    std::vector<wide> pw(p);
    pw[0] = 1;
    for (std::size_t k = 1; k < p; ++k) pw[k] = pw[k - 1] * u;
    for (std::size_t r = 0; r < p; ++r) {
      for (std::size_t c = 0; c < p; ++c) A[r][c] += pw[r] * pw[c];
      A[r][p] += pw[r] * wide(y[i]);
    }
  }
  for (std::size_t k = 0; k < p; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < p; ++r)
      if (abs(A[r][k]) > abs(A[piv][k])) piv = r;
    std::swap(A[k], A[piv]);
    for (std::size_t r = k + 1; r < p; ++r) {
      const wide f = A[r][k] / A[k][k];
      for (std::size_t c = k; c <= p; ++c) A[r][c] -= f * A[k][c];
    }
  }
  std::vector<wide> x(p);
  for (std::size_t k = p; k-- > 0;) {
    wide s = A[k][p];
    for (std::size_t c = k + 1; c < p; ++c) s -= A[k][c] * x[c];
    x[k] = s / A[k][k];
  }
  std::vector<double> out(p);
  for (std::size_t k = 0; k < p; ++k) out[k] = static_cast<double>(x[k]);
  return out;
}

inline double relative_error(std::span<const double> a, std::span<const double> ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ref[i]) * (a[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double cost = std::numeric_limits<double>::infinity();
};

/// Every midpoint of every feature, both children >= min_leaf. Later candidates
/// must improve by more than rounding (1e-12 relative), so exact ties such as the
/// flat stretches of the L1 cost keep the lower feature and threshold.
inline Split brute_force_root(const thzleaf::Matrix& X, std::span<const double> y, int min_leaf,
                              thzleaf::dtree::Criterion c) {
  Split best;
  for (std::size_t f = 0; f < X.cols; ++f) {
    std::vector<double> v;
    for (std::size_t i = 0; i < X.rows; ++i) v.push_back(X(i, f));
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double thr = 0.5 * (v[k] + v[k + 1]);
      std::size_t left = 0;
      for (std::size_t i = 0; i < X.rows; ++i) left += X(i, f) <= thr ? 1 : 0;
      if (left < static_cast<std::size_t>(min_leaf) || X.rows - left < static_cast<std::size_t>(min_leaf)) continue;
      const double cost = thzleaf::dtree::split_cost(X, y, static_cast<int>(f), thr, c);
      if (best.feature < 0 || cost < best.cost - 1e-12 * std::abs(best.cost)) best = {static_cast<int>(f), thr, cost};
    }
  }
  return best;
}

}  // namespace oracle
