#pragma once

// Reference computations used by the tests. Kept independent of the library
// code they check: plain loops, quadrature and finite differences.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "mae/tensor.hpp"

namespace oracle {

inline double integrate(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-13);
}

// Central-difference gradient of f at x.
inline std::vector<double> central_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-12});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double gaussian_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2 * M_PI * var);
}

// KL(N(m1, v1) || N(m2, v2)) by quadrature over +-12 sd of the first argument.
inline double kl_quadrature(double m1, double v1, double m2, double v2) {
  const double sd = std::sqrt(v1);
  return integrate(
      [&](double x) {
        const double p = gaussian_pdf(x, m1, v1);
        if (p == 0.0) return 0.0;
        const double log_ratio = -0.5 * std::log(v1 / v2) - 0.5 * (x - m1) * (x - m1) / v1 +
                                 0.5 * (x - m2) * (x - m2) / v2;
        return p * log_ratio;
      },
      m1 - 12 * sd, m1 + 12 * sd);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline mae::Tensor random_tensor(const mae::Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  mae::Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Adam written out as the textbook recurrence for one scalar parameter.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double param, double grad) {
    ++t;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return param - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle
