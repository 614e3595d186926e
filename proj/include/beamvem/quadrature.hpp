#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

namespace beamvem {

template <typename Scalar = double>
struct QuadratureRule {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> points;   // on [0, 1]
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weights;  // sum to 1
};

// Gauss-Legendre rule mapped to [0, 1]; exact for polynomials of degree 2*count - 1.
template <typename Scalar = double>
QuadratureRule<Scalar> gauss_legendre(int count) {
  if (count < 1) throw std::invalid_argument("gauss_legendre: need at least one point");
  QuadratureRule<Scalar> rule;
  rule.points.resize(count);
  rule.weights.resize(count);
  for (int i = 0; i < count; ++i) {
    Scalar x = std::cos(std::numbers::pi_v<Scalar> * (Scalar(i) + Scalar(0.75)) / (Scalar(count) + Scalar(0.5)));
    Scalar dp = 0;
    for (int iter = 0; iter < 100; ++iter) {
      Scalar p0 = 1, p1 = x;
      for (int k = 2; k <= count; ++k) {
        const Scalar pk = ((2 * k - 1) * x * p1 - (k - 1) * p0) / Scalar(k);
        p0 = p1;
        p1 = pk;
      }
      if (count == 1) p0 = 1;
      dp = Scalar(count) * (x * p1 - p0) / (x * x - 1);
      const Scalar dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < Scalar(1e-15)) break;
    }
    // recompute derivative at the converged root
    Scalar p0 = 1, p1 = x;
    for (int k = 2; k <= count; ++k) {
      const Scalar pk = ((2 * k - 1) * x * p1 - (k - 1) * p0) / Scalar(k);
      p0 = p1;
      p1 = pk;
    }
    dp = Scalar(count) * (x * p1 - p0) / (x * x - 1);
    rule.points(count - 1 - i) = Scalar(0.5) * (x + 1);
    rule.weights(count - 1 - i) = Scalar(1) / ((1 - x * x) * dp * dp);
  }
  return rule;
}

}  // namespace beamvem
