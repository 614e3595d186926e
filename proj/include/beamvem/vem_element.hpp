// General-order virtual element for Euler-Bernoulli beams.
//
// Local coordinate x runs over [0, L_e]. The projected deflection is the
// monomial expansion  a_1 + a_2 x + ... + a_{n+1} x^n  and the element degrees
// of freedom are ordered
//
//     [ w1, theta1, w2, theta2, m_0, ..., m_{n-4} ]
//
// where the internal moments are  m_{k-4} = L_e^{-(k-3)} * int_0^{L_e} x^{k-4} w dx.
//
// For beams the virtual space coincides with P_n, so the projection has no
// kernel beyond the two modes fixed by a_1 = w1, a_2 = theta1 and no
// stabilization term is added to the consistency stiffness.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace beamvem {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar = double>
struct MaterialParams {
  Scalar elastic_modulus{1};
  Scalar inertia_moment{1};
  Scalar cross_section_area{1};

  Scalar flexural_rigidity() const { return elastic_modulus * inertia_moment; }
  Scalar axial_rigidity() const { return elastic_modulus * cross_section_area; }

  void validate() const {
    if (!(elastic_modulus > 0) || !(inertia_moment > 0) || !(cross_section_area > 0)) {
      throw std::invalid_argument("material parameters E, I, A must be positive");
    }
  }
};

template <typename Scalar = double>
struct ElementSpec {
  int order{3};
  Scalar length{1};
  MaterialParams<Scalar> material{};

  int dof_count() const { return order + 1; }
  int internal_moment_count() const { return order - 3; }

  void validate() const {
    if (order < 3) {
      throw std::invalid_argument("element order must be >= 3, got " + std::to_string(order));
    }
    if (!(length > 0)) throw std::invalid_argument("element length must be positive");
    material.validate();
  }
};

// Transverse load on one element. `distributed` holds q_0 ... q_{n-4} of
// q(x) = sum_j q_j x^j in local coordinates; the point terms act on the nodal DOFs.
template <typename Scalar = double>
struct LoadSpec {
  VectorX<Scalar> distributed{};
  Scalar force_start{0};
  Scalar moment_start{0};
  Scalar force_end{0};
  Scalar moment_end{0};
};

template <typename Scalar = double>
struct ProjectionSystem {
  MatrixX<Scalar> G;  // (n-1) x (n-1)
  MatrixX<Scalar> r;  // (n-1) x (n+1)
  MatrixX<Scalar> P;  // (n-1) x (n+1), P = G^{-1} r
};

template <typename Scalar>
Scalar monomial_integral(Scalar length, int power) {
  if (power < 0) throw std::invalid_argument("monomial_integral: negative power");
  if (!(length > 0)) throw std::invalid_argument("monomial_integral: length must be positive");
  return std::pow(length, power + 1) / Scalar(power + 1);
}

// Gram matrix of the curvatures {p'' : p = x^2 ... x^n}.
template <typename Scalar>
MatrixX<Scalar> build_G(const ElementSpec<Scalar>& spec) {
  spec.validate();
  const int n = spec.order;
  MatrixX<Scalar> G(n - 1, n - 1);
  for (int j = 2; j <= n; ++j) {
    for (int k = 2; k <= n; ++k) {
      G(j - 2, k - 2) = Scalar(j * (j - 1) * k * (k - 1)) * monomial_integral(spec.length, j + k - 4);
    }
  }
  return G;
}

// Curvature moments of the virtual deflection against each test monomial,
// after integrating by parts twice. Columns follow the element DOF layout.
template <typename Scalar>
MatrixX<Scalar> build_r(const ElementSpec<Scalar>& spec) {
  spec.validate();
  const int n = spec.order;
  const Scalar L = spec.length;
  MatrixX<Scalar> r = MatrixX<Scalar>::Zero(n - 1, n + 1);
  for (int j = 2; j <= n; ++j) {
    const int row = j - 2;
    const Scalar d2 = Scalar(j * (j - 1));
    const Scalar d3 = Scalar(j * (j - 1) * (j - 2));
    const Scalar d4 = Scalar(j * (j - 1) * (j - 2) * (j - 3));
    // [p'' w']_0^L
    r(row, 3) += d2 * std::pow(L, j - 2);
    if (j == 2) r(row, 1) -= d2;
    // -[p''' w]_0^L
    if (j >= 3) {
      r(row, 2) -= d3 * std::pow(L, j - 3);
      if (j == 3) r(row, 0) += d3;
    }
    // int p'''' w = d4 * L^{j-3} m_{j-4}
    if (j >= 4) r(row, 4 + (j - 4)) += d4 * std::pow(L, j - 3);
  }
  return r;
}

template <typename Scalar>
ProjectionSystem<Scalar> build_projection(const ElementSpec<Scalar>& spec) {
  ProjectionSystem<Scalar> sys;
  sys.G = build_G(spec);
  sys.r = build_r(spec);
  // Solve with symmetric diagonal equilibration; the monomial Gram matrix
  // spans many decades when L_e is far from 1.
  const VectorX<Scalar> scale = sys.G.diagonal().cwiseSqrt().cwiseInverse();
  const MatrixX<Scalar> scaled = scale.asDiagonal() * sys.G * scale.asDiagonal();
  Eigen::LLT<MatrixX<Scalar>> llt(scaled);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("projection Gram matrix is numerically singular (order " +
                             std::to_string(spec.order) + ")");
  }
  sys.P = scale.asDiagonal() * llt.solve(scale.asDiagonal() * sys.r);
  return sys;
}

// Full coefficient vector [a_1 ... a_{n+1}] of the projected deflection.
template <typename Scalar, typename Derived>
VectorX<Scalar> projected_coefficients(const ProjectionSystem<Scalar>& sys,
                                       const Eigen::MatrixBase<Derived>& dofs) {
  const Eigen::Index ndof = sys.P.cols();
  if (dofs.size() != ndof) throw std::invalid_argument("projected_coefficients: DOF vector size mismatch");
  VectorX<Scalar> a(ndof);
  a(0) = dofs(0);
  a(1) = dofs(1);
  a.tail(ndof - 2) = sys.P * dofs;
  return a;
}

template <typename Scalar>
MatrixX<Scalar> element_stiffness(const ElementSpec<Scalar>& spec) {
  const auto sys = build_projection(spec);
  MatrixX<Scalar> K = spec.material.flexural_rigidity() * (sys.P.transpose() * sys.G * sys.P);
  return Scalar(0.5) * (K + K.transpose());
}

template <typename Scalar>
VectorX<Scalar> element_load(const ElementSpec<Scalar>& spec, const LoadSpec<Scalar>& load) {
  spec.validate();
  const int n = spec.order;
  const bool has_distributed = load.distributed.size() > 0 && load.distributed.cwiseAbs().maxCoeff() > 0;
  if (has_distributed && n < 4) {
    throw std::invalid_argument("distributed loads require element order >= 4");
  }
  if (load.distributed.size() > n - 3) {
    throw std::invalid_argument("distributed load has " + std::to_string(load.distributed.size()) +
                                " coefficients, order " + std::to_string(n) + " supports at most " +
                                std::to_string(n - 3));
  }
  VectorX<Scalar> f = VectorX<Scalar>::Zero(n + 1);
  f(0) = load.force_start;
  f(1) = load.moment_start;
  f(2) = load.force_end;
  f(3) = load.moment_end;
  for (Eigen::Index j = 0; j < load.distributed.size(); ++j) {
    // coefficient q_{k-4} multiplies L^{k-3} m_{k-4}, with j = k - 4
    f(4 + j) += load.distributed(j) * std::pow(spec.length, Scalar(j + 1));
  }
  return f;
}

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 2> axial_stiffness(const ElementSpec<Scalar>& spec) {
  spec.validate();
  const Scalar k = spec.material.axial_rigidity() / spec.length;
  Eigen::Matrix<Scalar, 2, 2> K;
  K << k, -k, -k, k;
  return K;
}

// Evaluates the projected deflection and its first two derivatives at x.
template <typename Scalar, typename Derived>
Eigen::Matrix<Scalar, 3, 1> evaluate_polynomial(const Eigen::MatrixBase<Derived>& coeffs, Scalar x) {
  Scalar value = 0, slope = 0, curvature = 0;
  for (Eigen::Index k = coeffs.size() - 1; k >= 0; --k) {
    curvature = curvature * x + Scalar(2) * slope;
    slope = slope * x + value;
    value = value * x + coeffs(k);
  }
  return {value, slope, curvature};
}

}  // namespace beamvem
