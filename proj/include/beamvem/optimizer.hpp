#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace beamvem::nn {

class NonFiniteGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double learning_rate{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double epsilon{1e-8};
};

// Adam with bias correction over a flat parameter vector.
template <typename Scalar = double>
class Adam {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Adam(Eigen::Index size, AdamConfig config = {})
      : config_(config), first_(Vector::Zero(size)), second_(Vector::Zero(size)) {}

  void step(Vector& params, const Vector& gradient) {
    if (params.size() != first_.size() || gradient.size() != first_.size()) {
      throw std::invalid_argument("adam: parameter/gradient shape mismatch");
    }
    if (!gradient.allFinite()) throw NonFiniteGradientError("adam: non-finite gradient");
    ++steps_;
    const Scalar b1 = Scalar(config_.beta1), b2 = Scalar(config_.beta2);
    first_ = b1 * first_ + (Scalar(1) - b1) * gradient;
    second_ = b2 * second_ + (Scalar(1) - b2) * gradient.cwiseAbs2();
    const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(steps_));
    const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(steps_));
    params.array() -= Scalar(config_.learning_rate) * (first_.array() / c1) /
                      ((second_.array() / c2).sqrt() + Scalar(config_.epsilon));
  }

  long steps() const { return steps_; }
  const Vector& first_moment() const { return first_; }
  const Vector& second_moment() const { return second_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  Vector first_;
  Vector second_;
  long steps_{0};
};

// Plain gradient descent, used for the task weights.
template <typename Derived, typename Other>
auto sgd_step(const Eigen::MatrixBase<Derived>& weights, const Eigen::MatrixBase<Other>& gradient,
              typename Derived::Scalar learning_rate) {
  if (weights.size() != gradient.size()) throw std::invalid_argument("sgd_step: shape mismatch");
  return (weights - learning_rate * gradient).eval();
}

}  // namespace beamvem::nn
