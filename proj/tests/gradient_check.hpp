// Finite-difference oracles for the network gradients. Shared by the unit and
// acceptance suites; depends only on forward evaluation.
#pragma once

#include <algorithm>
#include <random>

#include "beamvem/network.hpp"

namespace testing {

using beamvem::nn::Activation;
using beamvem::nn::Architecture;
using beamvem::nn::NetworkParameters;

struct SmallNetwork {
  NetworkParameters<double> params;
  Eigen::MatrixXd node;      // node features x batch
  Eigen::MatrixXd material;  // material features x batch
};

// Up to 3 layers per group, up to 16 units, random activations, random biases.
inline SmallNetwork random_small_network(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> layers(1, 3), width(1, 16), batch(1, 4), inputs(1, 3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Architecture arch;
  arch.node_inputs = 2;
  arch.material_inputs = inputs(rng);
  arch.node_layers.clear();
  arch.material_layers.clear();
  arch.head_layers.clear();
  for (int i = layers(rng); i > 0; --i) arch.node_layers.push_back(width(rng));
  for (int i = layers(rng); i > 0; --i) arch.material_layers.push_back(width(rng));
  for (int i = layers(rng) - 1; i > 0; --i) arch.head_layers.push_back(width(rng));
  arch.outputs = std::uniform_int_distribution<int>(1, 3)(rng);
  SmallNetwork net;
  net.params = beamvem::nn::initialize<double>(arch, rng());
  for (auto* group : {&net.params.node, &net.params.material, &net.params.head}) {
    for (auto& l : *group) {
      for (auto& b : l.bias.reshaped()) b = 0.5 * U(rng);
      if (&l != &net.params.head.back()) l.activation = U(rng) > -0.6 ? Activation::Tanh : Activation::Identity;
    }
  }
  const int B = batch(rng);
  net.node = Eigen::MatrixXd::NullaryExpr(2, B, [&] { return U(rng); });
  net.material = Eigen::MatrixXd::NullaryExpr(arch.material_inputs, B, [&] { return U(rng); });
  return net;
}

// Scalar test loss mixing outputs and output tangents:
//   0.5 |y - t|^2 + 0.5 sum_k |dy_k - s_k|^2
struct MixedLoss {
  Eigen::MatrixXd target;
  std::vector<Eigen::MatrixXd> tangent_target;

  double value(const NetworkParameters<double>& p, const SmallNetwork& net) const {
    const auto pass = beamvem::nn::forward_pass(p, net.node, net.material, tangent_target.size());
    double v = 0.5 * (pass.output - target).squaredNorm();
    for (std::size_t k = 0; k < tangent_target.size(); ++k) {
      v += 0.5 * (pass.output_tangents[k] - tangent_target[k]).squaredNorm();
    }
    return v;
  }
};

struct GradientCheck {
  double relative_error{0};
  double max_entry_error{0};
};

inline GradientCheck check_parameter_gradient(const SmallNetwork& net, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  const auto B = net.node.cols();
  const auto outs = net.params.outputs();
  MixedLoss loss;
  loss.target = Eigen::MatrixXd::NullaryExpr(outs, B, [&] { return N(rng); });
  for (int k = 0; k < 2; ++k) loss.tangent_target.push_back(Eigen::MatrixXd::NullaryExpr(outs, B, [&] { return N(rng); }));

  // analytic
  const auto pass = beamvem::nn::forward_pass(net.params, net.node, net.material, 2);
  std::vector<Eigen::MatrixXd> tbar;
  for (int k = 0; k < 2; ++k) tbar.push_back(pass.output_tangents[k] - loss.tangent_target[k]);
  const Eigen::VectorXd analytic =
      beamvem::nn::backward_params(net.params, pass, Eigen::MatrixXd(pass.output - loss.target), tbar).flatten();

  // central differences
  const Eigen::VectorXd theta = net.params.flatten();
  Eigen::VectorXd fd(theta.size());
  const double h = 1e-6;
  auto probe = net.params;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd t = theta;
    t(i) += h;
    probe.unflatten(t);
    const double up = loss.value(probe, net);
    t(i) -= 2 * h;
    probe.unflatten(t);
    const double down = loss.value(probe, net);
    fd(i) = (up - down) / (2 * h);
  }
  GradientCheck r;
  r.relative_error = (analytic - fd).norm() / std::max(fd.norm(), 1e-12);
  r.max_entry_error = (analytic - fd).cwiseAbs().maxCoeff();
  return r;
}

// Relative error of the analytic input Jacobian against central differences
// over the coordinate features of every batch column.
inline double check_input_gradient(const SmallNetwork& net, std::mt19937_64&) {
  double worst = 0;
  const double h = 1e-6;
  for (Eigen::Index c = 0; c < net.node.cols(); ++c) {
    const Eigen::VectorXd x = net.node.col(c), m = net.material.col(c);
    const Eigen::MatrixXd J = beamvem::nn::input_gradient(net.params, x, m, 2);
    Eigen::MatrixXd fd(J.rows(), 2);
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      fd.col(k) = (beamvem::nn::forward(net.params, xp, m) - beamvem::nn::forward(net.params, xm, m)) / (2 * h);
    }
    worst = std::max(worst, (J - fd).norm() / std::max(fd.norm(), 1e-8));
  }
  return worst;
}

}  // namespace testing
