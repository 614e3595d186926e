// Dense split network: a node sub-network and a material sub-network whose
// outputs are concatenated and fed through a head.
//
// Batches are stored column-wise (features x samples). Forward passes can
// carry tangent directions with respect to the node inputs, so the same trace
// yields input Jacobians and supports reverse accumulation through them.
#pragma once

#include <cstdint>
#include <type_traits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace beamvem::nn {

enum class Activation { Tanh, Identity };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity" || s == "linear") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

template <typename Scalar>
using DynamicMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar = double>
struct DenseLayer {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation{Activation::Tanh};

  Eigen::Index inputs() const { return weights.cols(); }
  Eigen::Index outputs() const { return weights.rows(); }
};

template <typename Scalar = double>
struct NetworkParameters {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::vector<DenseLayer<Scalar>> node;
  std::vector<DenseLayer<Scalar>> material;
  std::vector<DenseLayer<Scalar>> head;

  Eigen::Index node_inputs() const { return node.empty() ? 0 : node.front().inputs(); }
  Eigen::Index material_inputs() const { return material.empty() ? 0 : material.front().inputs(); }
  Eigen::Index outputs() const { return head.empty() ? 0 : head.back().outputs(); }

  void validate() const {
    auto chain = [](const std::vector<DenseLayer<Scalar>>& layers, const char* name) {
      if (layers.empty()) throw std::invalid_argument(std::string(name) + " sub-network has no layers");
      for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].bias.size() != layers[l].outputs()) {
          throw std::invalid_argument(std::string(name) + " layer " + std::to_string(l) + ": bias width mismatch");
        }
        if (l > 0 && layers[l].inputs() != layers[l - 1].outputs()) {
          throw std::invalid_argument(std::string(name) + " layer " + std::to_string(l) + ": input width mismatch");
        }
      }
    };
    chain(node, "node");
    chain(material, "material");
    chain(head, "head");
    if (head.front().inputs() != node.back().outputs() + material.back().outputs()) {
      throw std::invalid_argument("head input width must equal node + material output widths");
    }
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto* group : {&node, &material, &head})
      for (const auto& l : *group) n += l.weights.size() + l.bias.size();
    return n;
  }

  // Group order node, material, head; per layer the weights row-major, then the bias.
  Vector flatten() const {
    Vector out(parameter_count());
    Eigen::Index at = 0;
    for (const auto* group : {&node, &material, &head}) {
      for (const auto& l : *group) {
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
          for (Eigen::Index c = 0; c < l.weights.cols(); ++c) out(at++) = l.weights(r, c);
        out.segment(at, l.bias.size()) = l.bias;
        at += l.bias.size();
      }
    }
    return out;
  }

  void unflatten(const Vector& flat) {
    if (flat.size() != parameter_count()) throw std::invalid_argument("unflatten: size mismatch");
    Eigen::Index at = 0;
    for (auto* group : {&node, &material, &head}) {
      for (auto& l : *group) {
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
          for (Eigen::Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = flat(at++);
        l.bias = flat.segment(at, l.bias.size());
        at += l.bias.size();
      }
    }
  }

  NetworkParameters zeros_like() const {
    NetworkParameters z = *this;
    for (auto* group : {&z.node, &z.material, &z.head}) {
      for (auto& l : *group) {
        l.weights.setZero();
        l.bias.setZero();
      }
    }
    return z;
  }

  Scalar max_abs() const {
    Scalar m = 0;
    for (const auto* group : {&node, &material, &head}) {
      for (const auto& l : *group) {
        if (l.weights.size() > 0) m = std::max(m, l.weights.cwiseAbs().maxCoeff());
        if (l.bias.size() > 0) m = std::max(m, l.bias.cwiseAbs().maxCoeff());
      }
    }
    return m;
  }
};

struct Architecture {
  int node_inputs{2};
  std::vector<int> node_layers{64, 64, 32};
  int material_inputs{3};
  std::vector<int> material_layers{32, 32, 16};
  std::vector<int> head_layers{64, 64};  // hidden widths; a linear output layer is appended
  int outputs{3};
  Activation activation{Activation::Tanh};
};

// Xavier-uniform weights, zero biases.
template <typename Scalar = double>
NetworkParameters<Scalar> initialize(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto make = [&](int in, int out, Activation act) {
    DenseLayer<Scalar> l;
    const Scalar bound = std::sqrt(Scalar(6) / Scalar(in + out));
    std::uniform_real_distribution<Scalar> U(-bound, bound);
    l.weights.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.weights(r, c) = U(rng);
    l.bias = DenseLayer<Scalar>::Vector::Zero(out);
    l.activation = act;
    return l;
  };
  auto build = [&](int in, const std::vector<int>& widths, std::vector<DenseLayer<Scalar>>& dst) {
    for (int w : widths) {
      dst.push_back(make(in, w, arch.activation));
      in = w;
    }
    return in;
  };
  if (arch.node_layers.empty() || arch.material_layers.empty()) {
    throw std::invalid_argument("both sub-networks need at least one layer");
  }
  NetworkParameters<Scalar> p;
  const int node_out = build(arch.node_inputs, arch.node_layers, p.node);
  const int mat_out = build(arch.material_inputs, arch.material_layers, p.material);
  const int head_out = build(node_out + mat_out, arch.head_layers, p.head);
  p.head.push_back(make(head_out, arch.outputs, Activation::Identity));
  return p;
}

namespace detail {

// tanh through the vectorized exponential; a short series keeps the relative
// accuracy near zero.
template <typename Derived>
auto tanh(const Eigen::ArrayBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Array x = z;
  Array t = Scalar(1) - Scalar(2) / ((Scalar(2) * x).exp() + Scalar(1));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar v = x.data()[i];
    if (std::abs(v) < Scalar(1e-3)) {
      const Scalar v2 = v * v;
      t.data()[i] = v * (Scalar(1) - v2 * (Scalar(1) / 3 - v2 * (Scalar(2) / 15 - v2 * Scalar(17) / 315)));
    }
  }
  return t;
}

template <typename Derived>
auto activate(const Eigen::MatrixBase<Derived>& z, Activation act) {
  using Matrix = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (act == Activation::Tanh) return Matrix(detail::tanh(z.array()).matrix());
  return Matrix(z);
}

}  // namespace detail

// Cached intermediates of one sub-network evaluation.
template <typename Scalar = double>
struct MlpTrace {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<Matrix> input;                  // a_{l-1} entering layer l
  std::vector<Matrix> output;                 // a_l = act(z_l)
  std::vector<std::vector<Matrix>> tangent;   // [direction][l]: tangent of a_{l-1}
  std::vector<std::vector<Matrix>> tangent_pre;  // [direction][l]: tangent of z_l
};

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mlp_forward(
    const std::vector<DenseLayer<Scalar>>& layers, const DynamicMatrix<Scalar>& x,
    const std::type_identity_t<std::vector<DynamicMatrix<Scalar>>>& tangents, MlpTrace<Scalar>& trace,
    std::type_identity_t<std::vector<DynamicMatrix<Scalar>>>* tangents_out) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  trace.input.clear();
  trace.output.clear();
  trace.tangent.assign(tangents.size(), {});
  trace.tangent_pre.assign(tangents.size(), {});
  Matrix a = x;
  std::vector<Matrix> ad = tangents;
  for (const auto& layer : layers) {
    Matrix z = layer.weights * a;
    z.colwise() += layer.bias;
    Matrix next = detail::activate(z, layer.activation);
    for (std::size_t k = 0; k < ad.size(); ++k) {
      Matrix zd = layer.weights * ad[k];
      trace.tangent[k].push_back(std::move(ad[k]));
      if (layer.activation == Activation::Tanh) {
        ad[k] = (Scalar(1) - next.array().square()).matrix().cwiseProduct(zd);
      } else {
        ad[k] = zd;
      }
      trace.tangent_pre[k].push_back(std::move(zd));
    }
    trace.input.push_back(std::move(a));
    trace.output.push_back(next);
    a = std::move(next);
  }
  if (tangents_out) *tangents_out = std::move(ad);
  return a;
}

// Reverse accumulation through a traced sub-network. `abar` is the adjoint of
// the output, `adbar[k]` the adjoint of output tangent k (may be empty).
// Gradients are added into `grads`; the input adjoint is returned. Layers
// below `lowest_layer` are skipped, in which case the returned adjoint is that
// of the input to `lowest_layer`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mlp_backward(
    const std::vector<DenseLayer<Scalar>>& layers, const MlpTrace<Scalar>& trace,
    std::type_identity_t<DynamicMatrix<Scalar>> abar, std::type_identity_t<std::vector<DynamicMatrix<Scalar>>> adbar,
    std::vector<DenseLayer<Scalar>>& grads,
    std::type_identity_t<std::vector<DynamicMatrix<Scalar>>>* input_tangent_adjoint = nullptr,
    std::size_t lowest_layer = 0) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const std::size_t K = adbar.size();
  if (K > trace.tangent.size()) throw std::invalid_argument("mlp_backward: more tangent adjoints than tangents");
  for (std::size_t l = layers.size(); l-- > lowest_layer;) {
    const auto& layer = layers[l];
    Matrix zbar;
    std::vector<Matrix> zdbar(K);
    if (layer.activation == Activation::Tanh) {
      const auto& t = trace.output[l];
      const Matrix s1 = (Scalar(1) - t.array().square()).matrix();
      zbar = s1.cwiseProduct(abar);
      if (K > 0) {
        const Matrix s2 = (Scalar(-2) * t.array() * s1.array()).matrix();
        for (std::size_t k = 0; k < K; ++k) {
          zdbar[k] = s1.cwiseProduct(adbar[k]);
          zbar.array() += s2.array() * trace.tangent_pre[k][l].array() * adbar[k].array();
        }
      }
    } else {
      zbar = std::move(abar);
      for (std::size_t k = 0; k < K; ++k) zdbar[k] = std::move(adbar[k]);
    }
    auto& g = grads[l];
    g.weights.noalias() += zbar * trace.input[l].transpose();
    g.bias += zbar.rowwise().sum();
    for (std::size_t k = 0; k < K; ++k) g.weights.noalias() += zdbar[k] * trace.tangent[k][l].transpose();
    abar = layer.weights.transpose() * zbar;
    for (std::size_t k = 0; k < K; ++k) adbar[k] = layer.weights.transpose() * zdbar[k];
  }
  if (input_tangent_adjoint) *input_tangent_adjoint = std::move(adbar);
  return abar;
}

// Full trace of a split-network evaluation.
template <typename Scalar = double>
struct ForwardPass {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix output;                       // outputs x batch
  std::vector<Matrix> output_tangents; // [k]: d output / d node input k (outputs x batch)
  MlpTrace<Scalar> node, material, head;
  Eigen::Index node_width{0};
  std::size_t directions{0};
};

// Evaluates the network on a batch. `directions` tangent passes are seeded
// with the unit vectors of the first `directions` node features.
template <typename Scalar>
ForwardPass<Scalar> forward_pass(const NetworkParameters<Scalar>& params,
                                 const std::type_identity_t<DynamicMatrix<Scalar>>& node_features,
                                 const std::type_identity_t<DynamicMatrix<Scalar>>& material_features,
                                 std::size_t directions = 0) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (node_features.rows() != params.node_inputs() || material_features.rows() != params.material_inputs()) {
    throw std::invalid_argument("forward: feature widths do not match the network inputs");
  }
  if (node_features.cols() != material_features.cols()) {
    throw std::invalid_argument("forward: node and material batches differ in size");
  }
  if (directions > static_cast<std::size_t>(node_features.rows())) {
    throw std::invalid_argument("forward: more tangent directions than node features");
  }
  const Eigen::Index B = node_features.cols();
  ForwardPass<Scalar> pass;
  pass.directions = directions;
  std::vector<Matrix> seeds(directions, Matrix::Zero(node_features.rows(), B));
  for (std::size_t k = 0; k < directions; ++k) seeds[k].row(static_cast<Eigen::Index>(k)).setOnes();

  std::vector<Matrix> node_tangents;
  const Matrix node_out = mlp_forward(params.node, node_features, seeds, pass.node, &node_tangents);
  const Matrix mat_out = mlp_forward(params.material, material_features, {}, pass.material, nullptr);
  pass.node_width = node_out.rows();

  Matrix joined(node_out.rows() + mat_out.rows(), B);
  joined.topRows(node_out.rows()) = node_out;
  joined.bottomRows(mat_out.rows()) = mat_out;
  std::vector<Matrix> joined_tangents(directions, Matrix::Zero(joined.rows(), B));
  for (std::size_t k = 0; k < directions; ++k) joined_tangents[k].topRows(node_out.rows()) = node_tangents[k];
  pass.output = mlp_forward(params.head, joined, joined_tangents, pass.head, &pass.output_tangents);
  return pass;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> forward(
    const NetworkParameters<Scalar>& params, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& node_features,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& material_features) {
  return forward_pass(params, node_features, material_features, 0).output;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> forward(const NetworkParameters<Scalar>& params,
                                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& node_features,
                                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& material_features) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  return forward_pass(params, Matrix(node_features), Matrix(material_features), 0).output.col(0);
}

// Gradient of a scalar loss with respect to all parameters, given the adjoint
// of the outputs and (optionally) of the output tangents of `pass`.
template <typename Scalar>
NetworkParameters<Scalar> backward_params(
    const NetworkParameters<Scalar>& params, const ForwardPass<Scalar>& pass,
    const std::type_identity_t<DynamicMatrix<Scalar>>& output_adjoint,
    const std::type_identity_t<std::vector<DynamicMatrix<Scalar>>>& tangent_adjoint = {}) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (output_adjoint.rows() != pass.output.rows() || output_adjoint.cols() != pass.output.cols()) {
    throw std::invalid_argument("backward_params: adjoint shape mismatch");
  }
  NetworkParameters<Scalar> grad = params.zeros_like();
  std::vector<Matrix> head_tangent_bar;
  const Matrix joined_bar =
      mlp_backward(params.head, pass.head, output_adjoint, tangent_adjoint, grad.head, &head_tangent_bar);
  const Eigen::Index nw = pass.node_width;
  std::vector<Matrix> node_tangent_bar;
  for (auto& t : head_tangent_bar) node_tangent_bar.push_back(t.topRows(nw));
  mlp_backward(params.node, pass.node, Matrix(joined_bar.topRows(nw)), node_tangent_bar, grad.node);
  mlp_backward(params.material, pass.material, Matrix(joined_bar.bottomRows(joined_bar.rows() - nw)), {},
               grad.material);
  return grad;
}

// Jacobian of the outputs with respect to the first `coordinates` node
// features for a single sample (outputs x coordinates). Material features
// are held fixed.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> input_gradient(
    const NetworkParameters<Scalar>& params, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& node_features,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& material_features, std::size_t coordinates = 2) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto pass = forward_pass(params, Matrix(node_features), Matrix(material_features), coordinates);
  Matrix J(pass.output.rows(), static_cast<Eigen::Index>(coordinates));
  for (std::size_t k = 0; k < coordinates; ++k) J.col(static_cast<Eigen::Index>(k)) = pass.output_tangents[k].col(0);
  return J;
}

// Gradient of head layer `layer`'s weights only, back-propagating from the
// outputs no further than that layer.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> head_weight_gradient(
    const NetworkParameters<Scalar>& params, const ForwardPass<Scalar>& pass, std::size_t layer,
    const std::type_identity_t<DynamicMatrix<Scalar>>& output_adjoint,
    const std::type_identity_t<std::vector<DynamicMatrix<Scalar>>>& tangent_adjoint = {}) {
  if (layer >= params.head.size()) throw std::invalid_argument("head_weight_gradient: layer out of range");
  std::vector<DenseLayer<Scalar>> grads(params.head.size());
  for (std::size_t l = layer; l < params.head.size(); ++l) {
    grads[l].weights = DynamicMatrix<Scalar>::Zero(params.head[l].outputs(), params.head[l].inputs());
    grads[l].bias = DenseLayer<Scalar>::Vector::Zero(params.head[l].outputs());
  }
  mlp_backward(params.head, pass.head, output_adjoint, tangent_adjoint, grads, nullptr, layer);
  return grads[layer].weights;
}

}  // namespace beamvem::nn
