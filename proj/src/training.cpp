#include "beamvem/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace beamvem {

using Matrix32 = Eigen::Matrix<double, 3, 2>;

std::string to_string(OutputScaling s) { return s == OutputScaling::Flexural ? "flexural" : "none"; }
std::string to_string(MaterialPenalty p) { return p == MaterialPenalty::Homogeneity ? "homogeneity" : "weight_decay"; }

OutputScaling output_scaling_from_string(const std::string& s) {
  if (s == "flexural") return OutputScaling::Flexural;
  if (s == "none") return OutputScaling::None;
  throw std::invalid_argument("unknown output scaling '" + s + "'");
}

MaterialPenalty material_penalty_from_string(const std::string& s) {
  if (s == "homogeneity") return MaterialPenalty::Homogeneity;
  if (s == "weight_decay") return MaterialPenalty::WeightDecay;
  throw std::invalid_argument("unknown material penalty '" + s + "'");
}

FeatureScaling FeatureScaling::fit(const Eigen::MatrixXd& columns) {
  if (columns.cols() == 0) throw std::invalid_argument("cannot fit a scaling to zero columns");
  FeatureScaling f;
  f.mean = columns.rowwise().mean();
  f.scale = ((columns.colwise() - f.mean).array().square().rowwise().mean()).sqrt();
  for (Eigen::Index i = 0; i < f.scale.size(); ++i) {
    if (!(f.scale(i) > 1e-12 * std::max(1.0, std::abs(f.mean(i))))) f.scale(i) = 1.0;
  }
  return f;
}

Eigen::MatrixXd FeatureScaling::apply(const Eigen::MatrixXd& columns) const {
  return (columns.colwise() - mean).array().colwise() / scale.array();
}

Eigen::Vector3d Normalization::material_features(const Material& m) {
  return {std::log(m.elastic_modulus), std::log(m.cross_section_area), std::log(m.inertia_moment)};
}

double Normalization::scale_factor(const Material& m) const {
  return output_scaling == OutputScaling::Flexural ? m.flexural_rigidity() : 1.0;
}

Normalization Normalization::fit(const std::vector<DatasetRecord>& records, OutputScaling scaling) {
  const auto B = static_cast<Eigen::Index>(records.size());
  Eigen::MatrixXd node(2, B), mat(3, B), out(3, B);
  Normalization n;
  n.output_scaling = scaling;
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto& r = records[static_cast<std::size_t>(j)];
    node.col(j) << r.x, r.y;
    mat.col(j) = material_features(r.material);
    out.col(j) = n.scale_factor(r.material) * r.displacement;
  }
  n.node = FeatureScaling::fit(node);
  n.material = FeatureScaling::fit(mat);
  n.output = FeatureScaling::fit(out);
  return n;
}

void TaskWeights::renormalize(double floor) {
  theta = theta.cwiseMax(floor);
  const double sum = theta.sum();
  if (!(sum > 0) || !std::isfinite(sum)) throw std::runtime_error("task weights cannot be renormalized");
  theta *= total / sum;
}

void SobolevConfig::validate() const {
  if (order != 1) throw std::invalid_argument("only first-order Sobolev terms are supported");
  if (samples < 1) throw std::invalid_argument("Sobolev projection samples must be >= 1");
  if (dimension != 2) throw std::invalid_argument("Sobolev coordinate dimension must be 2");
}

void TrainingConfig::validate() const {
  if (!(alpha >= 0)) throw std::invalid_argument("alpha must be >= 0");
  if (!(divergence_threshold > 0)) throw std::invalid_argument("divergence threshold must be > 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 0) throw std::invalid_argument("batch size must be >= 0");
  if (!(learning_rate > 0) || !(weight_learning_rate >= 0)) throw std::invalid_argument("invalid learning rate");
  if (!(weight_floor >= 0) || weight_floor * 3 >= 3) throw std::invalid_argument("invalid weight floor");
  if (!(scale_range[0] > 0 && scale_range[1] >= scale_range[0])) {
    throw std::invalid_argument("scale range must satisfy 0 < lo <= hi");
  }
}

TrainingBatch TrainingBatch::select(const std::vector<Eigen::Index>& columns) const {
  TrainingBatch b;
  const auto n = static_cast<Eigen::Index>(columns.size());
  b.node.resize(node.rows(), n);
  b.material.resize(material.rows(), n);
  b.target.resize(target.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index c = columns[static_cast<std::size_t>(j)];
    b.node.col(j) = node.col(c);
    b.material.col(j) = material.col(c);
    b.target.col(j) = target.col(c);
    b.reference_gradient.push_back(reference_gradient[static_cast<std::size_t>(c)]);
    b.projector.push_back(projector[static_cast<std::size_t>(c)]);
  }
  return b;
}

TrainingBatch prepare_batch(const std::vector<DatasetRecord>& records, const Normalization& norm) {
  if (records.empty()) throw std::invalid_argument("training batch is empty");
  const auto B = static_cast<Eigen::Index>(records.size());
  Eigen::MatrixXd node(2, B), mat(3, B), out(3, B);
  TrainingBatch b;
  b.reference_gradient.reserve(records.size());
  b.projector.reserve(records.size());
  const Eigen::Vector2d inv_coord = norm.node.scale.cwiseInverse();
  const Eigen::Vector3d inv_out = norm.output.scale.cwiseInverse();
  for (Eigen::Index j = 0; j < B; ++j) {
    const auto& r = records[static_cast<std::size_t>(j)];
    node.col(j) << r.x, r.y;
    mat.col(j) = Normalization::material_features(r.material);
    const double s = norm.scale_factor(r.material);
    out.col(j) = s * r.displacement;
    if (r.derivatives.empty()) {
      throw std::invalid_argument("record (sample " + std::to_string(r.sample_id) + ", node " +
                                  std::to_string(r.node_id) + ") has no derivative targets");
    }
    const auto k = static_cast<Eigen::Index>(r.derivatives.size());
    Eigen::MatrixXd T(k, 2), D(k, 3);
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& d = r.derivatives[static_cast<std::size_t>(i)];
      T.row(i) = d.tangent.cwiseProduct(inv_coord).transpose();
      D.row(i) = (s * d.d_ds).cwiseProduct(inv_out).transpose();
    }
    const Eigen::MatrixXd Tp = T.completeOrthogonalDecomposition().pseudoInverse();
    b.projector.push_back(Tp * T);
    b.reference_gradient.push_back((Tp * D).transpose());
  }
  b.node = norm.node.apply(node);
  b.material = norm.material.apply(mat);
  b.target = norm.output.apply(out);
  return b;
}

double displacement_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target, Eigen::MatrixXd* adjoint) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw std::invalid_argument("displacement_loss: shape mismatch");
  }
  if (prediction.cols() == 0) throw std::invalid_argument("displacement_loss: empty batch");
  const Eigen::MatrixXd diff = prediction - target;
  const double inv = 1.0 / static_cast<double>(prediction.cols());
  if (adjoint) *adjoint = (2.0 * inv) * diff;
  return diff.colwise().squaredNorm().sum() * inv;
}

Eigen::VectorXd sample_unit_sphere(int d, std::mt19937_64& rng) {
  if (d < 1) throw std::invalid_argument("sphere dimension must be >= 1");
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::VectorXd v(d);
  double norm = 0;
  while (!(norm > 0)) {
    for (int i = 0; i < d; ++i) v(i) = N(rng);
    norm = v.norm();
  }
  return v / norm;
}

std::vector<Eigen::Matrix2d> draw_projection_moments(Eigen::Index rows, int samples, std::mt19937_64& rng) {
  std::vector<Eigen::Matrix2d> out(static_cast<std::size_t>(rows), Eigen::Matrix2d::Zero());
  for (auto& S : out) {
    for (int j = 0; j < samples; ++j) {
      const Eigen::Vector2d v = sample_unit_sphere(2, rng);
      S += v * v.transpose();
    }
    S /= samples;
  }
  return out;
}

double sobolev_loss(const std::vector<Eigen::MatrixXd>& model_tangents,
                    const std::vector<Matrix32>& reference_gradient, const std::vector<Eigen::Matrix2d>& projector,
                    const std::vector<Eigen::Matrix2d>& moments, std::vector<Eigen::MatrixXd>* adjoint) {
  if (model_tangents.size() != 2) throw std::invalid_argument("sobolev_loss: expected two coordinate tangents");
  const Eigen::Index B = model_tangents[0].cols();
  if (B == 0) throw std::invalid_argument("sobolev_loss: empty batch");
  if (static_cast<Eigen::Index>(reference_gradient.size()) != B ||
      static_cast<Eigen::Index>(projector.size()) != B || static_cast<Eigen::Index>(moments.size()) != B) {
    throw std::invalid_argument("sobolev_loss: missing derivative targets");
  }
  const double inv = 1.0 / static_cast<double>(B);
  if (adjoint) adjoint->assign(2, Eigen::MatrixXd::Zero(3, B));
  double total = 0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const std::size_t u = static_cast<std::size_t>(j);
    Matrix32 J;
    J.col(0) = model_tangents[0].col(j);
    J.col(1) = model_tangents[1].col(j);
    const Matrix32 R = (J - reference_gradient[u]) * projector[u];
    const Matrix32 RS = R * moments[u];
    total += (RS.array() * R.array()).sum();
    if (adjoint) {
      const Matrix32 g = (2.0 * inv) * RS * projector[u];
      (*adjoint)[0].col(j) = g.col(0);
      (*adjoint)[1].col(j) = g.col(1);
    }
  }
  return total * inv;
}

Eigen::MatrixXd scale_modulus_features(const Eigen::MatrixXd& material, const Eigen::VectorXd& factors,
                                       const Normalization& norm) {
  if (factors.size() != material.cols()) throw std::invalid_argument("scale factors do not match the batch");
  Eigen::MatrixXd out = material;
  out.row(0).array() += factors.array().log().transpose() / norm.material.scale(0);
  return out;
}

double homogeneity_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& scaled_prediction,
                        const Eigen::VectorXd& factors, const Normalization& norm, Eigen::MatrixXd* adjoint,
                        Eigen::MatrixXd* scaled_adjoint) {
  const Eigen::Index B = prediction.cols();
  if (B == 0 || scaled_prediction.cols() != B || factors.size() != B) {
    throw std::invalid_argument("homogeneity_loss: shape mismatch");
  }
  // (s(E)/sigma) (c m(cE) - m(E)) with m(E') = (mu + sigma y(E')) / s(E') and s(cE) = c^p s(E)
  const double p = norm.scale_exponent();
  const Eigen::ArrayXd k = factors.array().pow(1.0 - p);
  const Eigen::ArrayXd offset = k - 1.0;
  const Eigen::Array3d mu_over_sigma = norm.output.mean.array() / norm.output.scale.array();
  Eigen::MatrixXd R = scaled_prediction.array().rowwise() * k.transpose();
  R -= prediction;
  R.array() += mu_over_sigma.matrix().replicate(1, B).array().rowwise() * offset.transpose();
  const double inv = 1.0 / static_cast<double>(B);
  if (adjoint) *adjoint = (-2.0 * inv) * R;
  if (scaled_adjoint) *scaled_adjoint = (2.0 * inv) * (R.array().rowwise() * k.transpose()).matrix();
  return R.colwise().squaredNorm().sum() * inv;
}

double material_penalty_loss(const nn::NetworkParameters<double>& params, const TrainingBatch& batch,
                             const Normalization& norm, const Eigen::VectorXd& factors) {
  const Eigen::MatrixXd base = nn::forward(params, batch.node, batch.material);
  const Eigen::MatrixXd scaled = nn::forward(params, batch.node, scale_modulus_features(batch.material, factors, norm));
  return homogeneity_loss(base, scaled, factors, norm);
}

GradNormStep gradnorm_step(const TaskWeights& weights, const Eigen::Vector3d& losses,
                           const Eigen::Vector3d& gradient_norms, double alpha) {
  GradNormStep s;
  s.gradient_norms = gradient_norms;
  s.weighted_norms = weights.theta.cwiseProduct(gradient_norms);
  s.mean_norm = s.weighted_norms.mean();
  for (int i = 0; i < 3; ++i) {
    const double l0 = weights.initial_recorded ? weights.initial_loss(i) : losses(i);
    s.loss_ratios(i) = l0 > 0 ? losses(i) / l0 : 1.0;
  }
  const double mean_ratio = s.loss_ratios.mean();
  s.inverse_rates = mean_ratio > 0 ? Eigen::Vector3d(s.loss_ratios / mean_ratio) : Eigen::Vector3d::Ones();
  for (int i = 0; i < 3; ++i) s.targets(i) = s.mean_norm * std::pow(s.inverse_rates(i), alpha);
  s.loss = gradnorm_loss(weights.theta, gradient_norms, s.targets);
  for (int i = 0; i < 3; ++i) {
    const double d = s.weighted_norms(i) - s.targets(i);
    s.gradient(i) = (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * gradient_norms(i);
  }
  return s;
}

double gradnorm_loss(const Eigen::Vector3d& theta, const Eigen::Vector3d& gradient_norms,
                     const Eigen::Vector3d& targets) {
  return (theta.cwiseProduct(gradient_norms) - targets).cwiseAbs().sum();
}

GradNormStep gradnorm_update(TaskWeights& weights, const Eigen::Vector3d& losses,
                             const Eigen::Vector3d& gradient_norms, const TrainingConfig& config) {
  if (!weights.initial_recorded) {
    weights.initial_loss = losses;
    weights.initial_recorded = true;
  }
  GradNormStep s = gradnorm_step(weights, losses, gradient_norms, config.alpha);
  weights.theta = nn::sgd_step(weights.theta, s.gradient, config.weight_learning_rate);
  weights.renormalize(config.weight_floor);
  return s;
}

std::size_t gradnorm_layer(const nn::NetworkParameters<double>& params) {
  if (params.head.empty()) throw std::invalid_argument("network has no head layers");
  return params.head.size() >= 2 ? params.head.size() - 2 : 0;
}

StepDraws draw_step(Eigen::Index rows, const SobolevConfig& sobolev, const TrainingConfig& config,
                    std::mt19937_64& rng) {
  StepDraws d;
  d.moments = draw_projection_moments(rows, sobolev.samples, rng);
  std::uniform_real_distribution<double> U(std::log(config.scale_range[0]), std::log(config.scale_range[1]));
  d.scale_factors.resize(rows);
  for (Eigen::Index j = 0; j < rows; ++j) d.scale_factors(j) = std::exp(U(rng));
  return d;
}

namespace {

Eigen::VectorXd material_weight_decay_gradient(const nn::NetworkParameters<double>& params, double* value) {
  auto g = params.zeros_like();
  double v = 0;
  for (std::size_t l = 0; l < params.material.size(); ++l) {
    v += params.material[l].weights.squaredNorm();
    g.material[l].weights = 2.0 * params.material[l].weights;
  }
  if (value) *value = v;
  return g.flatten();
}

}  // namespace

namespace {

// Columns [start, start + count) of a batch.
TrainingBatch slice(const TrainingBatch& b, Eigen::Index start, Eigen::Index count) {
  TrainingBatch out;
  out.node = b.node.middleCols(start, count);
  out.material = b.material.middleCols(start, count);
  out.target = b.target.middleCols(start, count);
  out.reference_gradient.assign(b.reference_gradient.begin() + start, b.reference_gradient.begin() + start + count);
  out.projector.assign(b.projector.begin() + start, b.projector.begin() + start + count);
  return out;
}

// Columns per chunk; keeps the traced activations cache resident.
constexpr Eigen::Index chunk_columns = 512;

}  // namespace

// All task losses are column means, so the batch is processed in chunks whose
// contributions are weighted by their share of the columns.
TaskEvaluation evaluate_tasks(const nn::NetworkParameters<double>& params, const TrainingBatch& batch,
                              const Normalization& norm, const StepDraws& draws, const TrainingConfig& config,
                              const Eigen::Vector3d& theta, bool task_gradients) {
  using Matrix = Eigen::MatrixXd;
  const Eigen::Index B = batch.size();
  if (B == 0) throw std::invalid_argument("evaluate_tasks: empty batch");
  if (static_cast<Eigen::Index>(draws.moments.size()) != B || draws.scale_factors.size() != B) {
    throw std::invalid_argument("evaluate_tasks: draws do not match the batch");
  }
  const bool homogeneity = config.material_penalty == MaterialPenalty::Homogeneity;
  const std::size_t layer = gradnorm_layer(params);
  const Eigen::Index P = params.parameter_count();

  TaskEvaluation ev;
  ev.total_gradient = Eigen::VectorXd::Zero(P);
  if (task_gradients)
    for (auto& g : ev.task_gradients) g = Eigen::VectorXd::Zero(P);
  std::array<Matrix, 3> shared;
  for (auto& g : shared) g = Matrix::Zero(params.head[layer].outputs(), params.head[layer].inputs());

  for (Eigen::Index start = 0; start < B; start += chunk_columns) {
    const Eigen::Index n = std::min(chunk_columns, B - start);
    const TrainingBatch part = n == B ? batch : slice(batch, start, n);
    const double w = static_cast<double>(n) / static_cast<double>(B);
    const std::vector<Eigen::Matrix2d> moments(draws.moments.begin() + start, draws.moments.begin() + start + n);
    const Eigen::VectorXd factors = draws.scale_factors.segment(start, n);

    const auto base = nn::forward_pass(params, part.node, part.material, 2);
    const Matrix zero = Matrix::Zero(base.output.rows(), n);
    Matrix a1;
    ev.losses(0) += w * displacement_loss(base.output, part.target, &a1);
    a1 *= w;
    std::vector<Matrix> a2;
    ev.losses(1) += w * sobolev_loss(base.output_tangents, part.reference_gradient, part.projector, moments, &a2);
    for (auto& a : a2) a *= w;

    shared[0] += nn::head_weight_gradient(params, base, layer, a1);
    shared[1] += nn::head_weight_gradient(params, base, layer, zero, a2);
    const std::vector<Matrix> weighted_a2{theta(1) * a2[0], theta(1) * a2[1]};

    if (homogeneity) {
      const auto scaled = nn::forward_pass(params, part.node, scale_modulus_features(part.material, factors, norm), 0);
      Matrix a3, a3s;
      ev.losses(2) += w * homogeneity_loss(base.output, scaled.output, factors, norm, &a3, &a3s);
      a3 *= w;
      a3s *= w;
      shared[2] += nn::head_weight_gradient(params, base, layer, a3) +
                   nn::head_weight_gradient(params, scaled, layer, a3s);
      ev.total_gradient += nn::backward_params(params, base, Matrix(theta(0) * a1 + theta(2) * a3), weighted_a2).flatten() +
                           nn::backward_params(params, scaled, Matrix(theta(2) * a3s)).flatten();
      if (task_gradients) {
        ev.task_gradients[2] +=
            nn::backward_params(params, base, a3).flatten() + nn::backward_params(params, scaled, a3s).flatten();
      }
    } else {
      ev.total_gradient += nn::backward_params(params, base, Matrix(theta(0) * a1), weighted_a2).flatten();
    }
    if (task_gradients) {
      ev.task_gradients[0] += nn::backward_params(params, base, a1).flatten();
      ev.task_gradients[1] += nn::backward_params(params, base, zero, a2).flatten();
    }
  }
  if (!homogeneity) {
    // The material path does not reach the shared head layer, so its norm is zero.
    double decay = 0;
    const Eigen::VectorXd g3 = material_weight_decay_gradient(params, &decay);
    ev.losses(2) = decay;
    ev.total_gradient += theta(2) * g3;
    if (task_gradients) ev.task_gradients[2] = g3;
  }
  for (int i = 0; i < 3; ++i) ev.gradient_norms(i) = shared[static_cast<std::size_t>(i)].norm();
  return ev;
}

Eigen::Vector3d SurrogateModel::predict(const Eigen::Vector2d& point, const Material& material) const {
  return predict_with_gradient(point, material).first;
}

std::pair<Eigen::Vector3d, Eigen::Matrix<double, 3, 2>> SurrogateModel::predict_with_gradient(
    const Eigen::Vector2d& point, const Material& material) const {
  const auto& n = normalization;
  const Eigen::MatrixXd x = n.node.apply(point);
  const Eigen::MatrixXd m = n.material.apply(Normalization::material_features(material));
  const auto pass = nn::forward_pass(params, x, m, 2);
  const double s = n.scale_factor(material);
  const Eigen::Vector3d y = (n.output.mean + n.output.scale.cwiseProduct(pass.output.col(0))) / s;
  Eigen::Matrix<double, 3, 2> J;
  for (int k = 0; k < 2; ++k) {
    J.col(k) = n.output.scale.cwiseProduct(pass.output_tangents[static_cast<std::size_t>(k)].col(0)) /
               (s * n.node.scale(k));
  }
  return {y, J};
}

LocalDisplacement SurrogateField::evaluate(std::size_t element, double x) const {
  const auto& el = mesh_->elements.at(element);
  const Eigen::Vector2d t = el.tangent(), nrm = el.normal();
  const Eigen::Vector2d p = mesh_->nodes[el.start_node] + x * t;
  const auto [y, J] = model_->predict_with_gradient(p, material_);
  const Eigen::Vector2d u = y.head<2>();
  const Eigen::Vector2d du = J.topRows<2>() * t;
  LocalDisplacement out;
  out.axial = t.dot(u);
  out.transverse = nrm.dot(u);
  out.axial_slope = t.dot(du);
  out.transverse_slope = nrm.dot(du);
  return out;
}

TrainingResult train(const std::vector<DatasetRecord>& records, const TrainingConfig& config,
                     const SobolevConfig& sobolev, const std::optional<nn::NetworkParameters<double>>& initial,
                     const std::function<void(const EpochRecord&)>& progress) {
  config.validate();
  sobolev.validate();
  if (records.empty()) throw std::invalid_argument("training set is empty");
  for (const auto& r : records) {
    if (!(r.mesh == records.front().mesh)) throw std::invalid_argument("training records mix mesh descriptors");
  }

  TrainingResult result{
      SurrogateModel{}, TrainingState{nn::NetworkParameters<double>{}, nn::Adam<double>(0), TaskWeights{}, {}},
      TrainingStatus::Completed};
  auto& model = result.model;
  model.normalization = Normalization::fit(records, config.output_scaling);
  model.mesh = records.front().mesh;
  model.config = config;
  model.sobolev = sobolev;

  auto& state = result.state;
  state.params = initial ? *initial : nn::initialize<double>(config.architecture, config.seed);
  state.params.validate();
  if (state.params.node_inputs() != 2 || state.params.material_inputs() != 3 || state.params.outputs() != 3) {
    throw std::invalid_argument("network must map 2 node and 3 material features to 3 outputs");
  }
  state.optimizer = nn::Adam<double>(state.params.parameter_count(), nn::AdamConfig{config.learning_rate});

  const TrainingBatch full = prepare_batch(records, model.normalization);
  const Eigen::Index B = full.size();
  const Eigen::Index step_size = config.batch_size > 0 ? std::min<Eigen::Index>(config.batch_size, B) : B;

  std::mt19937_64 rng(config.seed ^ (sobolev.seed * 0x9E3779B97F4A7C15ull) ^ 0x5DEECE66Dull);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(B));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  Eigen::VectorXd flat = state.params.flatten();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (step_size < B) std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    Eigen::Vector3d loss_sum = Eigen::Vector3d::Zero();
    int steps = 0;
    bool diverged = false;
    for (Eigen::Index start = 0; start < B; start += step_size) {
      const Eigen::Index count = std::min(step_size, B - start);
      const TrainingBatch batch =
          count == B && step_size == B
              ? full
              : full.select(std::vector<Eigen::Index>(order.begin() + start, order.begin() + start + count));
      const StepDraws draws = draw_step(batch.size(), sobolev, config, rng);
      const Eigen::Vector3d theta = state.weights.theta;
      const TaskEvaluation ev = evaluate_tasks(state.params, batch, model.normalization, draws, config, theta);
      state.optimizer.step(flat, ev.total_gradient);
      state.params.unflatten(flat);
      const GradNormStep g = gradnorm_update(state.weights, ev.losses, ev.gradient_norms, config);
      loss_sum += ev.losses;
      ++steps;
      rec.theta = theta;
      rec.weighted_norms = g.weighted_norms;
      if (state.params.max_abs() > config.divergence_threshold || !flat.allFinite()) {
        diverged = true;
        break;
      }
    }
    rec.losses = loss_sum / steps;
    state.history.push_back(rec);
    if (progress) progress(rec);
    if (diverged) {
      result.status = TrainingStatus::Diverged;
      break;
    }
  }
  model.params = state.params;
  return result;
}

}  // namespace beamvem
