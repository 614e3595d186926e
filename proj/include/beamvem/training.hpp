// Surrogate training: displacement, Sobolev and material-penalty losses
// balanced by GradNorm task weights.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beamvem/dataset.hpp"
#include "beamvem/field.hpp"
#include "beamvem/network.hpp"
#include "beamvem/optimizer.hpp"

namespace beamvem {

// Flexural scaling trains on E*I*u instead of u, which removes most of the
// amplitude variation across materials.
enum class OutputScaling { None, Flexural };
enum class MaterialPenalty { Homogeneity, WeightDecay };

std::string to_string(OutputScaling s);
std::string to_string(MaterialPenalty p);
OutputScaling output_scaling_from_string(const std::string& s);
MaterialPenalty material_penalty_from_string(const std::string& s);

struct FeatureScaling {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  // Per-row mean and population deviation of `columns`; degenerate rows get scale 1.
  static FeatureScaling fit(const Eigen::MatrixXd& columns);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& columns) const;
};

struct Normalization {
  FeatureScaling node;      // x, y
  FeatureScaling material;  // log E, log A, log I
  FeatureScaling output;    // s * (ux, uy, theta)
  OutputScaling output_scaling{OutputScaling::Flexural};

  static Eigen::Vector3d material_features(const Material& m);
  double scale_factor(const Material& m) const;
  // Exponent p with s(c E) = c^p s(E).
  double scale_exponent() const { return output_scaling == OutputScaling::Flexural ? 1.0 : 0.0; }

  static Normalization fit(const std::vector<DatasetRecord>& records, OutputScaling scaling);
};

struct TaskWeights {
  Eigen::Vector3d theta{Eigen::Vector3d::Ones()};
  double total{3.0};
  Eigen::Vector3d initial_loss{Eigen::Vector3d::Zero()};
  bool initial_recorded{false};

  // Clamps to `floor` and rescales so the weights sum to `total`.
  void renormalize(double floor = 0.0);
};

struct SobolevConfig {
  int order{1};
  int samples{8};  // projection draws per row per step
  int dimension{2};
  std::uint64_t seed{0};

  void validate() const;
};

struct TrainingConfig {
  double alpha{1.5};
  int epochs{2000};
  int batch_size{0};  // 0: full batch
  double learning_rate{1e-3};
  double weight_learning_rate{2.5e-2};
  double divergence_threshold{1e3};
  double weight_floor{1e-3};
  std::uint64_t seed{0};
  MaterialPenalty material_penalty{MaterialPenalty::Homogeneity};
  std::array<double, 2> scale_range{0.5, 2.0};
  OutputScaling output_scaling{OutputScaling::Flexural};
  nn::Architecture architecture{};

  void validate() const;
};

// Normalized training rows, one column per record.
struct TrainingBatch {
  Eigen::MatrixXd node;      // 2 x B
  Eigen::MatrixXd material;  // 3 x B
  Eigen::MatrixXd target;    // 3 x B
  // Sobolev reference gradient in normalized coordinates and the projector
  // onto the directions it is known along.
  std::vector<Eigen::Matrix<double, 3, 2>> reference_gradient;
  std::vector<Eigen::Matrix2d> projector;

  Eigen::Index size() const { return node.cols(); }
  TrainingBatch select(const std::vector<Eigen::Index>& columns) const;
};

TrainingBatch prepare_batch(const std::vector<DatasetRecord>& records, const Normalization& norm);

// Sum over components, mean over columns.
double displacement_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target,
                         Eigen::MatrixXd* adjoint = nullptr);

Eigen::VectorXd sample_unit_sphere(int d, std::mt19937_64& rng);

// Mean of v v^T over `samples` sphere draws, one matrix per row.
std::vector<Eigen::Matrix2d> draw_projection_moments(Eigen::Index rows, int samples, std::mt19937_64& rng);

// Mean over rows of sum_c R_c^T S R_c with R = (J_model - J_ref) P, which is
// the mean over draws of squared projected gradient differences.
// `model_tangents[k]` is d output / d coordinate k (3 x B).
double sobolev_loss(const std::vector<Eigen::MatrixXd>& model_tangents,
                    const std::vector<Eigen::Matrix<double, 3, 2>>& reference_gradient,
                    const std::vector<Eigen::Matrix2d>& projector, const std::vector<Eigen::Matrix2d>& moments,
                    std::vector<Eigen::MatrixXd>* adjoint = nullptr);

// Homogeneity residual between predictions at E and at c E, measured in
// normalized output units.
double homogeneity_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& scaled_prediction,
                        const Eigen::VectorXd& factors, const Normalization& norm,
                        Eigen::MatrixXd* adjoint = nullptr, Eigen::MatrixXd* scaled_adjoint = nullptr);

// Material features with log E shifted by log c per column.
Eigen::MatrixXd scale_modulus_features(const Eigen::MatrixXd& material, const Eigen::VectorXd& factors,
                                       const Normalization& norm);

double material_penalty_loss(const nn::NetworkParameters<double>& params, const TrainingBatch& batch,
                             const Normalization& norm, const Eigen::VectorXd& factors);

struct GradNormStep {
  Eigen::Vector3d gradient_norms{Eigen::Vector3d::Zero()};  // |grad_W L_i|
  Eigen::Vector3d weighted_norms{Eigen::Vector3d::Zero()};  // G_i = theta_i |grad_W L_i|
  double mean_norm{0};
  Eigen::Vector3d loss_ratios{Eigen::Vector3d::Ones()};
  Eigen::Vector3d inverse_rates{Eigen::Vector3d::Ones()};
  Eigen::Vector3d targets{Eigen::Vector3d::Zero()};
  double loss{0};
  Eigen::Vector3d gradient{Eigen::Vector3d::Zero()};
};

// Evaluates the balancing loss and its gradient for fixed targets.
GradNormStep gradnorm_step(const TaskWeights& weights, const Eigen::Vector3d& losses,
                           const Eigen::Vector3d& gradient_norms, double alpha);

double gradnorm_loss(const Eigen::Vector3d& theta, const Eigen::Vector3d& gradient_norms,
                     const Eigen::Vector3d& targets);

// Records initial losses on first use, then takes one SGD step on the task
// weights and renormalizes.
GradNormStep gradnorm_update(TaskWeights& weights, const Eigen::Vector3d& losses,
                             const Eigen::Vector3d& gradient_norms, const TrainingConfig& config);

// Index of the head layer whose weights define the shared gradient norms.
std::size_t gradnorm_layer(const nn::NetworkParameters<double>& params);

// Random quantities of one optimization step.
struct StepDraws {
  std::vector<Eigen::Matrix2d> moments;
  Eigen::VectorXd scale_factors;
};

StepDraws draw_step(Eigen::Index rows, const SobolevConfig& sobolev, const TrainingConfig& config,
                    std::mt19937_64& rng);

struct TaskEvaluation {
  Eigen::Vector3d losses{Eigen::Vector3d::Zero()};
  Eigen::Vector3d gradient_norms{Eigen::Vector3d::Zero()};
  Eigen::VectorXd total_gradient;  // flattened, sum_i theta_i grad L_i
  std::array<Eigen::VectorXd, 3> task_gradients;  // filled when requested
};

TaskEvaluation evaluate_tasks(const nn::NetworkParameters<double>& params, const TrainingBatch& batch,
                              const Normalization& norm, const StepDraws& draws, const TrainingConfig& config,
                              const Eigen::Vector3d& theta, bool task_gradients = false);

struct SurrogateModel {
  nn::NetworkParameters<double> params;
  Normalization normalization;
  MeshDescriptor mesh{};
  TrainingConfig config{};
  SobolevConfig sobolev{};

  Eigen::Vector3d predict(const Eigen::Vector2d& point, const Material& material) const;
  // Physical displacement and its Jacobian with respect to (x, y).
  std::pair<Eigen::Vector3d, Eigen::Matrix<double, 3, 2>> predict_with_gradient(const Eigen::Vector2d& point,
                                                                                const Material& material) const;
};

// Surrogate displacement restricted to the elements of a mesh.
class SurrogateField final : public DisplacementField {
 public:
  SurrogateField(const SurrogateModel& model, const FrameMesh& mesh, const Material& material)
      : model_(&model), mesh_(&mesh), material_(material) {}
  std::size_t element_count() const override { return mesh_->elements.size(); }
  LocalDisplacement evaluate(std::size_t element, double x) const override;

 private:
  const SurrogateModel* model_;
  const FrameMesh* mesh_;
  Material material_;
};

struct EpochRecord {
  int epoch{0};
  Eigen::Vector3d losses{Eigen::Vector3d::Zero()};
  Eigen::Vector3d theta{Eigen::Vector3d::Zero()};  // weights used in the epoch's loss
  Eigen::Vector3d weighted_norms{Eigen::Vector3d::Zero()};

  double total() const { return theta.dot(losses); }
};

enum class TrainingStatus { Completed, Diverged };

struct TrainingState {
  nn::NetworkParameters<double> params;
  nn::Adam<double> optimizer;
  TaskWeights weights;
  std::vector<EpochRecord> history;
};

struct TrainingResult {
  SurrogateModel model;
  TrainingState state;
  TrainingStatus status{TrainingStatus::Completed};
};

TrainingResult train(const std::vector<DatasetRecord>& records, const TrainingConfig& config,
                     const SobolevConfig& sobolev,
                     const std::optional<nn::NetworkParameters<double>>& initial = std::nullopt,
                     const std::function<void(const EpochRecord&)>& progress = {});

}  // namespace beamvem
