// Reference data for surrogate training: VEM solves of the portico over
// sampled materials, flattened to one record per mesh node.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "beamvem/frame.hpp"

namespace beamvem {

struct MeshDescriptor {
  int elems_per_edge{24};
  int order{4};

  bool operator==(const MeshDescriptor&) const = default;
};

// Derivative of the global displacement (ux, uy, theta) with respect to arc
// length along `tangent`, the unit direction of an incident member.
struct DirectionalDerivative {
  Eigen::Vector2d tangent{Eigen::Vector2d::Zero()};
  Eigen::Vector3d d_ds{Eigen::Vector3d::Zero()};

  bool operator==(const DirectionalDerivative&) const = default;
};

struct DatasetRecord {
  long sample_id{0};
  Material material{};
  int node_id{0};
  double x{0};
  double y{0};
  Eigen::Vector3d displacement{Eigen::Vector3d::Zero()};  // ux, uy, theta
  std::vector<DirectionalDerivative> derivatives;
  MeshDescriptor mesh{};

  bool operator==(const DatasetRecord& o) const;
};

// Log-uniform sampling intervals.
struct SamplingRanges {
  std::array<double, 2> elastic_modulus{5e10, 2.5e11};
  std::array<double, 2> inertia_moment{1e-6, 1e-4};
  std::array<double, 2> cross_section_area{1e-3, 1e-2};
};

struct PorticoConfig {
  double length{2.0};
  MeshDescriptor mesh{};
  double beam_load{-1e4};  // uniform transverse load on the beam, N/m
  SamplingRanges ranges{};
};

FrameModel portico_model(const PorticoConfig& config, const Material& material);

// One record per mesh node. Derivatives are taken per incident member and
// averaged over that member's elements touching the node.
std::vector<DatasetRecord> records_from_solution(const GlobalSolution& solution, const Material& material,
                                                 long sample_id, const MeshDescriptor& mesh);

std::uint64_t sample_seed(std::uint64_t seed, long sample_id);

Material draw_material(const SamplingRanges& ranges, std::mt19937_64& rng);

struct SampleResult {
  Material material{};
  std::vector<DatasetRecord> records;
  int rejected{0};
};

// Draws materials from the sample's own stream until a solve succeeds.
SampleResult generate_sample(const PorticoConfig& config, std::uint64_t seed, long sample_id);

struct DatasetSplit {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  int rejected{0};
};

// Train ids are 0..n_train-1, test ids follow. Output order is by sample id
// regardless of `threads`.
DatasetSplit generate_dataset(const PorticoConfig& config, int n_train, int n_test, std::uint64_t seed,
                              int threads = 1);

std::map<long, std::vector<DatasetRecord>> group_by_sample(const std::vector<DatasetRecord>& records);

}  // namespace beamvem
