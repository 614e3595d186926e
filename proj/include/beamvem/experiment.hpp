// Surrogate evaluation against VEM references and the mesh convergence sweep.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "beamvem/dataset.hpp"
#include "beamvem/io.hpp"
#include "beamvem/training.hpp"

namespace beamvem {

class MeshMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SampleError {
  long sample_id{0};
  double h1{0};
  double relative_h1{0};
};

struct EvaluationReport {
  std::vector<SampleError> samples;  // ascending sample id
  double h1_mean{0};
  double h1_std{0};  // population deviation
  double relative_mean{0};
  double relative_std{0};
  double vem_self_h1{0};  // largest reference-against-itself error
};

// Re-solves every test sample with `portico` and compares the surrogate with
// the VEM field in the H1 norm.
EvaluationReport evaluate_surrogate(const SurrogateModel& model, const std::vector<DatasetRecord>& test,
                                    const PorticoConfig& portico);

// Mean and population deviation; the input order does not matter.
std::pair<double, double> mean_and_std(std::vector<double> values);

io::json report_to_json(const EvaluationReport& report, const MeshDescriptor& mesh);

io::json manifest_json(const PorticoConfig& portico, int n_train, int n_test, std::uint64_t seed, int rejected);
PorticoConfig portico_from_manifest(const io::json& manifest);

struct ConvergenceRow {
  int order{0};
  int elems_per_edge{0};
  double h1_mean{0};
  double h1_std{0};
  double relative_mean{0};
  double relative_std{0};
  double vem_self_h1{0};
  std::string status{"ok"};
};

struct ConvergenceOptions {
  std::vector<int> orders{4, 5};
  std::vector<int> elems{24, 48, 96, 192, 384};
  int n_train{80};
  int n_test{20};
  std::uint64_t seed{0};
  PorticoConfig portico{};
  TrainingConfig training{};
  SobolevConfig sobolev{};
};

// Generates, trains and evaluates one configuration per (order, elems) pair.
// A failing configuration is recorded in its row and the sweep continues.
std::vector<ConvergenceRow> run_convergence(const ConvergenceOptions& options,
                                            const std::function<void(const ConvergenceRow&)>& progress = {});

std::string convergence_csv(const std::vector<ConvergenceRow>& rows);

}  // namespace beamvem
