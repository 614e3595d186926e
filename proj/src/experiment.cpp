#include "beamvem/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace beamvem {

std::pair<double, double> mean_and_std(std::vector<double> values) {
  if (values.empty()) return {0.0, 0.0};
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

EvaluationReport evaluate_surrogate(const SurrogateModel& model, const std::vector<DatasetRecord>& test,
                                    const PorticoConfig& portico) {
  if (test.empty()) throw std::invalid_argument("evaluation set is empty");
  for (const auto& r : test) {
    if (!(r.mesh == model.mesh) || !(r.mesh == portico.mesh)) {
      throw MeshMismatchError("mesh descriptor mismatch: model (" + std::to_string(model.mesh.elems_per_edge) + ", " +
                              std::to_string(model.mesh.order) + "), record (" +
                              std::to_string(r.mesh.elems_per_edge) + ", " + std::to_string(r.mesh.order) + ")");
    }
  }
  EvaluationReport report;
  std::vector<double> h1, rel;
  for (const auto& [id, records] : group_by_sample(test)) {
    const Material material = records.front().material;
    const GlobalSolution sol = assemble_and_solve(portico_model(portico, material));
    const VemField reference(sol);
    const SurrogateField surrogate(model, sol.mesh, material);
    const ErrorReport err = h1_error(reference, surrogate, sol.mesh);
    report.vem_self_h1 = std::max(report.vem_self_h1, h1_error(reference, reference, sol.mesh).h1_error);
    report.samples.push_back({id, err.h1_error, err.relative_h1});
    h1.push_back(err.h1_error);
    rel.push_back(err.relative_h1);
  }
  std::tie(report.h1_mean, report.h1_std) = mean_and_std(h1);
  std::tie(report.relative_mean, report.relative_std) = mean_and_std(rel);
  return report;
}

io::json report_to_json(const EvaluationReport& r, const MeshDescriptor& mesh) {
  io::json samples = io::json::array();
  for (const auto& s : r.samples) {
    samples.push_back({{"sample_id", s.sample_id}, {"h1", s.h1}, {"relative_h1", s.relative_h1}});
  }
  return {{"schema_version", io::schema_version},
          {"mesh", {{"elems_per_edge", mesh.elems_per_edge}, {"order", mesh.order}}},
          {"sample_count", r.samples.size()},
          {"h1_mean", r.h1_mean},
          {"h1_std", r.h1_std},
          {"relative_h1_mean", r.relative_mean},
          {"relative_h1_std", r.relative_std},
          {"vem_self_h1", r.vem_self_h1},
          {"samples", samples}};
}

io::json manifest_json(const PorticoConfig& portico, int n_train, int n_test, std::uint64_t seed, int rejected) {
  return {{"schema_version", io::schema_version},
          {"seed", seed},
          {"n_train", n_train},
          {"n_test", n_test},
          {"train_sample_ids", {0, n_train - 1}},
          {"test_sample_ids", {n_train, n_train + n_test - 1}},
          {"rejected_draws", rejected},
          {"files", {{"train", "train.jsonl"}, {"test", "test.jsonl"}}},
          {"portico", io::portico_to_json(portico)},
          {"sampling", "log-uniform"},
          {"assumed_defaults", {"E range", "I range", "A range", "beam_load"}}};
}

PorticoConfig portico_from_manifest(const io::json& manifest) {
  io::check_schema(manifest, "manifest");
  if (!manifest.contains("portico")) throw io::SchemaError("manifest: missing 'portico'");
  return io::portico_from_json(manifest.at("portico"));
}

std::vector<ConvergenceRow> run_convergence(const ConvergenceOptions& options,
                                            const std::function<void(const ConvergenceRow&)>& progress) {
  std::vector<ConvergenceRow> rows;
  for (int order : options.orders) {
    for (int elems : options.elems) {
      ConvergenceRow row;
      row.order = order;
      row.elems_per_edge = elems;
      try {
        PorticoConfig portico = options.portico;
        portico.mesh = {elems, order};
        const DatasetSplit data = generate_dataset(portico, options.n_train, options.n_test, options.seed);
        const TrainingResult trained = train(data.train, options.training, options.sobolev);
        const EvaluationReport report = evaluate_surrogate(trained.model, data.test, portico);
        row.h1_mean = report.h1_mean;
        row.h1_std = report.h1_std;
        row.relative_mean = report.relative_mean;
        row.relative_std = report.relative_std;
        row.vem_self_h1 = report.vem_self_h1;
        if (trained.status == TrainingStatus::Diverged) row.status = "diverged";
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
        row.h1_mean = row.h1_std = row.relative_mean = row.relative_std = std::nan("");
      }
      rows.push_back(row);
      if (progress) progress(row);
    }
  }
  return rows;
}

std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "order,elems_per_edge,h1_mean,h1_std,rel_h1_mean,rel_h1_std,vem_self_h1,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << r.order << ',' << r.elems_per_edge << ',' << r.h1_mean << ',' << r.h1_std << ',' << r.relative_mean << ','
        << r.relative_std << ',' << r.vem_self_h1 << ',' << status << '\n';
  }
  return out.str();
}

}  // namespace beamvem
