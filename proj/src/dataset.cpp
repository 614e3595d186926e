#include "beamvem/dataset.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace beamvem {

bool DatasetRecord::operator==(const DatasetRecord& o) const {
  return sample_id == o.sample_id && material.elastic_modulus == o.material.elastic_modulus &&
         material.inertia_moment == o.material.inertia_moment &&
         material.cross_section_area == o.material.cross_section_area && node_id == o.node_id && x == o.x &&
         y == o.y && displacement == o.displacement && derivatives == o.derivatives && mesh == o.mesh;
}

FrameModel portico_model(const PorticoConfig& config, const Material& material) {
  LoadSpec<double> load;
  load.distributed = Eigen::VectorXd::Constant(1, config.beam_load);
  return build_portico(config.length, config.mesh.elems_per_edge, config.mesh.order, material, load);
}

std::vector<DatasetRecord> records_from_solution(const GlobalSolution& solution, const Material& material,
                                                 long sample_id, const MeshDescriptor& mesh) {
  const auto& fm = solution.mesh;
  // (node, member) -> accumulated derivative and count
  std::vector<std::map<std::size_t, std::pair<DirectionalDerivative, int>>> incident(fm.nodes.size());
  for (std::size_t e = 0; e < fm.elements.size(); ++e) {
    const auto& geom = fm.elements[e];
    const auto& es = solution.elements[e];
    const Eigen::Vector2d t = geom.tangent();
    const double c = t.x(), s = t.y();
    const double du = (es.axial(1) - es.axial(0)) / geom.length;
    for (int end = 0; end < 2; ++end) {
      const double x = end == 0 ? 0.0 : geom.length;
      const Eigen::Vector3d w = evaluate_polynomial<double>(es.coefficients, x);
      DirectionalDerivative d;
      d.tangent = t;
      d.d_ds = Eigen::Vector3d(c * du - s * w(1), s * du + c * w(1), w(2));
      auto& slot = incident[end == 0 ? geom.start_node : geom.end_node][geom.member];
      slot.first.tangent = t;
      slot.first.d_ds += d.d_ds;
      slot.second += 1;
    }
  }
  std::vector<DatasetRecord> out;
  out.reserve(fm.nodes.size());
  for (std::size_t i = 0; i < fm.nodes.size(); ++i) {
    DatasetRecord r;
    r.sample_id = sample_id;
    r.material = material;
    r.node_id = static_cast<int>(i);
    r.x = fm.nodes[i].x();
    r.y = fm.nodes[i].y();
    r.displacement = solution.node_displacement(i);
    r.mesh = mesh;
    for (auto& [member, acc] : incident[i]) {
      DirectionalDerivative d = acc.first;
      d.d_ds /= acc.second;
      r.derivatives.push_back(d);
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t seed, long sample_id) {
  // splitmix64 over the combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(sample_id) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Material draw_material(const SamplingRanges& ranges, std::mt19937_64& rng) {
  auto log_uniform = [&](const std::array<double, 2>& r) {
    if (!(r[0] > 0 && r[1] >= r[0])) throw std::invalid_argument("sampling range must satisfy 0 < lo <= hi");
    std::uniform_real_distribution<double> U(std::log(r[0]), std::log(r[1]));
    return std::exp(U(rng));
  };
  Material m;
  m.elastic_modulus = log_uniform(ranges.elastic_modulus);
  m.inertia_moment = log_uniform(ranges.inertia_moment);
  m.cross_section_area = log_uniform(ranges.cross_section_area);
  return m;
}

SampleResult generate_sample(const PorticoConfig& config, std::uint64_t seed, long sample_id) {
  constexpr int max_attempts = 100;
  constexpr double backward_error_limit = 1e-12;
  std::mt19937_64 rng(sample_seed(seed, sample_id));
  SampleResult result;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const Material material = draw_material(config.ranges, rng);
    try {
      const GlobalSolution sol = assemble_and_solve(portico_model(config, material));
      if (!(sol.backward_error <= backward_error_limit)) {
        ++result.rejected;
        continue;
      }
      result.material = material;
      result.records = records_from_solution(sol, material, sample_id, config.mesh);
      return result;
    } catch (const SingularSystemError&) {
      ++result.rejected;
    }
  }
  throw std::runtime_error("sample " + std::to_string(sample_id) + ": no solvable draw after " +
                           std::to_string(max_attempts) + " attempts");
}

DatasetSplit generate_dataset(const PorticoConfig& config, int n_train, int n_test, std::uint64_t seed,
                              int threads) {
  if (n_train < 0 || n_test < 0) throw std::invalid_argument("sample counts must be non-negative");
  const int total = n_train + n_test;
  std::vector<SampleResult> results(static_cast<std::size_t>(total));
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(threads, 1)));
  auto worker = [&](int slot) {
    try {
      for (int id = next++; id < total; id = next++) results[static_cast<std::size_t>(id)] = generate_sample(config, seed, id);
    } catch (...) {
      errors[static_cast<std::size_t>(slot)] = std::current_exception();
      next = total;
    }
  };
  if (threads <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  DatasetSplit split;
  for (int id = 0; id < total; ++id) {
    auto& r = results[static_cast<std::size_t>(id)];
    split.rejected += r.rejected;
    auto& dst = id < n_train ? split.train : split.test;
    dst.insert(dst.end(), std::make_move_iterator(r.records.begin()), std::make_move_iterator(r.records.end()));
  }
  return split;
}

std::map<long, std::vector<DatasetRecord>> group_by_sample(const std::vector<DatasetRecord>& records) {
  std::map<long, std::vector<DatasetRecord>> out;
  for (const auto& r : records) out[r.sample_id].push_back(r);
  return out;
}

}  // namespace beamvem
