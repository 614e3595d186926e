// Command-line harness: solve, gen-dataset, train, eval, convergence.
// Exit codes: 0 success, 1 numeric failure, 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "beamvem/experiment.hpp"
#include "beamvem/io.hpp"

namespace fs = std::filesystem;
using namespace beamvem;

namespace {

constexpr int exit_numeric = 1;
constexpr int exit_usage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path.string());
  return path;
}

// A dataset argument is either a JSONL file or a directory holding `default_name`.
fs::path dataset_file(const fs::path& arg, const std::string& default_name) {
  if (fs::is_directory(arg)) return require_file(arg / default_name, "dataset");
  return require_file(arg, "dataset");
}

struct SolveArgs {
  std::string frame, out;
  std::optional<int> order, elems;
};

int run_solve(const SolveArgs& a) {
  FrameModel model = io::frame_from_json(io::read_json(require_file(a.frame, "frame file")));
  for (auto& m : model.members) {
    if (a.order) m.order = *a.order;
    if (a.elems) m.elements = *a.elems;
  }
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const GlobalSolution sol = assemble_and_solve(model);
  const io::json doc = io::solution_to_json(sol);
  io::validate_solution(doc);
  if (!a.out.empty()) io::write_json(a.out, doc);
  std::cout << "dofs " << sol.dofs.total << ", residual " << sol.residual_norm << "\n";
  for (std::size_t i = 0; i < sol.mesh.nodes.size(); ++i) {
    if (sol.mesh.node_ids[i] < 0) continue;
    const Eigen::Vector3d u = sol.node_displacement(i);
    std::cout << "node " << sol.mesh.node_ids[i] << ": ux " << u(0) << " uy " << u(1) << " theta " << u(2) << "\n";
  }
  return 0;
}

struct GenArgs {
  std::string config, out;
  int n_train{80}, n_test{20}, threads{1};
  std::uint64_t seed{0};
  std::optional<int> order, elems;
};

int run_gen(const GenArgs& a) {
  PorticoConfig portico;
  if (!a.config.empty()) portico = io::portico_from_json(io::read_json(require_file(a.config, "config")));
  if (a.order) portico.mesh.order = *a.order;
  if (a.elems) portico.mesh.elems_per_edge = *a.elems;
  if (portico.mesh.order < 4) throw UsageError("order must be >= 4 for the distributed beam load");
  if (portico.mesh.elems_per_edge < 1) throw UsageError("elems-per-edge must be >= 1");
  const DatasetSplit split = generate_dataset(portico, a.n_train, a.n_test, a.seed, a.threads);
  const fs::path dir = a.out;
  io::write_jsonl(dir / "train.jsonl", split.train);
  io::write_jsonl(dir / "test.jsonl", split.test);
  io::write_json(dir / "manifest.json", manifest_json(portico, a.n_train, a.n_test, a.seed, split.rejected));
  std::cout << "wrote " << split.train.size() << " train and " << split.test.size() << " test records to "
            << dir.string() << " (" << split.rejected << " rejected draws)\n";
  return 0;
}

struct TrainArgs {
  std::string dataset, config, out, history;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  int log_every{100};
};

int run_train(const TrainArgs& a) {
  const auto records = io::read_jsonl(dataset_file(a.dataset, "train.jsonl"));
  if (records.empty()) throw UsageError("dataset has no records");
  TrainingConfig cfg;
  SobolevConfig sob;
  if (!a.config.empty()) io::training_config_from_json(io::read_json(require_file(a.config, "config")), cfg, sob);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto result = train(records, cfg, sob, std::nullopt, [&](const EpochRecord& e) {
    if (a.log_every > 0 && (e.epoch == 1 || e.epoch % a.log_every == 0)) {
      std::cerr << "epoch " << e.epoch << " L " << e.losses.transpose() << " theta " << e.theta.transpose() << "\n";
    }
  });
  fs::path history = a.history.empty() ? fs::path(a.out).replace_extension(".history.csv") : fs::path(a.history);
  io::write_json(a.out, io::model_to_json(result.model));
  io::write_text(history, io::history_csv(result.state.history));
  if (result.status == TrainingStatus::Diverged) {
    throw NumericFailure("training diverged at epoch " + std::to_string(result.state.history.size()) +
                         " (parameter magnitude above " + std::to_string(cfg.divergence_threshold) + ")");
  }
  std::cout << "trained " << result.state.history.size() << " epochs; model " << a.out << ", history "
            << history.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string model, dataset, manifest, report;
};

int run_eval(const EvalArgs& a) {
  const SurrogateModel model = io::model_from_json(io::read_json(require_file(a.model, "model")));
  const fs::path data = dataset_file(a.dataset, "test.jsonl");
  const fs::path manifest = a.manifest.empty() ? data.parent_path() / "manifest.json" : fs::path(a.manifest);
  const PorticoConfig portico = portico_from_manifest(io::read_json(require_file(manifest, "manifest")));
  const auto records = io::read_jsonl(data);
  const EvaluationReport report = evaluate_surrogate(model, records, portico);
  const io::json doc = report_to_json(report, model.mesh);
  if (!a.report.empty()) io::write_json(a.report, doc);
  std::cout << "samples " << report.samples.size() << ", h1 mean " << report.h1_mean << " std " << report.h1_std
            << ", relative mean " << report.relative_mean << " std " << report.relative_std << "\n";
  return 0;
}

struct ConvergenceArgs {
  std::string orders{"4,5"}, elems{"24,48,96,192,384"}, config, portico, out;
  int n_train{80}, n_test{20};
  std::optional<int> epochs;
  std::uint64_t seed{0};
};

std::vector<int> parse_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("invalid " + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError(what + " list is empty");
  return out;
}

int run_convergence_cmd(const ConvergenceArgs& a) {
  ConvergenceOptions opt;
  opt.orders = parse_list(a.orders, "orders");
  opt.elems = parse_list(a.elems, "elems");
  for (int o : opt.orders)
    if (o < 4) throw UsageError("orders must be >= 4 for the distributed beam load");
  for (int e : opt.elems)
    if (e < 1) throw UsageError("elems must be >= 1");
  opt.n_train = a.n_train;
  opt.n_test = a.n_test;
  opt.seed = a.seed;
  if (!a.portico.empty()) opt.portico = io::portico_from_json(io::read_json(require_file(a.portico, "portico config")));
  if (!a.config.empty()) {
    io::training_config_from_json(io::read_json(require_file(a.config, "config")), opt.training, opt.sobolev);
  }
  if (a.epochs) opt.training.epochs = *a.epochs;
  const auto rows = run_convergence(opt, [](const ConvergenceRow& r) {
    std::cerr << "order " << r.order << " elems " << r.elems_per_edge << ": h1 " << r.h1_mean << " rel "
              << r.relative_mean << " (" << r.status << ")\n";
  });
  const std::string csv = convergence_csv(rows);
  if (!a.out.empty()) io::write_text(a.out, csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VEM frame solver and neural surrogate experiments"};
  app.require_subcommand(1);

  SolveArgs solve;
  auto* s = app.add_subcommand("solve", "Solve a frame description with VEM elements");
  s->add_option("--model-file,--frame", solve.frame, "Frame JSON")->required();
  s->add_option("--order", solve.order, "Override the element order of every member");
  s->add_option("--elems-per-edge", solve.elems, "Override the element count of every member");
  s->add_option("--out", solve.out, "Solution JSON");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-dataset", "Generate portico train/test datasets");
  g->add_option("--config", gen.config, "Portico config JSON");
  g->add_option("--n-train", gen.n_train)->check(CLI::NonNegativeNumber);
  g->add_option("--n-test", gen.n_test)->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed);
  g->add_option("--order", gen.order);
  g->add_option("--elems-per-edge", gen.elems);
  g->add_option("--threads", gen.threads)->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the surrogate");
  t->add_option("--dataset", tr.dataset, "train.jsonl or its directory")->required();
  t->add_option("--config", tr.config, "Training config JSON");
  t->add_option("--out", tr.out, "Model JSON")->required();
  t->add_option("--history", tr.history, "History CSV (default: <out>.history.csv)");
  t->add_option("--epochs", tr.epochs);
  t->add_option("--seed", tr.seed);
  t->add_option("--log-every", tr.log_every, "Progress interval in epochs, 0 for none");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "H1 error of a model on a test set");
  e->add_option("--model", ev.model)->required();
  e->add_option("--dataset", ev.dataset, "test.jsonl or its directory")->required();
  e->add_option("--manifest", ev.manifest, "Dataset manifest (default: next to the dataset)");
  e->add_option("--report", ev.report, "Report JSON");

  ConvergenceArgs cv;
  auto* c = app.add_subcommand("convergence", "Error sweep over orders and mesh sizes");
  c->add_option("--orders", cv.orders, "Comma-separated element orders");
  c->add_option("--elems", cv.elems, "Comma-separated elements per edge");
  c->add_option("--n-train", cv.n_train)->check(CLI::PositiveNumber);
  c->add_option("--n-test", cv.n_test)->check(CLI::PositiveNumber);
  c->add_option("--epochs", cv.epochs);
  c->add_option("--seed", cv.seed);
  c->add_option("--config", cv.config, "Training config JSON");
  c->add_option("--portico-config", cv.portico, "Portico config JSON");
  c->add_option("--out", cv.out, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return exit_usage;
  }

  try {
    if (*s) return run_solve(solve);
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*c) return run_convergence_cmd(cv);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_usage;
  } catch (const io::SchemaError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_usage;
  } catch (const MeshMismatchError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_usage;
  } catch (const SingularSystemError& err) {
    std::cerr << "error: singular system: " << err.what() << "\n";
    return exit_numeric;
  } catch (const nn::NonFiniteGradientError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_numeric;
  } catch (const NumericFailure& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_numeric;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_usage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return exit_numeric;
  }
  return exit_usage;
}
