#include "beamvem/io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace beamvem::io {

namespace {

template <typename T>
T get(const json& doc, const char* key, const std::string& where) {
  if (!doc.is_object() || !doc.contains(key)) throw SchemaError(where + ": missing '" + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw SchemaError(where + ": '" + key + "' has the wrong type");
  }
}

template <typename T>
void get_optional(const json& doc, const char* key, T& out, const std::string& where) {
  if (doc.contains(key)) out = get<T>(doc, key, where);
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json material_to_json(const Material& m) {
  return {{"E", m.elastic_modulus}, {"A", m.cross_section_area}, {"I", m.inertia_moment}};
}

Material material_from_json(const json& doc, const std::string& where) {
  Material m;
  m.elastic_modulus = get<double>(doc, "E", where);
  m.cross_section_area = get<double>(doc, "A", where);
  m.inertia_moment = get<double>(doc, "I", where);
  return m;
}

json layer_to_json(const nn::DenseLayer<double>& l) {
  std::vector<double> w;
  for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.push_back(l.weights(r, c));
  return {{"inputs", l.inputs()},
          {"outputs", l.outputs()},
          {"activation", nn::to_string(l.activation)},
          {"weights", w},
          {"bias", vec(l.bias)}};
}

nn::DenseLayer<double> layer_from_json(const json& doc, const std::string& where) {
  nn::DenseLayer<double> l;
  const auto in = get<Eigen::Index>(doc, "inputs", where);
  const auto out = get<Eigen::Index>(doc, "outputs", where);
  const auto w = get<std::vector<double>>(doc, "weights", where);
  const auto b = get<std::vector<double>>(doc, "bias", where);
  if (in < 1 || out < 1 || static_cast<Eigen::Index>(w.size()) != in * out ||
      static_cast<Eigen::Index>(b.size()) != out) {
    throw SchemaError(where + ": layer dimensions disagree with the stored values");
  }
  try {
    l.activation = nn::activation_from_string(get<std::string>(doc, "activation", where));
  } catch (const SchemaError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw SchemaError(where + ": " + e.what());
  }
  l.weights.resize(out, in);
  for (Eigen::Index r = 0; r < out; ++r)
    for (Eigen::Index c = 0; c < in; ++c) l.weights(r, c) = w[static_cast<std::size_t>(r * in + c)];
  l.bias = to_vector(b);
  return l;
}

json scaling_to_json(const FeatureScaling& f) { return {{"mean", vec(f.mean)}, {"scale", vec(f.scale)}}; }

FeatureScaling scaling_from_json(const json& doc, const std::string& where, Eigen::Index size) {
  FeatureScaling f;
  f.mean = to_vector(get<std::vector<double>>(doc, "mean", where));
  f.scale = to_vector(get<std::vector<double>>(doc, "scale", where));
  if (f.mean.size() != size || f.scale.size() != size || !(f.scale.array() > 0).all()) {
    throw SchemaError(where + ": invalid normalization statistics");
  }
  return f;
}

}  // namespace

void check_schema(const json& doc, const std::string& what) {
  if (!doc.is_object()) throw SchemaError(what + ": expected a JSON object");
  if (!doc.contains("schema_version")) throw SchemaError(what + ": missing schema_version");
  if (!doc.at("schema_version").is_number_integer() || doc.at("schema_version").get<int>() != schema_version) {
    throw SchemaError(what + ": unsupported schema_version");
  }
}

json frame_to_json(const FrameModel& model) {
  json doc = {{"schema_version", schema_version}};
  doc["nodes"] = json::array();
  for (const auto& n : model.nodes) doc["nodes"].push_back({{"id", n.id}, {"x", n.x}, {"y", n.y}});
  doc["members"] = json::array();
  for (const auto& m : model.members) {
    doc["members"].push_back({{"nodes", {m.start, m.end}},
                              {"material", material_to_json(m.material)},
                              {"elements", m.elements},
                              {"order", m.order},
                              {"distributed_load", m.distributed_load}});
  }
  doc["supports"] = json::array();
  for (const auto& s : model.supports) {
    doc["supports"].push_back({{"node", s.node}, {"ux", s.ux}, {"uy", s.uy}, {"theta", s.theta}});
  }
  doc["nodal_loads"] = json::array();
  for (const auto& l : model.nodal_loads) {
    doc["nodal_loads"].push_back({{"node", l.node}, {"fx", l.fx}, {"fy", l.fy}, {"moment", l.moment}});
  }
  return doc;
}

FrameModel frame_from_json(const json& doc) {
  check_schema(doc, "frame");
  FrameModel m;
  for (const auto& n : get<json>(doc, "nodes", "frame")) {
    m.nodes.push_back({get<int>(n, "id", "frame.nodes"), get<double>(n, "x", "frame.nodes"),
                       get<double>(n, "y", "frame.nodes")});
  }
  for (const auto& j : get<json>(doc, "members", "frame")) {
    const std::string where = "frame.members";
    Member mem;
    const auto ends = get<std::vector<int>>(j, "nodes", where);
    if (ends.size() != 2) throw SchemaError(where + ": 'nodes' must hold two ids");
    mem.start = ends[0];
    mem.end = ends[1];
    mem.material = material_from_json(get<json>(j, "material", where), where + ".material");
    mem.elements = get<int>(j, "elements", where);
    mem.order = get<int>(j, "order", where);
    get_optional(j, "distributed_load", mem.distributed_load, where);
    m.members.push_back(mem);
  }
  if (doc.contains("supports")) {
    for (const auto& s : doc.at("supports")) {
      Support sup;
      sup.node = get<int>(s, "node", "frame.supports");
      get_optional(s, "ux", sup.ux, "frame.supports");
      get_optional(s, "uy", sup.uy, "frame.supports");
      get_optional(s, "theta", sup.theta, "frame.supports");
      m.supports.push_back(sup);
    }
  }
  if (doc.contains("nodal_loads")) {
    for (const auto& l : doc.at("nodal_loads")) {
      NodalLoad load;
      load.node = get<int>(l, "node", "frame.nodal_loads");
      get_optional(l, "fx", load.fx, "frame.nodal_loads");
      get_optional(l, "fy", load.fy, "frame.nodal_loads");
      get_optional(l, "moment", load.moment, "frame.nodal_loads");
      m.nodal_loads.push_back(load);
    }
  }
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("frame: ") + e.what());
  }
  return m;
}

json solution_to_json(const GlobalSolution& s) {
  json doc = {{"schema_version", schema_version}, {"dof_count", s.dofs.total}, {"residual_norm", s.residual_norm},
              {"backward_error", s.backward_error}};
  doc["nodes"] = json::array();
  for (std::size_t i = 0; i < s.mesh.nodes.size(); ++i) {
    const Eigen::Vector3d u = s.node_displacement(i);
    json n = {{"index", i},
              {"x", s.mesh.nodes[i].x()},
              {"y", s.mesh.nodes[i].y()},
              {"ux", u(0)},
              {"uy", u(1)},
              {"theta", u(2)}};
    if (s.mesh.node_ids[i] >= 0) n["id"] = s.mesh.node_ids[i];
    doc["nodes"].push_back(n);
  }
  doc["elements"] = json::array();
  for (std::size_t e = 0; e < s.elements.size(); ++e) {
    const auto& es = s.elements[e];
    const auto& geom = s.mesh.elements[e];
    doc["elements"].push_back({{"member", es.member},
                               {"index", es.index_in_member},
                               {"length", geom.length},
                               {"angle", geom.angle},
                               {"axial", {es.axial(0), es.axial(1)}},
                               {"coefficients", vec(es.coefficients)},
                               {"moments", vec(es.bending_dofs.tail(es.bending_dofs.size() - 4))}});
  }
  doc["dofs"] = vec(s.values);
  return doc;
}

void validate_solution(const json& doc) {
  check_schema(doc, "solution");
  const auto dofs = get<std::vector<double>>(doc, "dofs", "solution");
  if (get<std::size_t>(doc, "dof_count", "solution") != dofs.size()) {
    throw SchemaError("solution: dof_count disagrees with dofs");
  }
  get<double>(doc, "residual_norm", "solution");
  for (const auto& n : get<json>(doc, "nodes", "solution")) {
    for (const char* k : {"x", "y", "ux", "uy", "theta"}) get<double>(n, k, "solution.nodes");
  }
  for (const auto& e : get<json>(doc, "elements", "solution")) {
    get<std::size_t>(e, "member", "solution.elements");
    get<double>(e, "length", "solution.elements");
    if (get<std::vector<double>>(e, "axial", "solution.elements").size() != 2) {
      throw SchemaError("solution.elements: 'axial' must hold two values");
    }
    get<std::vector<double>>(e, "coefficients", "solution.elements");
    get<std::vector<double>>(e, "moments", "solution.elements");
  }
}

json record_to_json(const DatasetRecord& r) {
  json d = json::array();
  for (const auto& x : r.derivatives) {
    d.push_back({{"tangent", {x.tangent(0), x.tangent(1)}}, {"d_ds", {x.d_ds(0), x.d_ds(1), x.d_ds(2)}}});
  }
  return {{"schema_version", schema_version},
          {"sample_id", r.sample_id},
          {"material", material_to_json(r.material)},
          {"node_id", r.node_id},
          {"x", r.x},
          {"y", r.y},
          {"displacement", {r.displacement(0), r.displacement(1), r.displacement(2)}},
          {"derivatives", d},
          {"mesh", {{"elems_per_edge", r.mesh.elems_per_edge}, {"order", r.mesh.order}}}};
}

DatasetRecord record_from_json(const json& doc) {
  const std::string where = "record";
  check_schema(doc, where);
  DatasetRecord r;
  r.sample_id = get<long>(doc, "sample_id", where);
  r.material = material_from_json(get<json>(doc, "material", where), where + ".material");
  r.node_id = get<int>(doc, "node_id", where);
  r.x = get<double>(doc, "x", where);
  r.y = get<double>(doc, "y", where);
  const auto u = get<std::vector<double>>(doc, "displacement", where);
  if (u.size() != 3) throw SchemaError(where + ": displacement must hold three values");
  r.displacement = Eigen::Vector3d(u[0], u[1], u[2]);
  for (const auto& d : get<json>(doc, "derivatives", where)) {
    const auto t = get<std::vector<double>>(d, "tangent", where + ".derivatives");
    const auto v = get<std::vector<double>>(d, "d_ds", where + ".derivatives");
    if (t.size() != 2 || v.size() != 3) throw SchemaError(where + ".derivatives: wrong vector length");
    r.derivatives.push_back({Eigen::Vector2d(t[0], t[1]), Eigen::Vector3d(v[0], v[1], v[2])});
  }
  const auto mesh = get<json>(doc, "mesh", where);
  r.mesh.elems_per_edge = get<int>(mesh, "elems_per_edge", where + ".mesh");
  r.mesh.order = get<int>(mesh, "order", where + ".mesh");
  return r;
}

json portico_to_json(const PorticoConfig& c) {
  return {{"schema_version", schema_version},
          {"length", c.length},
          {"elems_per_edge", c.mesh.elems_per_edge},
          {"order", c.mesh.order},
          {"beam_load", c.beam_load},
          {"ranges",
           {{"E", c.ranges.elastic_modulus}, {"I", c.ranges.inertia_moment}, {"A", c.ranges.cross_section_area}}}};
}

PorticoConfig portico_from_json(const json& doc) {
  check_schema(doc, "portico config");
  const std::string where = "portico config";
  PorticoConfig c;
  get_optional(doc, "length", c.length, where);
  get_optional(doc, "elems_per_edge", c.mesh.elems_per_edge, where);
  get_optional(doc, "order", c.mesh.order, where);
  get_optional(doc, "beam_load", c.beam_load, where);
  if (doc.contains("ranges")) {
    const auto& r = doc.at("ranges");
    get_optional(r, "E", c.ranges.elastic_modulus, where + ".ranges");
    get_optional(r, "I", c.ranges.inertia_moment, where + ".ranges");
    get_optional(r, "A", c.ranges.cross_section_area, where + ".ranges");
  }
  if (!(c.length > 0) || c.mesh.elems_per_edge < 1 || c.mesh.order < 3) {
    throw SchemaError(where + ": length, elems_per_edge or order out of range");
  }
  if (c.mesh.order < 4 && c.beam_load != 0) {
    throw SchemaError(where + ": order 3 elements cannot carry the distributed beam load");
  }
  return c;
}

json training_config_to_json(const TrainingConfig& c, const SobolevConfig& s) {
  const auto& a = c.architecture;
  return {{"schema_version", schema_version},
          {"alpha", c.alpha},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_learning_rate", c.weight_learning_rate},
          {"divergence_threshold", c.divergence_threshold},
          {"weight_floor", c.weight_floor},
          {"seed", c.seed},
          {"material_penalty", to_string(c.material_penalty)},
          {"scale_range", c.scale_range},
          {"output_scaling", to_string(c.output_scaling)},
          {"architecture",
           {{"node_layers", a.node_layers},
            {"material_layers", a.material_layers},
            {"head_layers", a.head_layers},
            {"activation", nn::to_string(a.activation)}}},
          {"sobolev", {{"order", s.order}, {"samples", s.samples}, {"dimension", s.dimension}, {"seed", s.seed}}}};
}

void training_config_from_json(const json& doc, TrainingConfig& c, SobolevConfig& s) {
  check_schema(doc, "training config");
  const std::string where = "training config";
  get_optional(doc, "alpha", c.alpha, where);
  get_optional(doc, "epochs", c.epochs, where);
  get_optional(doc, "batch_size", c.batch_size, where);
  get_optional(doc, "learning_rate", c.learning_rate, where);
  get_optional(doc, "weight_learning_rate", c.weight_learning_rate, where);
  get_optional(doc, "divergence_threshold", c.divergence_threshold, where);
  get_optional(doc, "weight_floor", c.weight_floor, where);
  get_optional(doc, "seed", c.seed, where);
  get_optional(doc, "scale_range", c.scale_range, where);
  try {
    if (doc.contains("material_penalty")) {
      c.material_penalty = material_penalty_from_string(get<std::string>(doc, "material_penalty", where));
    }
    if (doc.contains("output_scaling")) {
      c.output_scaling = output_scaling_from_string(get<std::string>(doc, "output_scaling", where));
    }
    if (doc.contains("architecture")) {
      const auto& a = doc.at("architecture");
      get_optional(a, "node_layers", c.architecture.node_layers, where);
      get_optional(a, "material_layers", c.architecture.material_layers, where);
      get_optional(a, "head_layers", c.architecture.head_layers, where);
      if (a.contains("activation")) {
        c.architecture.activation = nn::activation_from_string(get<std::string>(a, "activation", where));
      }
    }
    if (doc.contains("sobolev")) {
      const auto& j = doc.at("sobolev");
      get_optional(j, "order", s.order, where);
      get_optional(j, "samples", s.samples, where);
      get_optional(j, "dimension", s.dimension, where);
      get_optional(j, "seed", s.seed, where);
    }
    c.validate();
    s.validate();
  } catch (const SchemaError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

json model_to_json(const SurrogateModel& m) {
  json layers = json::object();
  for (auto [name, group] : {std::pair{"node", &m.params.node}, std::pair{"material", &m.params.material},
                             std::pair{"head", &m.params.head}}) {
    layers[name] = json::array();
    for (const auto& l : *group) layers[name].push_back(layer_to_json(l));
  }
  return {{"schema_version", schema_version},
          {"network", layers},
          {"normalization",
           {{"node", scaling_to_json(m.normalization.node)},
            {"material", scaling_to_json(m.normalization.material)},
            {"output", scaling_to_json(m.normalization.output)},
            {"output_scaling", to_string(m.normalization.output_scaling)}}},
          {"mesh", {{"elems_per_edge", m.mesh.elems_per_edge}, {"order", m.mesh.order}}},
          {"training", training_config_to_json(m.config, m.sobolev)}};
}

SurrogateModel model_from_json(const json& doc) {
  check_schema(doc, "model");
  SurrogateModel m;
  const auto net = get<json>(doc, "network", "model");
  for (auto [name, group] :
       {std::pair{"node", &m.params.node}, std::pair{"material", &m.params.material}, std::pair{"head", &m.params.head}}) {
    for (const auto& l : get<json>(net, name, "model.network")) {
      group->push_back(layer_from_json(l, std::string("model.network.") + name));
    }
  }
  try {
    m.params.validate();
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("model: ") + e.what());
  }
  if (m.params.node_inputs() != 2 || m.params.material_inputs() != 3 || m.params.outputs() != 3) {
    throw SchemaError("model: network must map 2 node and 3 material features to 3 outputs");
  }
  const auto norm = get<json>(doc, "normalization", "model");
  m.normalization.node = scaling_from_json(get<json>(norm, "node", "model.normalization"), "model.normalization.node", 2);
  m.normalization.material =
      scaling_from_json(get<json>(norm, "material", "model.normalization"), "model.normalization.material", 3);
  m.normalization.output =
      scaling_from_json(get<json>(norm, "output", "model.normalization"), "model.normalization.output", 3);
  try {
    m.normalization.output_scaling =
        output_scaling_from_string(get<std::string>(norm, "output_scaling", "model.normalization"));
  } catch (const SchemaError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("model: ") + e.what());
  }
  const auto mesh = get<json>(doc, "mesh", "model");
  m.mesh.elems_per_edge = get<int>(mesh, "elems_per_edge", "model.mesh");
  m.mesh.order = get<int>(mesh, "order", "model.mesh");
  if (doc.contains("training")) training_config_from_json(doc.at("training"), m.config, m.sobolev);
  return m;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epoch,L1,L2,L3,theta1,theta2,theta3,G1,G2,G3\n";
  for (const auto& e : history) {
    out << e.epoch;
    for (const Eigen::Vector3d* v : {&e.losses, &e.theta, &e.weighted_norms})
      for (int i = 0; i < 3; ++i) out << ',' << (*v)(i);
    out << '\n';
  }
  return out.str();
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::vector<DatasetRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw SchemaError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  std::string text;
  for (const auto& r : records) text += record_to_json(r).dump() + "\n";
  write_text(path, text);
}

}  // namespace beamvem::io
