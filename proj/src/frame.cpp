#include "beamvem/frame.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace beamvem {

std::size_t FrameModel::node_index(int id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  throw std::invalid_argument("unknown node id " + std::to_string(id));
}

void FrameModel::validate() const {
  if (nodes.empty() || members.empty()) throw std::invalid_argument("frame needs nodes and members");
  std::unordered_set<int> ids;
  for (const auto& n : nodes) {
    if (!ids.insert(n.id).second) throw std::invalid_argument("duplicate node id " + std::to_string(n.id));
  }
  for (std::size_t m = 0; m < members.size(); ++m) {
    const auto& mem = members[m];
    const auto& a = nodes[node_index(mem.start)];
    const auto& b = nodes[node_index(mem.end)];
    if (!(std::hypot(b.x - a.x, b.y - a.y) > 0)) {
      throw std::invalid_argument("member " + std::to_string(m) + " has zero length");
    }
    if (mem.elements < 1) throw std::invalid_argument("member " + std::to_string(m) + " needs >= 1 element");
    if (mem.order < 3) throw std::invalid_argument("member " + std::to_string(m) + " order must be >= 3");
    mem.material.validate();
  }
  for (const auto& s : supports) node_index(s.node);
  for (const auto& l : nodal_loads) node_index(l.node);
}

Eigen::Vector2d MeshElement::tangent() const { return {std::cos(angle), std::sin(angle)}; }
Eigen::Vector2d MeshElement::normal() const { return {-std::sin(angle), std::cos(angle)}; }

std::vector<double> shift_polynomial(const std::vector<double>& coeffs, double offset) {
  // c(s0 + x) = sum_j c_j sum_i C(j,i) s0^{j-i} x^i
  std::vector<double> out(coeffs.size(), 0.0);
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    double binom = 1.0;
    for (std::size_t i = 0; i <= j; ++i) {
      out[i] += coeffs[j] * binom * std::pow(offset, static_cast<double>(j - i));
      binom = binom * static_cast<double>(j - i) / static_cast<double>(i + 1);
    }
  }
  return out;
}

FrameMesh build_mesh(const FrameModel& model) {
  model.validate();
  FrameMesh mesh;
  for (const auto& n : model.nodes) {
    mesh.nodes.emplace_back(n.x, n.y);
    mesh.node_ids.push_back(n.id);
  }
  for (std::size_t m = 0; m < model.members.size(); ++m) {
    const auto& mem = model.members[m];
    const std::size_t a = model.node_index(mem.start);
    const std::size_t b = model.node_index(mem.end);
    const Eigen::Vector2d pa = mesh.nodes[a];
    const Eigen::Vector2d pb = mesh.nodes[b];
    const double member_length = (pb - pa).norm();
    const double angle = std::atan2(pb.y() - pa.y(), pb.x() - pa.x());
    const double h = member_length / mem.elements;

    std::size_t prev = a;
    for (int e = 0; e < mem.elements; ++e) {
      std::size_t next = b;
      if (e + 1 < mem.elements) {
        const double t = static_cast<double>(e + 1) / mem.elements;
        mesh.nodes.push_back(pa + t * (pb - pa));
        mesh.node_ids.push_back(-1);
        next = mesh.nodes.size() - 1;
      }
      MeshElement el;
      el.member = m;
      el.index_in_member = static_cast<std::size_t>(e);
      el.start_node = prev;
      el.end_node = next;
      el.offset = e * h;
      el.length = h;
      el.angle = angle;
      el.order = mem.order;
      el.material = mem.material;
      el.distributed_load = shift_polynomial(mem.distributed_load, el.offset);
      mesh.elements.push_back(std::move(el));
      prev = next;
    }
  }
  return mesh;
}

DofMap DofMap::build(const FrameMesh& mesh) {
  DofMap map;
  std::size_t next = 0;
  map.node_dofs.resize(mesh.nodes.size());
  for (auto& d : map.node_dofs) {
    d = {next, next + 1, next + 2};
    next += 3;
  }
  map.moment_dofs.resize(mesh.elements.size());
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    for (int k = 0; k < mesh.elements[e].order - 3; ++k) map.moment_dofs[e].push_back(next++);
  }
  map.total = next;
  return map;
}

std::vector<std::size_t> DofMap::element_dofs(const FrameMesh& mesh, std::size_t element) const {
  const auto& el = mesh.elements[element];
  const auto& a = node_dofs[el.start_node];
  const auto& b = node_dofs[el.end_node];
  std::vector<std::size_t> out{a[0], a[1], a[2], b[0], b[1], b[2]};
  out.insert(out.end(), moment_dofs[element].begin(), moment_dofs[element].end());
  return out;
}

std::string to_string(DofComponent c) {
  switch (c) {
    case DofComponent::Ux: return "ux";
    case DofComponent::Uy: return "uy";
    case DofComponent::Theta: return "theta";
    case DofComponent::Moment: return "moment";
  }
  return "?";
}

Eigen::Vector3d GlobalSolution::node_displacement(std::size_t mesh_node) const {
  const auto& d = dofs.node_dofs.at(mesh_node);
  return {values(d[0]), values(d[1]), values(d[2])};
}

FrameModel build_portico(double beam_length, int elems_per_edge, int order, const Material& material,
                         const LoadSpec<double>& beam_load) {
  if (elems_per_edge < 1) throw std::invalid_argument("build_portico: elems_per_edge must be >= 1");
  if (order < 3) throw std::invalid_argument("build_portico: order must be >= 3");
  const double L = beam_length;
  FrameModel model;
  model.nodes = {{0, 0.0, 0.0}, {1, 0.0, L}, {2, L, L}, {3, L, 0.0}};
  std::vector<double> q(beam_load.distributed.data(), beam_load.distributed.data() + beam_load.distributed.size());
  model.members = {
      {0, 1, material, elems_per_edge, order, {}},
      {1, 2, material, elems_per_edge, order, q},
      {2, 3, material, elems_per_edge, order, {}},
  };
  model.supports = {{0, true, true, false}, {3, true, true, false}};
  return model;
}

ElementSystem local_element_system(const MeshElement& element) {
  ElementSpec<double> spec{element.order, element.length, element.material};
  const int n = element.order;
  const Eigen::MatrixXd Kb = element_stiffness(spec);
  LoadSpec<double> load;
  load.distributed = Eigen::Map<const Eigen::VectorXd>(element.distributed_load.data(),
                                                       static_cast<Eigen::Index>(element.distributed_load.size()));
  // Trailing zero coefficients are allowed beyond what the element order carries.
  Eigen::Index used = load.distributed.size();
  while (used > 0 && load.distributed(used - 1) == 0.0) --used;
  load.distributed.conservativeResize(used);
  const Eigen::VectorXd fb = element_load(spec, load);
  const Eigen::Matrix2d Ka = axial_stiffness(spec);

  const int size = 6 + (n - 3);
  // local slot of each bending DOF [w1 t1 w2 t2 m...]
  std::vector<int> bend(n + 1);
  bend[0] = 1;
  bend[1] = 2;
  bend[2] = 4;
  bend[3] = 5;
  for (int k = 4; k <= n; ++k) bend[k] = 6 + (k - 4);

  ElementSystem sys;
  sys.stiffness = Eigen::MatrixXd::Zero(size, size);
  sys.load = Eigen::VectorXd::Zero(size);
  for (int i = 0; i <= n; ++i) {
    sys.load(bend[i]) += fb(i);
    for (int j = 0; j <= n; ++j) sys.stiffness(bend[i], bend[j]) += Kb(i, j);
  }
  const int ax[2] = {0, 3};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) sys.stiffness(ax[i], ax[j]) += Ka(i, j);
  }
  return sys;
}

ElementSystem transform_element(const ElementSystem& local, double angle) {
  const Eigen::Index size = local.stiffness.rows();
  if (size < 6 || local.stiffness.cols() != size || local.load.size() != size) {
    throw std::invalid_argument("transform_element: expected square system with >= 6 DOFs");
  }
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix3d R;
  R << c, s, 0, -s, c, 0, 0, 0, 1;
  Eigen::MatrixXd T = Eigen::MatrixXd::Identity(size, size);
  T.block<3, 3>(0, 0) = R;
  T.block<3, 3>(3, 3) = R;
  ElementSystem out;
  out.stiffness = T.transpose() * local.stiffness * T;
  out.stiffness = 0.5 * (out.stiffness + out.stiffness.transpose()).eval();
  out.load = T.transpose() * local.load;
  return out;
}

namespace {

SingularSystemError describe_mechanism(const DofMap& map, std::size_t dof) {
  for (std::size_t n = 0; n < map.node_dofs.size(); ++n) {
    for (int c = 0; c < 3; ++c) {
      if (map.node_dofs[n][c] == dof) {
        const auto comp = static_cast<DofComponent>(c);
        return SingularSystemError(dof, comp, n,
                                   "singular reduced stiffness: unconstrained mechanism at mesh node " +
                                       std::to_string(n) + " component " + to_string(comp));
      }
    }
  }
  for (std::size_t e = 0; e < map.moment_dofs.size(); ++e) {
    for (auto d : map.moment_dofs[e]) {
      if (d == dof) {
        return SingularSystemError(dof, DofComponent::Moment, e,
                                   "singular reduced stiffness: unconstrained internal moment of element " +
                                       std::to_string(e));
      }
    }
  }
  return SingularSystemError(dof, DofComponent::Moment, 0, "singular reduced stiffness");
}

}  // namespace

// Smallest admissible LDL^T pivot of the equilibrated system (unit diagonal).
constexpr double pivot_tolerance = 1e-13;

GlobalSolution assemble_and_solve(const FrameModel& model) {
  GlobalSolution sol;
  sol.mesh = build_mesh(model);
  sol.dofs = DofMap::build(sol.mesh);
  const auto& mesh = sol.mesh;
  const auto& map = sol.dofs;
  const std::size_t ndof = map.total;

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    const auto global = transform_element(local_element_system(mesh.elements[e]), mesh.elements[e].angle);
    const auto idx = map.element_dofs(mesh, e);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      f(idx[i]) += global.load(i);
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const double v = global.stiffness(i, j);
        if (v != 0.0) triplets.emplace_back(idx[i], idx[j], v);
      }
    }
  }
  for (const auto& load : model.nodal_loads) {
    const auto& d = map.node_dofs[model.node_index(load.node)];
    f(d[0]) += load.fx;
    f(d[1]) += load.fy;
    f(d[2]) += load.moment;
  }

  std::vector<bool> fixed(ndof, false);
  for (const auto& s : model.supports) {
    const auto& d = map.node_dofs[model.node_index(s.node)];
    if (s.ux) fixed[d[0]] = true;
    if (s.uy) fixed[d[1]] = true;
    if (s.theta) fixed[d[2]] = true;
  }
  std::vector<std::ptrdiff_t> reduced(ndof, -1);
  std::vector<std::size_t> free_dofs;
  for (std::size_t i = 0; i < ndof; ++i) {
    if (!fixed[i]) {
      reduced[i] = static_cast<std::ptrdiff_t>(free_dofs.size());
      free_dofs.push_back(i);
    }
  }
  const auto nfree = static_cast<Eigen::Index>(free_dofs.size());

  std::vector<Eigen::Triplet<double>> reduced_triplets;
  reduced_triplets.reserve(triplets.size());
  for (const auto& t : triplets) {
    const auto r = reduced[t.row()];
    const auto c = reduced[t.col()];
    if (r >= 0 && c >= 0) reduced_triplets.emplace_back(r, c, t.value());
  }
  Eigen::SparseMatrix<double> K(nfree, nfree);
  K.setFromTriplets(reduced_triplets.begin(), reduced_triplets.end());
  Eigen::VectorXd rhs(nfree);
  for (Eigen::Index i = 0; i < nfree; ++i) rhs(i) = f(free_dofs[i]);

  sol.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ndof));
  if (nfree > 0) {
    // Symmetric diagonal equilibration: axial, bending and moment DOFs differ
    // by many orders of magnitude on fine meshes.
    const Eigen::VectorXd diag = K.diagonal();
    for (Eigen::Index i = 0; i < nfree; ++i) {
      if (!(diag(i) > 0)) throw describe_mechanism(map, free_dofs[static_cast<std::size_t>(i)]);
    }
    const Eigen::VectorXd scale = diag.cwiseSqrt().cwiseInverse();
    const Eigen::SparseMatrix<double> Ks = scale.asDiagonal() * K * scale.asDiagonal();
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(Ks);
    const Eigen::VectorXd& D = ldlt.vectorD();
    Eigen::Index worst = -1;
    if (ldlt.info() != Eigen::Success) {
      worst = 0;
    } else {
      for (Eigen::Index i = 0; i < D.size(); ++i) {
        if (!(D(i) > pivot_tolerance)) {
          worst = i;
          break;
        }
      }
    }
    if (worst >= 0) {
      // vectorD is in the fill-reducing order: map the pivot back to a global DOF.
      const Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> Pinv = ldlt.permutationPinv();
      const auto original = static_cast<Eigen::Index>(Pinv.indices()(worst));
      throw describe_mechanism(map, free_dofs[static_cast<std::size_t>(original)]);
    }
    auto residual = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(rhs - K * x); };
    Eigen::VectorXd u = scale.cwiseProduct(ldlt.solve(scale.cwiseProduct(rhs)));
    Eigen::VectorXd r = residual(u);
    // Iterative refinement until the residual stops shrinking.
    for (int it = 0; it < 10; ++it) {
      const Eigen::VectorXd next = u + scale.cwiseProduct(ldlt.solve(scale.cwiseProduct(r)));
      const Eigen::VectorXd rn = residual(next);
      if (!(rn.norm() < r.norm())) break;
      u = next;
      r = rn;
    }
    const double fnorm = rhs.norm();
    const double rnorm = r.norm();
    sol.residual_norm = fnorm > 0 ? rnorm / fnorm : rnorm;
    // normwise backward error in the infinity norm
    double knorm = 0;
    {
      Eigen::VectorXd rowsum = Eigen::VectorXd::Zero(nfree);
      for (Eigen::Index k = 0; k < K.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(K, k); it; ++it) rowsum(it.row()) += std::abs(it.value());
      knorm = rowsum.maxCoeff();
    }
    const double denom = knorm * u.cwiseAbs().maxCoeff() + rhs.cwiseAbs().maxCoeff();
    sol.backward_error = denom > 0 ? r.cwiseAbs().maxCoeff() / denom : 0.0;
    for (Eigen::Index i = 0; i < nfree; ++i) sol.values(free_dofs[i]) = u(i);
  }

  sol.elements.reserve(mesh.elements.size());
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    const auto& el = mesh.elements[e];
    const auto idx = map.element_dofs(mesh, e);
    const double c = std::cos(el.angle);
    const double s = std::sin(el.angle);
    Eigen::VectorXd local(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) local(i) = sol.values(idx[i]);
    ElementSolution es;
    es.member = el.member;
    es.index_in_member = el.index_in_member;
    es.axial = {c * local(0) + s * local(1), c * local(3) + s * local(4)};
    es.bending_dofs.resize(el.order + 1);
    es.bending_dofs(0) = -s * local(0) + c * local(1);
    es.bending_dofs(1) = local(2);
    es.bending_dofs(2) = -s * local(3) + c * local(4);
    es.bending_dofs(3) = local(5);
    for (int k = 0; k < el.order - 3; ++k) es.bending_dofs(4 + k) = local(6 + k);
    const auto proj = build_projection(ElementSpec<double>{el.order, el.length, el.material});
    es.coefficients = projected_coefficients(proj, es.bending_dofs);
    sol.elements.push_back(std::move(es));
  }
  return sol;
}

}  // namespace beamvem
