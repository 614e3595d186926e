// Planar frames built from general-order VEM beam elements with axial extension.
#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "beamvem/vem_element.hpp"

namespace beamvem {

using Material = MaterialParams<double>;

struct Node {
  int id{0};
  double x{0};
  double y{0};
};

// A straight member between two nodes, subdivided into `elements` equal
// elements of polynomial order `order`. `distributed_load` holds the
// coefficients of the transverse load q(s) = sum_j c_j s^j in the member
// coordinate s measured from the start node; positive q acts along the
// member's local y axis (start->end rotated by +90 degrees).
struct Member {
  int start{0};
  int end{0};
  Material material{};
  int elements{1};
  int order{3};
  std::vector<double> distributed_load{};
};

struct Support {
  int node{0};
  bool ux{false};
  bool uy{false};
  bool theta{false};
};

struct NodalLoad {
  int node{0};
  double fx{0};
  double fy{0};
  double moment{0};
};

struct FrameModel {
  std::vector<Node> nodes;
  std::vector<Member> members;
  std::vector<Support> supports;
  std::vector<NodalLoad> nodal_loads;

  std::size_t node_index(int id) const;
  void validate() const;
};

// Geometry of one element after member subdivision.
struct MeshElement {
  std::size_t member{0};
  std::size_t index_in_member{0};
  std::size_t start_node{0};  // mesh node indices
  std::size_t end_node{0};
  double offset{0};  // member coordinate of the start node
  double length{0};
  double angle{0};
  int order{3};
  Material material{};
  std::vector<double> distributed_load{};  // in element-local x

  Eigen::Vector2d tangent() const;
  Eigen::Vector2d normal() const;
};

struct FrameMesh {
  std::vector<Eigen::Vector2d> nodes;  // original nodes first, then member interiors
  std::vector<int> node_ids;           // model id for original nodes, -1 for interior nodes
  std::vector<MeshElement> elements;
};

FrameMesh build_mesh(const FrameModel& model);

// Global DOF numbering: (ux, uy, theta) for every mesh node, then the
// internal moments of each element in element order.
struct DofMap {
  std::vector<std::array<std::size_t, 3>> node_dofs;
  std::vector<std::vector<std::size_t>> moment_dofs;
  std::size_t total{0};

  static DofMap build(const FrameMesh& mesh);
  // Global indices in element-local order [u1 w1 t1 u2 w2 t2 m0 ...].
  std::vector<std::size_t> element_dofs(const FrameMesh& mesh, std::size_t element) const;
};

enum class DofComponent { Ux, Uy, Theta, Moment };

std::string to_string(DofComponent c);

class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(std::size_t dof, DofComponent component, std::size_t owner, const std::string& what)
      : std::runtime_error(what), dof_(dof), component_(component), owner_(owner) {}

  std::size_t dof() const { return dof_; }
  DofComponent component() const { return component_; }
  // Mesh node index for nodal components, element index for moments.
  std::size_t owner() const { return owner_; }

 private:
  std::size_t dof_;
  DofComponent component_;
  std::size_t owner_;
};

struct ElementSolution {
  std::size_t member{0};
  std::size_t index_in_member{0};
  Eigen::Vector2d axial;          // local (u1, u2)
  Eigen::VectorXd bending_dofs;   // [w1 t1 w2 t2 m0 ...]
  Eigen::VectorXd coefficients;   // projected deflection a_1 ... a_{n+1}
};

struct GlobalSolution {
  FrameMesh mesh;
  DofMap dofs;
  Eigen::VectorXd values;
  std::vector<ElementSolution> elements;
  double residual_norm{0};   // ||K u - f|| / ||f|| on free DOFs
  double backward_error{0};  // ||K u - f|| / (||K|| ||u|| + ||f||), infinity norms

  Eigen::Vector3d node_displacement(std::size_t mesh_node) const;
};

FrameModel build_portico(double beam_length, int elems_per_edge, int order, const Material& material,
                         const LoadSpec<double>& beam_load);

// Local element stiffness/load in the layout [u1 w1 t1 u2 w2 t2 m0 ...].
struct ElementSystem {
  Eigen::MatrixXd stiffness;
  Eigen::VectorXd load;
};

ElementSystem local_element_system(const MeshElement& element);

// Rotates the nodal blocks (u, w, theta) by `angle`; moments are untouched.
ElementSystem transform_element(const ElementSystem& local, double angle);

GlobalSolution assemble_and_solve(const FrameModel& model);

// Re-expresses q(s) = sum c_j s^j about s = offset.
std::vector<double> shift_polynomial(const std::vector<double>& coeffs, double offset);

}  // namespace beamvem
