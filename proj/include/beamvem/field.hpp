// Displacement fields over a frame mesh and their H1 distance.
#pragma once

#include <cstddef>
#include <functional>
#include <optional>

#include "beamvem/frame.hpp"

namespace beamvem {

// Member-local displacement at a point: axial u, transverse w and their
// derivatives with respect to the element coordinate x.
struct LocalDisplacement {
  double axial{0};
  double transverse{0};
  double axial_slope{0};
  double transverse_slope{0};
};

class DisplacementField {
 public:
  virtual ~DisplacementField() = default;
  virtual std::size_t element_count() const = 0;
  virtual LocalDisplacement evaluate(std::size_t element, double x) const = 0;
};

// Field reconstructed from the projected polynomials of a VEM solve.
class VemField final : public DisplacementField {
 public:
  explicit VemField(const GlobalSolution& solution) : solution_(&solution) {}
  std::size_t element_count() const override { return solution_->elements.size(); }
  LocalDisplacement evaluate(std::size_t element, double x) const override;

 private:
  const GlobalSolution* solution_;
};

// Wraps a callable (element, x) -> LocalDisplacement, e.g. an analytic solution.
class FunctionField final : public DisplacementField {
 public:
  using Fn = std::function<LocalDisplacement(std::size_t, double)>;
  FunctionField(std::size_t elements, Fn fn) : elements_(elements), fn_(std::move(fn)) {}
  std::size_t element_count() const override { return elements_; }
  LocalDisplacement evaluate(std::size_t element, double x) const override { return fn_(element, x); }

 private:
  std::size_t elements_;
  Fn fn_;
};

struct ErrorReport {
  double h1_error{0};
  double l2_error{0};
  double gradient_l2_error{0};
  double relative_h1{0};  // h1_error / ||reference||_H1
};

// H1 distance between `reference` and `approximation`, summed over the axial
// and transverse components of every element. Uses ceil((2n+1)/2) Gauss
// points per element unless `points_per_element` is given.
ErrorReport h1_error(const DisplacementField& reference, const DisplacementField& approximation,
                     const FrameMesh& mesh, std::optional<int> points_per_element = std::nullopt);

}  // namespace beamvem
