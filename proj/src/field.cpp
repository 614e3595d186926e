#include "beamvem/field.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "beamvem/quadrature.hpp"

namespace beamvem {

LocalDisplacement VemField::evaluate(std::size_t element, double x) const {
  const auto& es = solution_->elements.at(element);
  const auto& geom = solution_->mesh.elements.at(element);
  const Eigen::Vector3d w = evaluate_polynomial<double>(es.coefficients, x);
  LocalDisplacement out;
  const double slope = (es.axial(1) - es.axial(0)) / geom.length;
  out.axial = es.axial(0) + slope * x;
  out.axial_slope = slope;
  out.transverse = w(0);
  out.transverse_slope = w(1);
  return out;
}

ErrorReport h1_error(const DisplacementField& reference, const DisplacementField& approximation,
                     const FrameMesh& mesh, std::optional<int> points_per_element) {
  if (reference.element_count() != mesh.elements.size() || approximation.element_count() != mesh.elements.size()) {
    throw std::invalid_argument("h1_error: fields and mesh disagree on the element count");
  }
  std::map<int, QuadratureRule<double>> rules;
  double l2 = 0, grad = 0, ref_l2 = 0, ref_grad = 0;
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    const auto& el = mesh.elements[e];
    const int count = points_per_element.value_or((2 * el.order + 2) / 2);
    auto it = rules.find(count);
    if (it == rules.end()) it = rules.emplace(count, gauss_legendre<double>(count)).first;
    const auto& rule = it->second;
    for (Eigen::Index q = 0; q < rule.points.size(); ++q) {
      const double x = rule.points(q) * el.length;
      const double wt = rule.weights(q) * el.length;
      const auto a = reference.evaluate(e, x);
      const auto b = approximation.evaluate(e, x);
      const double du = a.axial - b.axial;
      const double dw = a.transverse - b.transverse;
      const double dus = a.axial_slope - b.axial_slope;
      const double dws = a.transverse_slope - b.transverse_slope;
      l2 += wt * (du * du + dw * dw);
      grad += wt * (dus * dus + dws * dws);
      ref_l2 += wt * (a.axial * a.axial + a.transverse * a.transverse);
      ref_grad += wt * (a.axial_slope * a.axial_slope + a.transverse_slope * a.transverse_slope);
    }
  }
  ErrorReport r;
  r.l2_error = std::sqrt(l2);
  r.gradient_l2_error = std::sqrt(grad);
  r.h1_error = std::sqrt(l2 + grad);
  const double ref = std::sqrt(ref_l2 + ref_grad);
  if (ref > 0) {
    r.relative_h1 = r.h1_error / ref;
  } else {
    r.relative_h1 = r.h1_error > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return r;
}

}  // namespace beamvem
