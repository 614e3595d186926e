#include <doctest.h>

#include <cmath>

#include "beamvem/dataset.hpp"

using namespace beamvem;

TEST_CASE("portico dataset layout") {
  PorticoConfig c;
  c.mesh = {24, 4};
  const auto split = generate_dataset(c, 2, 1, 3);
  CHECK(split.train.size() == 2 * 73);
  CHECK(split.test.size() == 73);
  CHECK(split.rejected == 0);
  for (const auto& r : split.train) CHECK(r.sample_id < 2);
  for (const auto& r : split.test) CHECK(r.sample_id == 2);
  // corner nodes see two members, interior nodes one
  std::size_t corners = 0;
  for (const auto& r : split.test) {
    CHECK((r.derivatives.size() == 1 || r.derivatives.size() == 2));
    corners += r.derivatives.size() == 2;
  }
  CHECK(corners == 2);
}

TEST_CASE("sampled materials stay in range") {
  SamplingRanges ranges;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto m = draw_material(ranges, rng);
    CHECK(m.elastic_modulus >= 5e10);
    CHECK(m.elastic_modulus <= 2.5e11);
    CHECK(m.inertia_moment >= 1e-6);
    CHECK(m.inertia_moment <= 1e-4);
    CHECK(m.cross_section_area >= 1e-3);
    CHECK(m.cross_section_area <= 1e-2);
  }
  ranges.inertia_moment = {0.0, 1.0};
  CHECK_THROWS_AS(draw_material(ranges, rng), std::invalid_argument);
}

TEST_CASE("records reproduce a fresh solve") {
  PorticoConfig c;
  c.mesh = {6, 5};
  const auto split = generate_dataset(c, 3, 0, 9);
  for (const auto& [id, recs] : group_by_sample(split.train)) {
    const auto sol = assemble_and_solve(portico_model(c, recs.front().material));
    for (const auto& r : recs) {
      const Eigen::Vector3d u = sol.node_displacement(static_cast<std::size_t>(r.node_id));
      CHECK((u - r.displacement).norm() <= 1e-12 * u.norm());
      CHECK(r.x == sol.mesh.nodes[static_cast<std::size_t>(r.node_id)].x());
      CHECK(r.y == sol.mesh.nodes[static_cast<std::size_t>(r.node_id)].y());
    }
  }
}

TEST_CASE("derivative along a member matches the nodal rotation") {
  // for rigid joints the transverse slope of each incident member is theta
  PorticoConfig c;
  c.mesh = {4, 4};
  const auto records = generate_dataset(c, 2, 0, 4).train;
  for (const auto& [id, recs] : group_by_sample(records)) {
    double largest = 0;
    for (const auto& r : recs) largest = std::max(largest, std::abs(r.displacement(2)));
    for (const auto& r : recs) {
      for (const auto& d : r.derivatives) {
        const Eigen::Vector2d n(-d.tangent.y(), d.tangent.x());
        CHECK(std::abs(n.dot(d.d_ds.head<2>()) - r.displacement(2)) <= 1e-9 * largest);
        CHECK(std::abs(d.tangent.norm() - 1.0) <= 1e-14);
      }
    }
  }
}

TEST_CASE("derivatives match finite differences of the field") {
  PorticoConfig c;
  c.mesh = {48, 5};
  const auto recs = generate_dataset(c, 1, 0, 21).train;
  const auto sol = assemble_and_solve(portico_model(c, recs.front().material));
  // interior beam node: fourth-order stencil over neighbours at +-h and +-2h,
  // exact for the quartic deflection of a uniformly loaded member
  const double h = c.length / 48;
  auto at = [&](double x) -> const Eigen::Vector3d* {
    for (const auto& o : recs)
      if (o.y == c.length && std::abs(o.x - x) < 1e-12) return &o.displacement;
    return nullptr;
  };
  int checked = 0;
  for (const auto& r : recs) {
    if (r.y != c.length || r.x <= 0.2 || r.x >= 1.8) continue;
    const auto* m2 = at(r.x - 2 * h);
    const auto* m1 = at(r.x - h);
    const auto* p1 = at(r.x + h);
    const auto* p2 = at(r.x + 2 * h);
    REQUIRE((m2 && m1 && p1 && p2));
    const Eigen::Vector3d fd = (8 * (*p1 - *m1) - (*p2 - *m2)) / (12 * h);
    const auto& d = r.derivatives.front().d_ds;
    CHECK((fd - d).norm() <= 1e-7 * d.norm());
    ++checked;
  }
  CHECK(checked > 30);
}

TEST_CASE("generation is deterministic and thread independent") {
  PorticoConfig c;
  c.mesh = {3, 4};
  const auto a = generate_dataset(c, 4, 2, 77);
  const auto b = generate_dataset(c, 4, 2, 77, 3);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  const auto other = generate_dataset(c, 4, 2, 78);
  CHECK(!(other.train == a.train));
  CHECK(sample_seed(1, 2) == sample_seed(1, 2));
  CHECK(sample_seed(1, 2) != sample_seed(1, 3));
  CHECK(sample_seed(1, 2) != sample_seed(2, 2));
}
