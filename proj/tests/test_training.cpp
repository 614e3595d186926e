#include <doctest.h>

#include <cmath>
#include <random>

#include "beamvem/training.hpp"
#include "training_fixture.hpp"

using namespace beamvem;
using Matrix = Eigen::MatrixXd;
using Matrix32 = Eigen::Matrix<double, 3, 2>;

namespace {

const std::vector<DatasetRecord>& small_records() {
  static const auto records = generate_dataset(testing::small_portico(), 3, 0, 5).train;
  return records;
}

double total_loss(const nn::NetworkParameters<double>& p, const TrainingBatch& b, const Normalization& n,
                  const StepDraws& d, const TrainingConfig& c, const Eigen::Vector3d& theta) {
  return theta.dot(evaluate_tasks(p, b, n, d, c, theta).losses);
}

}  // namespace

TEST_CASE("displacement loss") {
  const Matrix t = Matrix::Random(3, 6);
  CHECK(displacement_loss(t, t) == 0.0);
  Matrix one = Matrix::Zero(1, 1), pred = Matrix::Ones(1, 1);
  CHECK(displacement_loss(pred, one) == 1.0);
  const Matrix p = Matrix::Random(3, 6);
  Matrix pp = p, tp = t;
  pp.col(0).swap(pp.col(4));
  tp.col(0).swap(tp.col(4));
  CHECK(displacement_loss(pp, tp) == doctest::Approx(displacement_loss(p, t)).epsilon(1e-15));
  CHECK_THROWS_AS(displacement_loss(Matrix(3, 0), Matrix(3, 0)), std::invalid_argument);

  Matrix adj;
  displacement_loss(p, t, &adj);
  const double h = 1e-6;
  Matrix up = p, dn = p;
  up(1, 2) += h;
  dn(1, 2) -= h;
  CHECK(adj(1, 2) == doctest::Approx((displacement_loss(up, t) - displacement_loss(dn, t)) / (2 * h)).epsilon(1e-8));
}

TEST_CASE("unit sphere draws") {
  std::mt19937_64 rng(42);
  for (int d : {1, 2, 5}) CHECK(std::abs(sample_unit_sphere(d, rng).norm() - 1.0) <= 1e-12);
  CHECK_THROWS_AS(sample_unit_sphere(0, rng), std::invalid_argument);

  const int N = 100000;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int i = 0; i < N; ++i) {
    const Eigen::Vector2d v = sample_unit_sphere(2, rng);
    mean += v;
    cov += v * v.transpose();
  }
  mean /= N;
  cov /= N;
  CHECK(mean.cwiseAbs().maxCoeff() <= 1e-2);
  CHECK(std::abs(cov(0, 0) - 0.5) <= 0.01);
  CHECK(std::abs(cov(1, 1) - 0.5) <= 0.01);
  CHECK(std::abs(cov(0, 1)) <= 0.01);
}

TEST_CASE("sobolev loss projections") {
  std::mt19937_64 rng(3);
  const int B = 4;
  std::vector<Matrix> model(2, Matrix::Random(3, B));
  model[1] = Matrix::Random(3, B);
  std::vector<Matrix32> ref(B);
  for (auto& r : ref) r = Matrix32::Random();
  const std::vector<Eigen::Matrix2d> full(B, Eigen::Matrix2d::Identity());

  SUBCASE("matching gradients give zero for any draws") {
    std::vector<Matrix32> same(B);
    for (int j = 0; j < B; ++j) {
      same[j].col(0) = model[0].col(j);
      same[j].col(1) = model[1].col(j);
    }
    CHECK(sobolev_loss(model, same, full, draw_projection_moments(B, 8, rng)) == 0.0);
  }

  SUBCASE("fixed e1 reduces to the first gradient component") {
    Eigen::Matrix2d e1 = Eigen::Matrix2d::Zero();
    e1(0, 0) = 1.0;
    double expected = 0;
    for (int j = 0; j < B; ++j) expected += (model[0].col(j) - ref[j].col(0)).squaredNorm();
    expected /= B;
    CHECK(sobolev_loss(model, ref, full, std::vector<Eigen::Matrix2d>(B, e1)) ==
          doctest::Approx(expected).epsilon(1e-14));
  }

  SUBCASE("expectation over draws is the squared gradient error over d") {
    double exact = 0;
    for (int j = 0; j < B; ++j) {
      Matrix32 J;
      J << model[0].col(j), model[1].col(j);
      exact += (J - ref[j]).squaredNorm();
    }
    exact /= B * 2.0;
    const double estimate = sobolev_loss(model, ref, full, draw_projection_moments(B, 100000, rng));
    CHECK(std::abs(estimate - exact) <= 0.02 * exact);
  }

  SUBCASE("adjoint matches finite differences") {
    const auto S = draw_projection_moments(B, 8, rng);
    std::vector<Eigen::Matrix2d> P(B);
    for (auto& p : P) {
      const Eigen::Vector2d t = Eigen::Vector2d::Random().normalized();
      p = t * t.transpose();
    }
    std::vector<Matrix> adj;
    sobolev_loss(model, ref, P, S, &adj);
    const double h = 1e-6;
    for (int k = 0; k < 2; ++k) {
      for (int c = 0; c < 3; ++c) {
        auto up = model, dn = model;
        up[k](c, 1) += h;
        dn[k](c, 1) -= h;
        const double fd = (sobolev_loss(up, ref, P, S) - sobolev_loss(dn, ref, P, S)) / (2 * h);
        CHECK(adj[k](c, 1) == doctest::Approx(fd).epsilon(1e-7));
      }
    }
  }

  SUBCASE("missing targets are rejected") {
    CHECK_THROWS_AS(sobolev_loss(model, {}, full, full), std::invalid_argument);
    auto records = small_records();
    records[2].derivatives.clear();
    const auto norm = Normalization::fit(records, OutputScaling::Flexural);
    CHECK_THROWS_AS(prepare_batch(records, norm), std::invalid_argument);
  }
}

TEST_CASE("prepared Sobolev references reproduce the directional derivatives") {
  const auto& records = small_records();
  for (auto scaling : {OutputScaling::Flexural, OutputScaling::None}) {
    const auto norm = Normalization::fit(records, scaling);
    const auto batch = prepare_batch(records, norm);
    for (std::size_t j = 0; j < records.size(); ++j) {
      const auto& r = records[j];
      const double s = norm.scale_factor(r.material);
      for (const auto& d : r.derivatives) {
        // back to physical units along the physical tangent
        const Eigen::Vector2d t_hat = d.tangent.cwiseQuotient(norm.node.scale);
        const Eigen::Vector3d phys = (batch.reference_gradient[j] * t_hat).cwiseProduct(norm.output.scale) / s;
        CHECK((phys - d.d_ds).norm() <= 1e-10 * std::max(1e-12, d.d_ds.norm()));
      }
    }
  }
}

TEST_CASE("homogeneity penalty") {
  const auto& records = small_records();
  const auto p = nn::initialize<double>(testing::small_architecture(), 2);
  for (auto scaling : {OutputScaling::Flexural, OutputScaling::None}) {
    const auto norm = Normalization::fit(records, scaling);
    const auto batch = prepare_batch(records, norm);
    const Eigen::Index B = batch.size();

    CHECK(material_penalty_loss(p, batch, norm, Eigen::VectorXd::Ones(B)) == 0.0);

    // brute force: c m(x; cE) - m(x; E) in physical units, rescaled by s(E)/sigma
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> U(0.5, 2.0);
    Eigen::VectorXd c(B);
    for (Eigen::Index j = 0; j < B; ++j) c(j) = U(rng);
    SurrogateModel model;
    model.params = p;
    model.normalization = norm;
    double brute = 0;
    for (Eigen::Index j = 0; j < B; ++j) {
      const auto& r = records[static_cast<std::size_t>(j)];
      Material scaled = r.material;
      scaled.elastic_modulus *= c(j);
      const Eigen::Vector2d x(r.x, r.y);
      const Eigen::Vector3d diff = c(j) * model.predict(x, scaled) - model.predict(x, r.material);
      brute += (norm.scale_factor(r.material) * diff.cwiseQuotient(norm.output.scale)).squaredNorm();
    }
    brute /= static_cast<double>(B);
    CHECK(material_penalty_loss(p, batch, norm, c) == doctest::Approx(brute).epsilon(1e-9));

    // adjoints
    const Matrix y = Matrix::Random(3, B), ys = Matrix::Random(3, B);
    Matrix a, as;
    homogeneity_loss(y, ys, c, norm, &a, &as);
    const double h = 1e-6;
    Matrix up = ys, dn = ys;
    up(2, 3) += h;
    dn(2, 3) -= h;
    CHECK(as(2, 3) ==
          doctest::Approx((homogeneity_loss(y, up, c, norm) - homogeneity_loss(y, dn, c, norm)) / (2 * h)).epsilon(1e-7));
    up = y;
    dn = y;
    up(0, 1) += h;
    dn(0, 1) -= h;
    CHECK(a(0, 1) ==
          doctest::Approx((homogeneity_loss(up, ys, c, norm) - homogeneity_loss(dn, ys, c, norm)) / (2 * h)).epsilon(1e-7));
  }
}

TEST_CASE("task weight renormalization") {
  TaskWeights w;
  w.theta << 1, 1, 2;
  w.renormalize();
  CHECK(w.theta(0) == doctest::Approx(0.75));
  CHECK(w.theta(1) == doctest::Approx(0.75));
  CHECK(w.theta(2) == doctest::Approx(1.5));
  CHECK(std::abs(w.theta.sum() - 3.0) <= 1e-12);

  w.theta << -0.2, 1.0, 1.0;
  w.renormalize(1e-3);
  CHECK(w.theta.minCoeff() > 0);
  CHECK(std::abs(w.theta.sum() - 3.0) <= 1e-12);
}

TEST_CASE("gradnorm step") {
  TaskWeights w;
  const Eigen::Vector3d losses(2.0, 0.5, 0.1), norms(1.0, 3.0, 0.2);

  SUBCASE("step zero") {
    const auto s = gradnorm_step(w, losses, norms, 1.5);
    CHECK(s.loss_ratios == Eigen::Vector3d::Ones());
    CHECK(s.inverse_rates == Eigen::Vector3d::Ones());
    CHECK((s.targets - Eigen::Vector3d::Constant(s.mean_norm)).norm() <= 1e-15);
    CHECK(s.mean_norm == doctest::Approx(norms.mean()));
  }

  SUBCASE("balanced fixed point") {
    w.initial_loss = losses;
    w.initial_recorded = true;
    const auto s = gradnorm_step(w, 0.5 * losses, Eigen::Vector3d::Constant(0.5), 1.5);
    CHECK(s.loss == 0.0);
    CHECK(s.gradient.isZero(0.0));
    TrainingConfig cfg;
    const Eigen::Vector3d before = w.theta;
    gradnorm_update(w, 0.5 * losses, Eigen::Vector3d::Constant(0.5), cfg);
    CHECK((w.theta - before).norm() <= 1e-15);
  }

  SUBCASE("zero initial loss pins the ratio") {
    w.initial_loss << 1.0, 0.0, 2.0;
    w.initial_recorded = true;
    const auto s = gradnorm_step(w, Eigen::Vector3d(0.5, 0.3, 1.0), norms, 1.5);
    CHECK(s.loss_ratios(1) == 1.0);
    CHECK(std::isfinite(s.loss));
  }

  SUBCASE("gradient matches finite differences with frozen targets") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> U(0.1, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
      TaskWeights tw;
      tw.theta << U(rng), U(rng), U(rng);
      tw.renormalize();
      tw.initial_loss << U(rng), U(rng), U(rng);
      tw.initial_recorded = true;
      const Eigen::Vector3d L(U(rng), U(rng), U(rng)), n(U(rng), U(rng), U(rng));
      const auto s = gradnorm_step(tw, L, n, 1.5);
      const double h = 1e-7;
      for (int i = 0; i < 3; ++i) {
        Eigen::Vector3d up = tw.theta, dn = tw.theta;
        up(i) += h;
        dn(i) -= h;
        const double fd = (gradnorm_loss(up, n, s.targets) - gradnorm_loss(dn, n, s.targets)) / (2 * h);
        CHECK(std::abs(fd - s.gradient(i)) <= 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }

  SUBCASE("update keeps the weight sum") {
    TrainingConfig cfg;
    for (int i = 0; i < 20; ++i) {
      gradnorm_update(w, losses / (i + 1.0), norms, cfg);
      CHECK(std::abs(w.theta.sum() - 3.0) <= 1e-12);
      CHECK(w.theta.minCoeff() > 0);
    }
  }
}

TEST_CASE("task gradients") {
  const auto& records = small_records();
  for (auto penalty : {MaterialPenalty::Homogeneity, MaterialPenalty::WeightDecay}) {
    auto cfg = testing::small_training_config();
    cfg.material_penalty = penalty;
    const auto norm = Normalization::fit(records, OutputScaling::Flexural);
    const auto batch = prepare_batch(records, norm);
    std::mt19937_64 rng(5);
    const auto draws = draw_step(batch.size(), SobolevConfig{}, cfg, rng);
    auto p = nn::initialize<double>(cfg.architecture, 4);
    const Eigen::Vector3d theta(0.4, 1.9, 0.7);
    const auto ev = evaluate_tasks(p, batch, norm, draws, cfg, theta, true);

    const Eigen::VectorXd combined =
        theta(0) * ev.task_gradients[0] + theta(1) * ev.task_gradients[1] + theta(2) * ev.task_gradients[2];
    CHECK((ev.total_gradient - combined).norm() <= 1e-12 * combined.norm());

    // total gradient against central differences of the weighted loss
    const Eigen::VectorXd flat = p.flatten();
    std::mt19937_64 pick(1);
    std::uniform_int_distribution<Eigen::Index> idx(0, flat.size() - 1);
    const double h = 1e-6;
    for (int k = 0; k < 25; ++k) {
      const Eigen::Index i = idx(pick);
      Eigen::VectorXd t = flat;
      t(i) += h;
      p.unflatten(t);
      const double up = total_loss(p, batch, norm, draws, cfg, theta);
      t(i) -= 2 * h;
      p.unflatten(t);
      const double dn = total_loss(p, batch, norm, draws, cfg, theta);
      p.unflatten(flat);
      const double fd = (up - dn) / (2 * h);
      CHECK(std::abs(fd - ev.total_gradient(i)) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }

    // shared-layer norms are the norms of the matching slices of the task gradients
    const std::size_t layer = gradnorm_layer(p);
    CHECK(layer == p.head.size() - 2);
    for (int task = 0; task < 3; ++task) {
      auto g = p.zeros_like();
      g.unflatten(ev.task_gradients[static_cast<std::size_t>(task)]);
      const double expected = penalty == MaterialPenalty::WeightDecay && task == 2 ? 0.0 : g.head[layer].weights.norm();
      CHECK(ev.gradient_norms(task) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("chunked evaluation matches a single pass") {
  // more columns than one chunk
  const auto records = generate_dataset(testing::small_portico(24, 4), 10, 0, 2).train;
  auto cfg = testing::small_training_config();
  const auto norm = Normalization::fit(records, OutputScaling::Flexural);
  const auto batch = prepare_batch(records, norm);
  REQUIRE(batch.size() > 512);
  std::mt19937_64 rng(5);
  const auto draws = draw_step(batch.size(), SobolevConfig{}, cfg, rng);
  const auto p = nn::initialize<double>(cfg.architecture, 4);
  const auto ev = evaluate_tasks(p, batch, norm, draws, cfg, Eigen::Vector3d::Ones());
  const auto pass = nn::forward_pass(p, batch.node, batch.material, 2);
  CHECK(ev.losses(0) == doctest::Approx(displacement_loss(pass.output, batch.target)).epsilon(1e-12));
  CHECK(ev.losses(1) == doctest::Approx(sobolev_loss(pass.output_tangents, batch.reference_gradient, batch.projector,
                                                     draws.moments))
                            .epsilon(1e-12));
  CHECK(ev.losses(2) == doctest::Approx(material_penalty_loss(p, batch, norm, draws.scale_factors)).epsilon(1e-12));
}

TEST_CASE("training with zero targets stays at zero") {
  auto records = std::vector<DatasetRecord>(small_records().begin(), small_records().begin() + 7);
  for (auto& r : records) {
    r.sample_id = 0;
    r.material = records.front().material;
    r.displacement.setZero();
    for (auto& d : r.derivatives) d.d_ds.setZero();
  }
  auto cfg = testing::small_training_config(10);
  auto init = nn::initialize<double>(cfg.architecture, 3);
  init.head.back().weights.setZero();
  init.head.back().bias.setZero();
  const auto result = train(records, cfg, SobolevConfig{}, init);
  REQUIRE(result.state.history.size() == 10);
  for (const auto& e : result.state.history) CHECK(e.losses.isZero(0.0));
  CHECK((result.model.params.flatten() - init.flatten()).isZero(0.0));
}

TEST_CASE("training invariants and determinism") {
  const auto& records = small_records();
  const auto cfg = testing::small_training_config(30);
  const auto a = train(records, cfg, SobolevConfig{});
  const auto b = train(records, cfg, SobolevConfig{});
  REQUIRE(a.status == TrainingStatus::Completed);
  REQUIRE(a.state.history.size() == 30);
  for (std::size_t i = 0; i < a.state.history.size(); ++i) {
    const auto& x = a.state.history[i];
    const auto& y = b.state.history[i];
    CHECK(x.epoch == static_cast<int>(i) + 1);
    CHECK(std::abs(x.theta.sum() - 3.0) <= 1e-12);
    CHECK((x.losses.array() == y.losses.array()).all());
    CHECK((x.theta.array() == y.theta.array()).all());
    CHECK((x.weighted_norms.array() == y.weighted_norms.array()).all());
  }
  CHECK(std::abs(a.state.weights.theta.sum() - 3.0) <= 1e-12);
  CHECK((a.model.params.flatten().array() == b.model.params.flatten().array()).all());
  CHECK(a.state.history.front().theta == Eigen::Vector3d::Ones());
  CHECK(a.state.weights.initial_loss == a.state.history.front().losses);
  CHECK(a.state.optimizer.steps() == 30);

  auto other = cfg;
  other.seed = 12;
  CHECK(train(records, other, SobolevConfig{}).state.history.back().losses != a.state.history.back().losses);
}

TEST_CASE("minibatches") {
  auto cfg = testing::small_training_config(3);
  cfg.batch_size = 5;
  const auto r = train(small_records(), cfg, SobolevConfig{});
  CHECK(r.state.history.size() == 3);
  CHECK(r.state.optimizer.steps() == 3 * ((static_cast<long>(small_records().size()) + 4) / 5));
  CHECK(std::abs(r.state.weights.theta.sum() - 3.0) <= 1e-12);
}

TEST_CASE("divergence stops training") {
  auto cfg = testing::small_training_config(50);
  cfg.divergence_threshold = 1e-3;
  const auto r = train(small_records(), cfg, SobolevConfig{});
  CHECK(r.status == TrainingStatus::Diverged);
  CHECK(r.state.history.size() == 1);
}

TEST_CASE("invalid configurations") {
  auto cfg = testing::small_training_config();
  cfg.alpha = -1;
  CHECK_THROWS_AS(train(small_records(), cfg, SobolevConfig{}), std::invalid_argument);
  cfg = testing::small_training_config();
  cfg.divergence_threshold = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  SobolevConfig s;
  s.order = 2;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(train({}, testing::small_training_config(), SobolevConfig{}), std::invalid_argument);
}

TEST_CASE("surrogate field follows the model") {
  const auto& records = small_records();
  SurrogateModel model;
  model.params = nn::initialize<double>(testing::small_architecture(), 9);
  model.normalization = Normalization::fit(records, OutputScaling::Flexural);
  const auto material = records.front().material;
  const auto mesh = build_mesh(portico_model(testing::small_portico(), material));
  SurrogateField field(model, mesh, material);
  for (std::size_t e : {std::size_t{0}, std::size_t{3}, std::size_t{5}}) {
    const auto& el = mesh.elements[e];
    const double x = 0.3 * el.length;
    const Eigen::Vector2d p = mesh.nodes[el.start_node] + x * el.tangent();
    const Eigen::Vector3d y = model.predict(p, material);
    const auto v = field.evaluate(e, x);
    CHECK(v.axial == doctest::Approx(el.tangent().dot(y.head<2>())));
    CHECK(v.transverse == doctest::Approx(el.normal().dot(y.head<2>())));
    const double h = 1e-6;
    const auto up = field.evaluate(e, x + h), dn = field.evaluate(e, x - h);
    CHECK(v.axial_slope == doctest::Approx((up.axial - dn.axial) / (2 * h)).epsilon(1e-6));
    CHECK(v.transverse_slope == doctest::Approx((up.transverse - dn.transverse) / (2 * h)).epsilon(1e-6));
  }
}
