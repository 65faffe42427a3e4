#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "partdisc/errors.hpp"
#include "partdisc/part_layer.hpp"
#include "partdisc/pipeline.hpp"
#include "test_util.hpp"

using namespace partdisc;

namespace {

VectorSample sample_from(const std::vector<std::vector<float>>& rows) {
  VectorSample s;
  s.dim = static_cast<int>(rows[0].size());
  for (const auto& r : rows) s.values.insert(s.values.end(), r.begin(), r.end());
  return s;
}

PseudoGT labels_of(int h, int w, std::vector<int> l) { return {h, w, std::move(l)}; }

}  // namespace

TEST_CASE("init_from_clusters shape and background row") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g(0, 1);
  VectorSample s;
  s.dim = 16;
  for (int i = 0; i < 600 * 16; ++i) s.values.push_back(g(rng));
  const PartLayer layer = init_from_clusters(s, 512, 3, {10, 1});
  CHECK(layer.out_channels() == 513);
  CHECK(layer.in_channels() == 16);
  CHECK(layer.weights.row(512).norm() == 0.0);
  for (int r = 0; r < 512; ++r) CHECK(layer.weights.row(r).norm() == doctest::Approx(1.0));
}

TEST_CASE("init_from_clusters recovers antipodal groups") {
  std::mt19937_64 rng(2);
  std::normal_distribution<float> jitter(0, 0.02f);
  std::vector<std::vector<float>> rows;
  // Directions (1, 1, 0)/sqrt2 and its negation, symmetric jitter around each.
  for (int i = 0; i < 20; ++i) {
    const float a = jitter(rng), b = jitter(rng), c = jitter(rng);
    rows.push_back({1 + a, 1 - a, b + c});
    rows.push_back({1 - a, 1 + a, -b - c});
    rows.push_back({-1 - a, -1 + a, b});
    rows.push_back({-1 + a, -1 - a, -b});
  }
  const PartLayer layer = init_from_clusters(sample_from(rows), 2, 7);
  const double h = 1 / std::sqrt(2.0);
  for (int r = 0; r < 2; ++r) {
    const double sign = layer.weights(r, 0) > 0 ? 1 : -1;
    CHECK(layer.weights(r, 0) == doctest::Approx(sign * h).epsilon(1e-6));
    CHECK(layer.weights(r, 1) == doctest::Approx(sign * h).epsilon(1e-6));
    CHECK(std::abs(layer.weights(r, 2)) < 1e-6);
  }
  CHECK(layer.weights(0, 0) * layer.weights(1, 0) < 0);
}

TEST_CASE("init_from_clusters with k equal to the sample size") {
  const std::vector<std::vector<float>> rows{{3, 0, 0}, {0, 2, 0}, {0, 0, 5}, {1, 1, 0}};
  const PartLayer layer = init_from_clusters(sample_from(rows), 4, 0);
  std::vector<int> hit(4, 0);
  for (int r = 0; r < 4; ++r) {
    for (int i = 0; i < 4; ++i) {
      Eigen::RowVector3d v(rows[i][0], rows[i][1], rows[i][2]);
      if ((layer.weights.row(r) - v.normalized()).norm() < 1e-9) ++hit[i];
    }
  }
  CHECK(hit == std::vector<int>{1, 1, 1, 1});
}

TEST_CASE("init_from_clusters errors and determinism") {
  const std::vector<std::vector<float>> rows{{1, 0}, {0, 1}};
  CHECK_THROWS_AS(init_from_clusters(sample_from(rows), 3, 0), DataError);
  const std::vector<std::vector<float>> flat{{1, 1}, {2, 2}, {3, 3}};
  CHECK_THROWS_WITH_AS(init_from_clusters(sample_from(flat), 2, 0),
                       doctest::Contains("zero-variance"), DataError);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 1);
  VectorSample s;
  s.dim = 5;
  for (int i = 0; i < 200 * 5; ++i) s.values.push_back(u(rng));
  CHECK(init_from_clusters(s, 6, 9).weights == init_from_clusters(s, 6, 9).weights);
}

TEST_CASE("forward examples and properties") {
  PartLayer two;
  two.weights.resize(2, 2);
  two.weights << 1, 0, 0, 0;
  FeatureMap one(1, 1, 2);
  one.data() = {3.0f, 0.0f};  // normalized to (1, 0): logits (1, 0)
  const FeatureMap o = forward(one, two);
  CHECK(o.data()[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1)).epsilon(1e-6));
  CHECK(o.data()[1] == doctest::Approx(1 / (std::exp(1.0) + 1)).epsilon(1e-6));
  CHECK(o.data()[0] == doctest::Approx(0.7311).epsilon(1e-4));

  std::mt19937_64 rng(5);
  PartLayer layer;
  layer.weights = RowMatrix::Random(6, 4);
  for (int t = 0; t < 10; ++t) {
    FeatureMap fm = oracle::random_map(rng, 3, 4, 4);
    fm.at(0, 0, 0) = fm.at(0, 0, 1) = fm.at(0, 0, 2) = fm.at(0, 0, 3) = 0;  // zero cell
    const FeatureMap out = forward(fm, layer);
    for (int k = 0; k < out.cells(); ++k) {
      double s = 0;
      for (float v : out.cell(k)) {
        CHECK(v >= 0);
        s += v;
      }
      CHECK(std::abs(s - 1) < 1e-6);
    }
    FeatureMap scaled = fm;
    std::uniform_real_distribution<float> f(0.01f, 100.0f);
    for (int k = 0; k < fm.cells(); ++k) {
      const float m = f(rng);
      for (int c = 0; c < 4; ++c) scaled.data()[k * 4 + c] *= m;
    }
    const FeatureMap out2 = forward(scaled, layer);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(std::abs(out.data()[i] - out2.data()[i]) < 1e-6);
    }
  }

  // A cell equal to prototype j picks channel j.
  PartLayer eye;
  eye.weights = RowMatrix::Zero(4, 3);
  eye.weights(0, 0) = eye.weights(1, 1) = eye.weights(2, 2) = 1;
  FeatureMap cells(1, 3, 3);
  cells.at(0, 0, 0) = cells.at(0, 1, 1) = cells.at(0, 2, 2) = 1;
  const FeatureMap p = forward(cells, eye);
  for (int j = 0; j < 3; ++j) {
    const auto v = p.cell(0, j);
    CHECK(std::max_element(v.begin(), v.end()) - v.begin() == j);
  }

  CHECK_THROWS_AS(forward(FeatureMap(2, 2, 5), eye), DataError);
}

TEST_CASE("nll_loss examples") {
  FeatureMap half(1, 1, 2, 0.5f);
  CHECK(nll_loss(half, labels_of(1, 1, {0})).loss == doctest::Approx(std::log(2.0)));

  FeatureMap perfect(1, 2, 2);
  perfect.data() = {1, 0, 0, 1};
  CHECK(nll_loss(perfect, labels_of(1, 2, {0, 1})).loss == doctest::Approx(0.0));

  FeatureMap two(1, 2, 2);
  two.data() = {0.5f, 0.5f, 0.75f, 0.25f};
  const NllResult r = nll_loss(two, labels_of(1, 2, {0, 1}));
  CHECK(r.loss == doctest::Approx(1.039721).epsilon(1e-6));
  CHECK(r.gradient[0] == doctest::Approx(-1.0 / (2 * 0.5)));
  CHECK(r.gradient[1] == 0.0);
  CHECK(r.gradient[3] == doctest::Approx(-1.0 / (2 * 0.25)));

  FeatureMap zero(1, 1, 2, 0.0f);
  const NllResult z = nll_loss(zero, labels_of(1, 1, {1}));
  CHECK(z.loss == doctest::Approx(-std::log(kLogFloor)));
  CHECK(z.gradient[1] == 0.0);

  CHECK_THROWS_AS(nll_loss(half, labels_of(1, 1, {2})), DataError);
}

TEST_CASE("adagrad examples") {
  PartLayer layer;
  layer.weights = RowMatrix::Constant(2, 3, 0.5);
  AdagradState st = make_adagrad_state(layer, 5e-3, 0.1, {3});
  const RowMatrix before = layer.weights;
  adagrad_step(layer, RowMatrix::Zero(2, 3), st);
  CHECK(layer.weights == before);
  CHECK(st.accumulator.isZero());

  RowMatrix g(2, 3);
  g << 0.3, -2, 1e-3, -0.01, 5, 0;
  adagrad_step(layer, g, st);
  for (int i = 0; i < 6; ++i) {
    const double sign = g.data()[i] > 0 ? 1 : (g.data()[i] < 0 ? -1 : 0);
    CHECK(layer.weights.data()[i] - before.data()[i] == doctest::Approx(-5e-3 * sign).epsilon(1e-6));
  }

  st.epoch = 3;
  CHECK(st.effective_lr() == doctest::Approx(5e-4));
  st.epoch = 2;
  CHECK(st.effective_lr() == doctest::Approx(5e-3));

  CHECK_THROWS_AS(adagrad_step(layer, RowMatrix::Zero(3, 3), st), UsageError);
  RowMatrix bad = g;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(adagrad_step(layer, bad, st), InvariantError);
}

TEST_CASE("adagrad accumulator never decreases") {
  std::mt19937_64 rng(8);
  PartLayer layer;
  layer.weights = RowMatrix::Random(3, 4);
  AdagradState st = make_adagrad_state(layer, 1e-2, 0.1, {});
  std::normal_distribution<double> n(0, 1);
  RowMatrix prev = st.accumulator;
  for (int step = 0; step < 50; ++step) {
    RowMatrix g(3, 4);
    for (int i = 0; i < 12; ++i) g.data()[i] = step % 5 == 0 ? 0.0 : n(rng);
    adagrad_step(layer, g, st);
    CHECK((st.accumulator.array() >= prev.array()).all());
    CHECK((st.accumulator.array() >= 0).all());
    prev = st.accumulator;
  }
}

TEST_CASE("checkpoint round trip") {
  const TempDir dir("ckpt");
  PartLayer layer;
  layer.weights = RowMatrix::Random(5, 7);
  save_checkpoint(dir / "w.ckpt", layer, {{"epoch", 3}});
  const PartLayer back = load_checkpoint(dir / "w.ckpt");
  REQUIRE(back.out_channels() == 5);
  REQUIRE(back.in_channels() == 7);
  CHECK((back.weights - layer.weights).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(std::filesystem::file_size(dir / "w.ckpt") == 8 + 35 * 4);
  const auto side = read_bytes(dir / "w.ckpt.json");
  const auto j = nlohmann::json::parse(std::string(side.begin(), side.end()));
  CHECK(j["epoch"] == 3);
  CHECK(j["c_o"] == 5);
  CHECK(j["c_i"] == 7);

  const auto bytes = read_bytes(dir / "w.ckpt");
  {
    std::ofstream out(dir / "short.ckpt", std::ios::binary);
    out.write(bytes.data(), 20);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), DataError);
}

TEST_CASE("pipeline gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const gradcheck::Instance in = gradcheck::make_instance(seed);
    CHECK(gradcheck::max_relative_error(in) < 1e-3);
  }
  // Wider shapes, more pool members, larger canvases.
  for (std::uint64_t seed = 100; seed < 104; ++seed) {
    const gradcheck::Instance in = gradcheck::make_instance(seed, 5, 6, 4, 5, 3);
    CHECK(gradcheck::max_relative_error(in) < 1e-3);
  }
}

TEST_CASE("pipeline collapses to a plain softmax NLL with identity warps") {
  std::mt19937_64 rng(9);
  PartLayer layer;
  layer.weights = RowMatrix::Random(3, 4);
  const FeatureMap self = oracle::random_map(rng, 3, 3, 4);
  const std::vector<const FeatureMap*> none;
  const PipelineTape tape = run_pipeline_forward(layer, self, none, {});
  const PseudoGT labels{3, 3, {0, 1, 2, 0, 1, 2, 2, 2, 0}};
  const StepResult step = pipeline_loss_and_gradient(tape, labels);

  // Closed form: dL/dW = sum_cells (p - onehot)^T x / N.
  const LayerActivation act = activate(self, layer);
  RowMatrix expect = RowMatrix::Zero(3, 4);
  for (int k = 0; k < 9; ++k) {
    Eigen::RowVectorXd d = act.probs.row(k);
    d(labels.labels[k]) -= 1;
    expect += d.transpose() * act.normalized.row(k) / 9.0;
  }
  CHECK((step.gradient - expect).cwiseAbs().maxCoeff() < 1e-12);

  // The same image repeated as an identity-warped pool gives the same gradient.
  const std::vector<const FeatureMap*> twin{&self};
  const std::vector<SpatialTransform> id{SpatialTransform::identity()};
  const StepResult twin_step = pipeline_loss_and_gradient(run_pipeline_forward(layer, self, twin, id), labels);
  CHECK((twin_step.gradient - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cells invalid in every pool map only see the training map") {
  std::mt19937_64 rng(10);
  PartLayer layer;
  layer.weights = RowMatrix::Random(3, 2);
  const FeatureMap self = oracle::random_map(rng, 3, 3, 2);
  const FeatureMap other = oracle::random_map(rng, 3, 3, 2);
  // Shift by a full row: canvas row 0 has no valid pool sample.
  const std::vector<const FeatureMap*> pool{&other};
  const std::vector<SpatialTransform> shift{SpatialTransform::translation(1, 0)};
  const PipelineTape tape = run_pipeline_forward(layer, self, pool, shift);
  const LayerActivation act = activate(self, layer);
  for (int x = 0; x < 3; ++x) {
    CHECK(tape.valid_count[x] == 1);
    for (int c = 0; c < 3; ++c) CHECK(tape.mean(x, c) == doctest::Approx(act.probs(x, c)));
  }
  // A unit upstream gradient at a row-0 cell flows through the training map
  // alone, with the full weight of a single contributor.
  RowMatrix grad_mean = RowMatrix::Zero(9, 3);
  grad_mean(1, 2) = 1.0;
  const RowMatrix g = backward_through_pipeline(tape, grad_mean);
  Eigen::RowVectorXd dp = Eigen::RowVectorXd::Zero(3);
  dp(2) = 1.0;
  const Eigen::RowVectorXd p = act.probs.row(1);
  const Eigen::RowVectorXd dlogit = p.cwiseProduct(dp - Eigen::RowVectorXd::Constant(3, dp.dot(p)));
  const RowMatrix expect = dlogit.transpose() * act.normalized.row(1);
  CHECK((g - expect).cwiseAbs().maxCoeff() < 1e-12);
}
