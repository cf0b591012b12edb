#include "doctest.h"
#include "fd_check.hpp"

#include "osproto/encoder.hpp"

#include <limits>

using namespace osproto;

namespace {

EncoderParams one_layer(double w, double b) {
  auto p = EncoderParams::zeros({1, 1});
  p.weights[0](0, 0) = w;
  p.biases[0](0) = b;
  return p;
}

EncoderParams random_encoder(const std::vector<Eigen::Index>& dims, std::uint64_t seed) {
  RngStream rng(seed, "test-encoder", 0);
  auto p = init_encoder(dims, rng);
  for (auto& b : p.biases) b = normal_matrix(rng, b.size(), 1, 0.5);
  return p;
}

}  // namespace

TEST_CASE("forward examples") {
  auto zero = EncoderParams::zeros({4, 8, 3});
  const Vec f0 = forward(zero, Vec::Constant(4, 2.5));
  CHECK(identical(f0, Vec::Zero(3)));

  CHECK(forward(one_layer(2, 1), Vec::Constant(1, 3.0))(0) == 7.0);

  auto relu = EncoderParams::zeros({1, 2, 1});
  relu.weights[0] << 1, -1;
  relu.weights[1] << 1, 1;
  CHECK(forward(relu, Vec::Constant(1, 2.0))(0) == 2.0);

  CHECK_THROWS_AS(forward(zero, Vec::Zero(3)), Error);
}

TEST_CASE("forward_batch matches per-column forward") {
  const auto p = random_encoder({5, 7, 6, 3}, 1);
  RngStream rng(2, "inputs", 0);
  const Mat x = normal_matrix(rng, 5, 9, 1.0);
  const Mat f = forward_batch(p, x);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    CHECK((f.col(j) - forward(p, Vec(x.col(j)))).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("init_encoder shapes and scale") {
  RngStream rng(3, "init", 0);
  const auto p = init_encoder({16, 64, 64, 16}, rng);
  p.validate();
  REQUIRE(p.num_layers() == 3);
  CHECK(p.weights[1].rows() == 64);
  CHECK(p.weights[1].cols() == 64);
  for (const auto& b : p.biases) CHECK(b.isZero(0.0));
  const double var = p.weights[1].squaredNorm() / double(p.weights[1].size());
  CHECK(var == doctest::Approx(2.0 / 64.0).epsilon(0.1));
  CHECK_THROWS_AS(EncoderParams::zeros({16}), Error);
}

TEST_CASE("backward examples") {
  const auto p = random_encoder({3, 4, 2}, 4);
  const auto g = backward(p, Vec::Constant(3, 0.7), Vec::Zero(2));
  for (const auto& w : g.params.weights) CHECK(w.isZero(0.0));
  for (const auto& b : g.params.biases) CHECK(b.isZero(0.0));

  const auto affine = backward(one_layer(2, 1), Vec::Constant(1, 3.0), Vec::Constant(1, 1.0));
  CHECK(affine.params.weights[0](0, 0) == 3.0);
  CHECK(affine.params.biases[0](0) == 1.0);
  CHECK(affine.inputs(0, 0) == 2.0);

  CHECK_THROWS_AS(backward(p, Vec::Zero(3), Vec::Zero(3)), Error);
}

TEST_CASE("backward matches finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto p = random_encoder({6, 8, 7, 4}, 10 + seed);
    RngStream rng(seed, "fd-inputs", 0);
    Mat x = normal_matrix(rng, 6, 3, 1.0);
    const Mat gf = normal_matrix(rng, 4, 3, 1.0);
    auto objective = [&] { return (gf.array() * forward_batch(p, x).array()).sum(); };

    const auto g = backward(p, forward_pass(p, x), gf);
    fdcheck::RelErr err;
    for (std::size_t l = 0; l < p.num_layers(); ++l) {
      fdcheck::check_matrix(p.weights[l], g.params.weights[l], objective, "W" + std::to_string(l), err);
      fdcheck::check_vector(p.biases[l], g.params.biases[l], objective, "b" + std::to_string(l), err);
    }
    fdcheck::check_matrix(x, g.inputs, objective, "x", err);
    INFO("worst entry: " << err.worst);
    CHECK(err.max_rel <= fdcheck::kTolerance);
  }
}

TEST_CASE("sgd_step update rule") {
  SgdHyper h{0.1, 0.9, 0.0};
  double p = 1.0;
  Mat v;
  sgd_step(p, 0.5, v, h, "p");
  CHECK(v(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p == doctest::Approx(0.905).epsilon(1e-15));

  h.weight_decay = 0.1;
  p = 1.0;
  v.resize(0, 0);
  sgd_step(p, 0.5, v, h, "p");
  CHECK(v(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p == doctest::Approx(0.886).epsilon(1e-15));
}

TEST_CASE("sgd_step fixed points") {
  auto p = random_encoder({3, 5, 2}, 20);
  const auto before = p;
  OptState state;
  sgd_step(p, p.zeros_like(), state, SgdHyper{0.1, 0.9, 0.0});
  CHECK(p == before);
  for (std::size_t i = 0; i < state.size(); ++i) CHECK(state.velocity(i).isZero(0.0));

  RngStream rng(21, "grads", 0);
  auto g = p.zeros_like();
  for (auto& w : g.weights) w = normal_matrix(rng, w.rows(), w.cols(), 3.0);
  OptState s2;
  for (int it = 0; it < 3; ++it) sgd_step(p, g, s2, SgdHyper{0.0, 0.9, 5e-4});
  CHECK(p == before);
}

TEST_CASE("sgd_step rejects non-finite gradients by tensor name") {
  auto p = random_encoder({3, 5, 2}, 22);
  auto g = p.zeros_like();
  g.biases[1](0) = std::numeric_limits<double>::quiet_NaN();
  OptState state;
  try {
    sgd_step(p, g, state, SgdHyper{0.1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("b1") != std::string::npos);
  }
  auto wrong = EncoderParams::zeros({3, 4, 2});
  CHECK_THROWS_AS(sgd_step(p, wrong, state, SgdHyper{0.1}), Error);
}

TEST_CASE("pretrain") {
  SyntheticSpec spec;
  spec.n_categories = 10;
  spec.seed = 0;
  const auto ds = gen_synthetic(spec);
  PretrainConfig cfg;

  SUBCASE("zero epochs returns the initialization") {
    cfg.epochs = 0;
    const auto r = pretrain(ds, cfg, 5);
    auto rng = rng_stream(5, "pretrain-init", 0);
    CHECK(r.encoder == init_encoder(cfg.layer_dims, rng));
    CHECK(r.epoch_loss.empty());
  }
  SUBCASE("separable clusters are learned") {
    const auto r = pretrain(ds, cfg, 0);
    CHECK(r.train_accuracy > 0.9);
    CHECK(r.epoch_loss.size() == 20u);
    CHECK(r.epoch_loss.back() < r.epoch_loss.front());
    CHECK(pretrain(ds, cfg, 0).encoder == r.encoder);
  }
  SUBCASE("errors") {
    Dataset empty;
    CHECK_THROWS_AS(pretrain(empty, cfg, 0), Error);
    cfg.layer_dims = {8, 4};
    CHECK_THROWS_AS(pretrain(ds, cfg, 0), Error);
  }
}
