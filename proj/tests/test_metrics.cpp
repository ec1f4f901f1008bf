#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

#include "lowrank/dataset.hpp"
#include "lowrank/matrix.hpp"
#include "lowrank/metrics.hpp"
#include "lowrank/network.hpp"
#include "lowrank/rng.hpp"

using namespace lowrank;

namespace {

Network identity_net(std::size_t dim) {
  Network net;
  DenseLayer layer;
  layer.weights = Matrix::identity(dim);
  layer.bias.assign(dim, 0.0);
  layer.activation = Activation::identity;
  net.layers.push_back(layer);
  net.class_count = dim;
  return net;
}

Matrix interior_features(std::size_t rows, std::size_t cols,
                         std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = 0.25 + 0.5 * rng.uniform();
  return m;
}

}  // namespace

TEST_CASE("noise is deterministic and respects the bounds") {
  Matrix features = interior_features(30, 8, 131);
  NoiseConfig cfg;
  cfg.rng_seed = 7;

  Matrix a = perturb_gaussian(features, cfg);
  Matrix b = perturb_gaussian(features, cfg);
  REQUIRE(a == b);

  cfg.rng_seed = 8;
  Matrix c = perturb_gaussian(features, cfg);
  REQUIRE(max_abs_diff(a, c) > 0.0);

  for (double v : a.data()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("noise hits roughly the configured fraction of features") {
  Matrix features = interior_features(100, 40, 137);
  NoiseConfig cfg;
  cfg.pixel_prob = 0.6;
  cfg.rng_seed = 11;

  Matrix noisy = perturb_gaussian(features, cfg);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (noisy.data()[i] != features.data()[i]) ++changed;
  }
  double fraction = static_cast<double>(changed) / 4000.0;
  REQUIRE(fraction > 0.55);
  REQUIRE(fraction < 0.65);
}

TEST_CASE("degenerate noise settings leave the data alone") {
  Matrix features = interior_features(10, 5, 139);

  NoiseConfig off;
  off.pixel_prob = 0.0;
  REQUIRE(perturb_gaussian(features, off) == features);

  NoiseConfig silent;
  silent.sigma = 0.0;
  REQUIRE(perturb_gaussian(features, silent) == features);
}

TEST_CASE("noisy accuracy with silent noise equals clean accuracy") {
  Dataset data = gen_blobs(3, 6, 20, 4.0, 141);
  Network net = make_mlp(6, {8}, 3, Activation::relu, 142);
  NoiseConfig cfg;
  cfg.sigma = 0.0;
  double clean = classification_accuracy(net, data.features, data.labels);
  REQUIRE(noisy_accuracy(net, data, cfg) == clean);
}

TEST_CASE("noisy accuracy is deterministic") {
  Dataset data = gen_blobs(3, 6, 20, 4.0, 143);
  Network net = make_mlp(6, {8}, 3, Activation::relu, 144);
  NoiseConfig cfg;
  cfg.rng_seed = 17;
  REQUIRE(noisy_accuracy(net, data, cfg) == noisy_accuracy(net, data, cfg));
}

TEST_CASE("identity networks neither amplify nor damp perturbations") {
  Network net = identity_net(5);
  Matrix clean = interior_features(12, 5, 151);
  NoiseConfig cfg;
  cfg.rng_seed = 19;
  Matrix noisy = perturb_gaussian(clean, cfg);

  PropagationReport report = perturbation_propagation(net, clean, noisy, 0);
  REQUIRE(report.used == 12);
  REQUIRE(report.skipped == 0);
  REQUIRE(report.mean_amplification == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(report.mean_input_ratio == Catch::Approx(report.mean_tap_ratio).margin(1e-12));
}

TEST_CASE("uniform scaling cancels out of the propagation ratio") {
  Network net = identity_net(4);
  auto& layer = std::get<DenseLayer>(net.layers[0]);
  layer.weights = scale(Matrix::identity(4), 3.0);

  Matrix clean = interior_features(10, 4, 153);
  NoiseConfig cfg;
  cfg.rng_seed = 23;
  Matrix noisy = perturb_gaussian(clean, cfg);

  PropagationReport report = perturbation_propagation(net, clean, noisy, 0);
  REQUIRE(report.mean_amplification == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("propagation skips rows the relu silences") {
  Network net;
  DenseLayer layer;
  layer.weights = scale(Matrix::identity(3), -1.0);  // everything negative
  layer.bias.assign(3, 0.0);
  layer.activation = Activation::relu;
  net.layers.push_back(layer);
  net.class_count = 3;

  Matrix clean = interior_features(6, 3, 157);
  NoiseConfig cfg;
  cfg.rng_seed = 29;
  Matrix noisy = perturb_gaussian(clean, cfg);

  PropagationReport report = perturbation_propagation(net, clean, noisy, 0);
  REQUIRE(report.used == 0);
  REQUIRE(report.skipped == 6);
  REQUIRE(report.mean_amplification == 0.0);
}

TEST_CASE("propagation skips rows with no input perturbation") {
  Network net = identity_net(3);
  Matrix clean = interior_features(4, 3, 159);
  Matrix noisy = clean;
  noisy(0, 0) += 0.05;  // only row 0 differs

  PropagationReport report = perturbation_propagation(net, clean, noisy, 0);
  REQUIRE(report.used == 1);
  REQUIRE(report.skipped == 3);
}

TEST_CASE("identity layer cushion is one over sqrt dimension") {
  Network net = identity_net(9);
  Matrix features = interior_features(8, 9, 161);
  CushionReport report = layer_cushion(net, features, 0);
  REQUIRE(report.used == 8);
  REQUIRE(report.cushion == Catch::Approx(1.0 / 3.0).margin(1e-12));
}

TEST_CASE("rank-one layer cushion matches the hand formula") {
  Network net = identity_net(3);
  auto& layer = std::get<DenseLayer>(net.layers[0]);
  layer.weights = Matrix(3, 3);
  layer.weights(0, 0) = 1.0;  // keeps only the first coordinate

  Matrix features(2, 3);
  features(0, 0) = 0.6;
  features(0, 1) = 0.8;  // ratio 0.6 / 1.0
  features(1, 0) = 0.3;
  features(1, 1) = 0.4;  // ratio 0.3 / 0.5 = 0.6, same
  CushionReport report = layer_cushion(net, features, 0);
  REQUIRE(report.cushion == Catch::Approx(0.6).margin(1e-12));
}

TEST_CASE("cushion of a deeper layer reads its true inputs") {
  // Layer 0 halves the inputs; layer 1 is identity, so its cushion over a
  // 2-dimensional space is 1/sqrt(2) regardless of the data.
  Network net;
  DenseLayer first;
  first.weights = scale(Matrix::identity(2), 0.5);
  first.bias.assign(2, 0.0);
  first.activation = Activation::identity;
  DenseLayer second = first;
  second.weights = Matrix::identity(2);
  net.layers = {first, second};
  net.class_count = 2;

  Matrix features = interior_features(5, 2, 163);
  CushionReport report = layer_cushion(net, features, 1);
  REQUIRE(report.cushion == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
}

TEST_CASE("cushion skips zero-norm layer inputs") {
  Network net;
  DenseLayer gate;
  gate.weights = scale(Matrix::identity(2), -1.0);
  gate.bias.assign(2, 0.0);
  gate.activation = Activation::relu;
  DenseLayer head;
  head.weights = Matrix::identity(2);
  head.bias.assign(2, 0.0);
  head.activation = Activation::identity;
  net.layers = {gate, head};
  net.class_count = 2;

  Matrix features = interior_features(4, 2, 167);
  CushionReport report = layer_cushion(net, features, 1);
  REQUIRE(report.used == 0);
  REQUIRE(report.skipped == 4);
  REQUIRE(report.cushion == 0.0);
}

TEST_CASE("metrics validate their inputs") {
  Network net = identity_net(3);
  Matrix features = interior_features(4, 3, 171);

  NoiseConfig bad;
  bad.pixel_prob = 1.5;
  REQUIRE_THROWS_AS(perturb_gaussian(features, bad), std::invalid_argument);

  REQUIRE_THROWS_AS(perturbation_propagation(net, features, features, 5),
                    std::invalid_argument);
  Matrix other(4, 2);
  REQUIRE_THROWS_AS(perturbation_propagation(net, features, other, 0),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(layer_cushion(net, features, 7), std::invalid_argument);
  REQUIRE_THROWS_AS(layer_cushion(net, Matrix(0, 3), 0),
                    std::invalid_argument);
}
