#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lowrank/matrix.hpp"
#include "lowrank/network.hpp"
#include "lowrank/rng.hpp"
#include "lowrank/svd.hpp"
#include "lowrank/train.hpp"
#include "test_support.hpp"

using namespace lowrank;
using namespace lowrank::testsupport;

namespace {

Network tiny_identity_net(std::size_t dim, Activation first_act) {
  Network net;
  DenseLayer l0;
  l0.weights = Matrix::identity(dim);
  l0.bias.assign(dim, 0.0);
  l0.activation = first_act;
  DenseLayer l1;
  l1.weights = Matrix::identity(dim);
  l1.bias.assign(dim, 0.0);
  l1.activation = Activation::identity;
  net.layers = {l0, l1};
  net.class_count = dim;
  net.tap_index = 0;
  return net;
}

}  // namespace

TEST_CASE("relu forward clamps negatives and keeps positives") {
  Network net = tiny_identity_net(2, Activation::relu);
  Matrix x = Matrix::from_rows({{-1.0, 2.0}});
  ForwardTrace trace = forward_with_taps(net, x);
  CHECK(trace.activations[0] == Matrix::from_rows({{0.0, 2.0}}));
  CHECK(trace.logits() == Matrix::from_rows({{0.0, 2.0}}));
}

TEST_CASE("zero weights produce zero logits") {
  Network net = make_mlp(5, {8, 6}, 3, Activation::relu, 1);
  for (Layer& layer : net.layers) {
    auto& dense = std::get<DenseLayer>(layer);
    for (double& v : dense.weights.data()) v = 0.0;
  }
  Matrix x(4, 5, 1.5);
  CHECK(max_abs(forward_with_taps(net, x).logits()) == 0.0);
}

TEST_CASE("bottleneck forward applies the factored weight") {
  Rng rng(50);
  BottleneckLayer layer;
  layer.factor = Matrix(6, 2);
  for (double& v : layer.factor.data()) v = rng.normal();
  Matrix x(5, 6);
  for (double& v : x.data()) v = rng.normal();
  Matrix got = layer_forward(Layer{layer}, x);
  Matrix expected = multiply(x, effective_weight(layer));
  CHECK(max_abs_diff(got, expected) < 1e-12);
  CHECK(matrix_rank(got) <= 2);
}

TEST_CASE("predict_labels breaks ties toward the lowest index") {
  Matrix logits = Matrix::from_rows(
      {{0.1, 0.9}, {0.5, 0.5}, {0.3, 0.2}});
  CHECK(predict_labels(logits) == std::vector<int>{1, 0, 0});
}

TEST_CASE("uniform logits cost ln k and confident logits cost almost nothing") {
  Matrix uniform(3, 4, 0.25);
  std::vector<int> labels = {0, 2, 3};
  CHECK(softmax_cross_entropy(uniform, labels) ==
        Catch::Approx(std::log(4.0)).margin(1e-12));

  Matrix confident(2, 3, 0.0);
  confident(0, 1) = 25.0;
  confident(1, 0) = 25.0;
  CHECK(softmax_cross_entropy(confident, {1, 0}) < 1e-8);
}

TEST_CASE("cross-entropy gradient rows sum to zero") {
  Rng rng(51);
  Matrix logits(6, 5);
  for (double& v : logits.data()) v = rng.normal();
  std::vector<int> labels = {0, 1, 2, 3, 4, 0};
  Matrix grad = softmax_cross_entropy_grad(logits, labels);
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) sum += grad(r, c);
    CHECK(sum == Catch::Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("analytic gradients match finite differences on random networks") {
  std::uint64_t seed = 1000;
  for (int trial = 0; trial < 10; ++trial) {
    RandomNetCase c = random_net_case(seed);
    INFO("trial " << trial << " next seed " << seed);
    CHECK(finite_diff_check(c.net, c.x, c.labels) <= 1e-4);
  }
}

TEST_CASE("purely linear networks agree with finite differences very tightly") {
  // Single-example batches with inputs in (1, 2) and a floor on every
  // analytic gradient component keep the finite-difference roundoff well
  // below the relative bound.
  std::uint64_t seed = 9000;
  int accepted = 0;
  while (accepted < 5) {
    Rng rng(seed);
    std::size_t input_dim = 3 + rng.index(4);
    std::size_t classes = 2 + rng.index(2);
    std::size_t mid = 3 + rng.index(4);
    Network net = make_mlp(input_dim, {mid}, classes, Activation::identity,
                           derive_seed(seed, 1));
    Matrix x(1, input_dim);
    for (double& v : x.data()) v = rng.uniform(1.0, 2.0);
    std::vector<int> labels = {static_cast<int>(rng.index(classes))};
    ++seed;

    Gradients g = loss_and_grads(net, x, labels);
    double floor = 1e300;
    for (const auto& layer : g.layers) {
      for (double v : layer.weights.data()) {
        floor = std::min(floor, std::abs(v));
      }
      for (double v : layer.bias) floor = std::min(floor, std::abs(v));
    }
    if (floor < 5e-3) continue;
    ++accepted;
    CHECK(finite_diff_check(net, x, labels) <= 1e-7);
  }
}

TEST_CASE("a null extra gradient changes nothing") {
  std::uint64_t seed = 3000;
  RandomNetCase c = random_net_case(seed);
  Gradients plain = loss_and_grads(c.net, c.x, c.labels);
  Gradients with_null = loss_and_grads(c.net, c.x, c.labels, nullptr);
  for (std::size_t i = 0; i < plain.layers.size(); ++i) {
    CHECK(plain.layers[i].weights == with_null.layers[i].weights);
    CHECK(plain.layers[i].bias == with_null.layers[i].bias);
  }
}

TEST_CASE("an extra tap gradient only alters layers at or below the tap") {
  std::uint64_t seed = 4000;
  RandomNetCase c = random_net_case(seed);
  c.net.tap_index = c.net.layers.size() - 2;
  ForwardTrace trace = forward_with_taps(c.net, c.x);
  Matrix extra = trace.activations[c.net.tap_index];
  for (double& v : extra.data()) v = 0.01 * (v + 1.0);

  Gradients plain = loss_and_grads(c.net, c.x, c.labels);
  Gradients bumped = loss_and_grads(c.net, c.x, c.labels, &extra);
  for (std::size_t i = c.net.tap_index + 1; i < c.net.layers.size(); ++i) {
    CHECK(plain.layers[i].weights == bumped.layers[i].weights);
  }
  CHECK(plain.layers[c.net.tap_index].weights !=
        bumped.layers[c.net.tap_index].weights);
}

TEST_CASE("injected tap gradients match finite differences of a combined loss") {
  // Auxiliary loss sum(coeff .* A_tap) is linear, so its activation gradient
  // is the coefficient matrix; the combined objective can be evaluated
  // numerically from scratch at perturbed parameters.
  std::uint64_t seed = 5000;
  RandomNetCase c = random_net_case(seed);
  std::size_t tap = c.net.tap_index;
  Rng rng(seed);
  ForwardTrace trace = forward_with_taps(c.net, c.x);
  Matrix coeff(trace.activations[tap].rows(), trace.activations[tap].cols());
  for (double& v : coeff.data()) v = rng.uniform(-0.5, 0.5);

  Gradients grads = loss_and_grads(c.net, c.x, c.labels, &coeff);
  auto combined = [&](const Network& net) {
    ForwardTrace t = forward_with_taps(net, c.x);
    double aux = 0.0;
    const Matrix& a = t.activations[tap];
    for (std::size_t i = 0; i < a.size(); ++i) {
      aux += coeff.data()[i] * a.data()[i];
    }
    return softmax_cross_entropy(t.logits(), c.labels) + aux;
  };

  double h = 1e-6;
  Network probe = c.net;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.layers.size(); ++i) {
    auto& dense = std::get<DenseLayer>(probe.layers[i]);
    for (std::size_t j = 0; j < dense.weights.size(); ++j) {
      double saved = dense.weights.data()[j];
      dense.weights.data()[j] = saved + h;
      double up = combined(probe);
      dense.weights.data()[j] = saved - h;
      double down = combined(probe);
      dense.weights.data()[j] = saved;
      double numeric = (up - down) / (2.0 * h);
      double analytic = grads.layers[i].weights.data()[j];
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max({std::abs(analytic),
                                            std::abs(numeric), 1e-8}));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("sgd_train separates two blobs") {
  auto [x, labels] = two_blobs(60, 4, 4.0, 60);
  for (double& v : x.data()) v = v / 8.0 + 0.5;
  Network net = make_mlp(4, {16}, 2, Activation::relu, 61);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.rng_seed = 62;
  std::vector<EpochStats> history = sgd_train(net, x, labels, cfg);
  REQUIRE(history.size() == 30);
  CHECK(classification_accuracy(net, x, labels) >= 0.99);
  CHECK(history.back().loss < history.front().loss);
}

TEST_CASE("zero epochs leave the network bit-exact") {
  Network net = make_mlp(3, {5}, 2, Activation::relu, 70);
  Network before = net;
  Matrix x(4, 3, 0.5);
  TrainConfig cfg;
  sgd_train(net, x, {0, 1, 0, 1}, cfg);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    CHECK(std::get<DenseLayer>(net.layers[i]).weights ==
          std::get<DenseLayer>(before.layers[i]).weights);
  }
}

TEST_CASE("training twice with one seed gives identical weights") {
  auto [x, labels] = two_blobs(30, 3, 3.0, 80);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.rng_seed = 81;
  Network a = make_mlp(3, {6}, 2, Activation::relu, 82);
  Network b = make_mlp(3, {6}, 2, Activation::relu, 82);
  sgd_train(a, x, labels, cfg);
  sgd_train(b, x, labels, cfg);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    CHECK(std::get<DenseLayer>(a.layers[i]).weights ==
          std::get<DenseLayer>(b.layers[i]).weights);
  }
}

TEST_CASE("a hook returning zeros does not perturb training") {
  auto [x, labels] = two_blobs(20, 3, 3.0, 90);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.rng_seed = 91;
  Network plain = make_mlp(3, {6}, 2, Activation::relu, 92);
  Network hooked = plain;
  std::size_t calls = 0;
  std::vector<TapHook> hooks;
  hooks.push_back({0, [&calls](const Matrix& a, double) {
                     ++calls;
                     return Matrix(a.rows(), a.cols());
                   }});
  sgd_train(plain, x, labels, cfg);
  sgd_train(hooked, x, labels, cfg, hooks);
  CHECK(calls > 0);
  for (std::size_t i = 0; i < plain.layers.size(); ++i) {
    CHECK(std::get<DenseLayer>(plain.layers[i]).weights ==
          std::get<DenseLayer>(hooked.layers[i]).weights);
  }
}

TEST_CASE("hooks stay silent through the pretrain window") {
  auto [x, labels] = two_blobs(10, 3, 3.0, 95);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.pretrain_epochs = 3;
  cfg.batch_size = 8;
  Network net = make_mlp(3, {6}, 2, Activation::relu, 96);
  std::size_t calls = 0;
  std::vector<TapHook> hooks;
  hooks.push_back({0, [&calls](const Matrix& a, double) {
                     ++calls;
                     return Matrix(a.rows(), a.cols());
                   }});
  sgd_train(net, x, labels, cfg, hooks);
  CHECK(calls == 0);
}

TEST_CASE("schedule_rate picks the latest milestone at or before the epoch") {
  std::vector<std::pair<std::size_t, double>> schedule = {
      {0, 0.1}, {10, 0.01}, {20, 0.001}};
  CHECK(schedule_rate(schedule, 0) == 0.1);
  CHECK(schedule_rate(schedule, 9) == 0.1);
  CHECK(schedule_rate(schedule, 10) == 0.01);
  CHECK(schedule_rate(schedule, 25) == 0.001);
  CHECK_THROWS_AS(schedule_rate({}, 0), std::invalid_argument);
}

TEST_CASE("make_mlp is deterministic per seed and shaped as requested") {
  Network a = make_mlp(7, {12, 9}, 4, Activation::relu, 123);
  Network b = make_mlp(7, {12, 9}, 4, Activation::relu, 123);
  Network c = make_mlp(7, {12, 9}, 4, Activation::relu, 124);
  REQUIRE(a.layers.size() == 3);
  CHECK(a.tap_index == 1);
  CHECK(a.input_dim() == 7);
  CHECK(a.output_dim() == 4);
  CHECK(std::get<DenseLayer>(a.layers[0]).weights ==
        std::get<DenseLayer>(b.layers[0]).weights);
  CHECK(std::get<DenseLayer>(a.layers[0]).weights !=
        std::get<DenseLayer>(c.layers[0]).weights);
}

TEST_CASE("with_bottleneck inserts a square factored layer after the position") {
  Network net = make_mlp(6, {10, 8}, 3, Activation::relu, 130);
  Network wide = with_bottleneck(net, 1, 2, 131);
  REQUIRE(wide.layers.size() == 4);
  const auto& b = std::get<BottleneckLayer>(wide.layers[2]);
  CHECK(b.factor.rows() == 8);
  CHECK(b.factor.cols() == 2);
  Matrix x(3, 6, 0.25);
  CHECK(forward_with_taps(wide, x).logits().rows() == 3);
}

TEST_CASE("input gradients of a linear softmax model match the closed form") {
  Rng rng(140);
  Matrix w(3, 5);
  for (double& v : w.data()) v = rng.normal();
  Network net;
  DenseLayer layer;
  layer.weights = w;
  layer.bias.assign(3, 0.0);
  layer.activation = Activation::identity;
  net.layers = {layer};
  net.class_count = 3;

  std::vector<double> x(5);
  for (double& v : x) v = rng.normal();
  int label = 1;
  std::vector<double> grad = input_gradient(net, x, label);

  std::vector<double> logits = matvec(w, x);
  double peak = std::max({logits[0], logits[1], logits[2]});
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - peak);
  std::vector<double> expected(5, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    double p = std::exp(logits[c] - peak) / denom;
    double coeff = p - (static_cast<int>(c) == label ? 1.0 : 0.0);
    for (std::size_t j = 0; j < 5; ++j) expected[j] += coeff * w(c, j);
  }
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(grad[j] == Catch::Approx(expected[j]).margin(1e-10));
  }
}

TEST_CASE("logit_jacobian of a linear model is its weight matrix") {
  Rng rng(150);
  Matrix w(4, 6);
  for (double& v : w.data()) v = rng.normal();
  Network net;
  DenseLayer layer;
  layer.weights = w;
  layer.bias.assign(4, 0.7);
  layer.activation = Activation::identity;
  net.layers = {layer};
  net.class_count = 4;
  std::vector<double> x(6, 0.3);
  CHECK(max_abs_diff(logit_jacobian(net, x), w) < 1e-12);
}

TEST_CASE("logit_jacobian matches finite differences through relu layers") {
  std::uint64_t seed = 6000;
  RandomNetCase c = random_net_case(seed);
  std::vector<double> x = c.x.row_copy(0);
  Matrix jac = logit_jacobian(c.net, x);
  double h = 1e-6;
  for (std::size_t j = 0; j < x.size(); ++j) {
    std::vector<double> up = x, down = x;
    up[j] += h;
    down[j] -= h;
    Matrix xu(1, x.size()), xd(1, x.size());
    xu.set_row(0, up);
    xd.set_row(0, down);
    Matrix lu = forward_with_taps(c.net, xu).logits();
    Matrix ld = forward_with_taps(c.net, xd).logits();
    for (std::size_t cidx = 0; cidx < c.net.class_count; ++cidx) {
      double numeric = (lu(0, cidx) - ld(0, cidx)) / (2.0 * h);
      CHECK(jac(cidx, j) == Catch::Approx(numeric).margin(1e-4));
    }
  }
}

TEST_CASE("network validation rejects malformed structures") {
  Network empty;
  CHECK_THROWS_AS(validate(empty), std::invalid_argument);

  Network net = make_mlp(4, {6}, 2, Activation::relu, 160);
  Network bad_tap = net;
  bad_tap.tap_index = 5;
  CHECK_THROWS_AS(validate(bad_tap), std::invalid_argument);

  Network bad_last = net;
  std::get<DenseLayer>(bad_last.layers.back()).activation = Activation::relu;
  CHECK_THROWS_AS(validate(bad_last), std::invalid_argument);

  Network bad_chain = net;
  std::get<DenseLayer>(bad_chain.layers[0]).weights = Matrix(7, 4);
  CHECK_THROWS_AS(validate(bad_chain), std::invalid_argument);

  Matrix x(2, 4, 0.1);
  CHECK_THROWS_AS(loss_and_grads(net, x, {0, 5}), std::invalid_argument);
  CHECK_THROWS_AS(loss_and_grads(net, Matrix(0, 4), {}), std::invalid_argument);
  CHECK_THROWS_AS(forward_with_taps(net, Matrix(2, 3)), std::invalid_argument);
}
