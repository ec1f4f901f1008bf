#include <catch2/catch_amalgamated.hpp>

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <vector>

#include "lowrank/checkpoint.hpp"
#include "lowrank/dataset.hpp"
#include "lowrank/lrlayer.hpp"
#include "lowrank/matrix.hpp"
#include "lowrank/network.hpp"
#include "lowrank/train.hpp"

using namespace lowrank;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint ckpt;
  ckpt.net = make_mlp(6, {10, 8}, 3, Activation::relu, 231);
  ckpt.net = with_bottleneck(ckpt.net, 0, 4, 232);
  ckpt.net.tap_index = 2;

  LRLayerState state = make_lr_state(8, 3);
  state.lambda1 = 0.7;
  state.lambda2 = 0.3;
  state.w_learning_rate = 0.05;
  state.projection_period = 7;
  state.step_counter = 13;
  state.backend = ProjectionBackend::nystrom_ensembled;
  state.nystrom.sample_count = 6;
  state.nystrom.ensemble_runs = 4;
  state.nystrom.rng_seed = 99;
  // Non-trivial carrier so the round-trip has real payload.
  Dataset data = gen_blobs(2, 8, 10, 3.0, 233);
  LRGrads grads = lr_grads(data.features, state);
  lr_step(state, grads.grad_w, grads.grad_b, 0.1);
  ckpt.lr_states.push_back({2, state});

  LRLayerState plain = make_lr_state(8, 2);
  ckpt.lr_states.push_back({2, plain});
  return ckpt;
}

void require_networks_equal(const Network& a, const Network& b) {
  REQUIRE(a.tap_index == b.tap_index);
  REQUIRE(a.class_count == b.class_count);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (const auto* dense = std::get_if<DenseLayer>(&a.layers[i])) {
      const auto& other = std::get<DenseLayer>(b.layers[i]);
      REQUIRE(dense->weights == other.weights);
      REQUIRE(dense->bias == other.bias);
      REQUIRE(dense->activation == other.activation);
    } else {
      REQUIRE(std::get<BottleneckLayer>(a.layers[i]).factor ==
              std::get<BottleneckLayer>(b.layers[i]).factor);
    }
  }
}

}  // namespace

TEST_CASE("checkpoints round-trip bit for bit") {
  Checkpoint ckpt = sample_checkpoint();
  std::filesystem::path path =
      std::filesystem::temp_directory_path() / "roundtrip_ckpt.json";
  save_checkpoint(path, ckpt);
  Checkpoint loaded = load_checkpoint(path);
  std::filesystem::remove(path);

  require_networks_equal(ckpt.net, loaded.net);
  REQUIRE(loaded.lr_states.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& [tap_a, state_a] = ckpt.lr_states[k];
    const auto& [tap_b, state_b] = loaded.lr_states[k];
    REQUIRE(tap_a == tap_b);
    REQUIRE(state_a.w_carrier == state_b.w_carrier);
    REQUIRE(state_a.bias == state_b.bias);
    REQUIRE(state_a.target_rank == state_b.target_rank);
    REQUIRE(state_a.lambda1 == state_b.lambda1);
    REQUIRE(state_a.lambda2 == state_b.lambda2);
    REQUIRE(state_a.w_learning_rate == state_b.w_learning_rate);
    REQUIRE(state_a.projection_period == state_b.projection_period);
    REQUIRE(state_a.step_counter == state_b.step_counter);
    REQUIRE(state_a.backend == state_b.backend);
    REQUIRE(state_a.nystrom.sample_count == state_b.nystrom.sample_count);
    REQUIRE(state_a.nystrom.ensemble_runs == state_b.nystrom.ensemble_runs);
    REQUIRE(state_a.nystrom.smoothing_delta == state_b.nystrom.smoothing_delta);
    REQUIRE(state_a.nystrom.rng_seed == state_b.nystrom.rng_seed);
  }
}

TEST_CASE("loaded networks predict identically") {
  Checkpoint ckpt = sample_checkpoint();
  nlohmann::ordered_json j = checkpoint_to_json(ckpt);
  Checkpoint loaded = checkpoint_from_json(j);

  Dataset data = gen_blobs(3, 6, 15, 3.0, 235);
  REQUIRE(predict(ckpt.net, data.features) ==
          predict(loaded.net, data.features));
}

TEST_CASE("version mismatch names both versions") {
  nlohmann::ordered_json j = checkpoint_to_json(sample_checkpoint());
  j["format_version"] = 2;
  REQUIRE_THROWS_WITH(checkpoint_from_json(j),
                      Catch::Matchers::ContainsSubstring("expected 1") &&
                          Catch::Matchers::ContainsSubstring("found 2"));
}

TEST_CASE("malformed checkpoints are rejected") {
  nlohmann::ordered_json good = checkpoint_to_json(sample_checkpoint());

  nlohmann::ordered_json missing = good;
  missing.erase("layers");
  REQUIRE_THROWS_AS(checkpoint_from_json(missing), std::runtime_error);

  nlohmann::ordered_json bad_kind = good;
  bad_kind["layers"][0]["kind"] = "conv";
  REQUIRE_THROWS_AS(checkpoint_from_json(bad_kind), std::runtime_error);

  nlohmann::ordered_json short_data = good;
  short_data["layers"][0]["weights"]["data"] = {1.0, 2.0};
  REQUIRE_THROWS_AS(checkpoint_from_json(short_data), std::runtime_error);

  nlohmann::ordered_json short_factor = good;
  short_factor["layers"][1]["factor"]["data"] = {1.0, 2.0};
  REQUIRE_THROWS_AS(checkpoint_from_json(short_factor), std::runtime_error);

  nlohmann::ordered_json bad_tap = good;
  bad_tap["lr_state"][0]["tap"] = 17;
  REQUIRE_THROWS_AS(checkpoint_from_json(bad_tap), std::runtime_error);

  std::filesystem::path path =
      std::filesystem::temp_directory_path() / "broken_ckpt.json";
  std::ofstream(path) << "{ not json";
  REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);

  REQUIRE_THROWS_AS(load_checkpoint("/nonexistent/nowhere.json"),
                    std::runtime_error);
}

TEST_CASE("empty regularizer list round-trips") {
  Checkpoint ckpt;
  ckpt.net = make_mlp(4, {5}, 2, Activation::relu, 237);
  Checkpoint loaded = checkpoint_from_json(checkpoint_to_json(ckpt));
  REQUIRE(loaded.lr_states.empty());
  require_networks_equal(ckpt.net, loaded.net);
}
