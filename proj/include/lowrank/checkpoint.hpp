#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowrank/lrlayer.hpp"
#include "lowrank/matrix.hpp"
#include "lowrank/network.hpp"
#include "lowrank/nystrom.hpp"

namespace lowrank {

constexpr int kCheckpointVersion = 1;

// A trained network plus any regularizer states, each tagged with the tap
// it was attached to.
struct Checkpoint {
  Network net;
  std::vector<std::pair<std::size_t, LRLayerState>> lr_states;
};

namespace detail {

using json = nlohmann::ordered_json;

inline json matrix_to_json(const Matrix& m) {
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  out["data"] = m.data();
  return out;
}

inline Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) {
    throw std::runtime_error("checkpoint: matrix data length mismatch");
  }
  m.data() = std::move(data);
  return m;
}

inline json layer_to_json(const Layer& layer) {
  json out;
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    out["kind"] = "dense";
    out["weights"] = matrix_to_json(dense->weights);
    out["bias"] = dense->bias;
    out["activation"] = activation_name(dense->activation);
  } else {
    const auto& bottleneck = std::get<BottleneckLayer>(layer);
    out["kind"] = "bottleneck";
    out["factor"] = matrix_to_json(bottleneck.factor);
  }
  return out;
}

inline Layer layer_from_json(const json& j) {
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "dense") {
    DenseLayer dense;
    dense.weights = matrix_from_json(j.at("weights"));
    dense.bias = j.at("bias").get<std::vector<double>>();
    dense.activation = parse_activation(j.at("activation").get<std::string>());
    if (dense.bias.size() != dense.weights.rows()) {
      throw std::runtime_error("checkpoint: dense bias width mismatch");
    }
    return dense;
  }
  if (kind == "bottleneck") {
    BottleneckLayer bottleneck;
    bottleneck.factor = matrix_from_json(j.at("factor"));
    return bottleneck;
  }
  throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
}

inline json lr_state_to_json(std::size_t tap, const LRLayerState& state) {
  json out;
  out["tap"] = tap;
  out["w_carrier"] = matrix_to_json(state.w_carrier);
  out["bias"] = state.bias;
  out["target_rank"] = state.target_rank;
  out["lambda1"] = state.lambda1;
  out["lambda2"] = state.lambda2;
  if (state.w_learning_rate.has_value()) {
    out["w_learning_rate"] = *state.w_learning_rate;
  } else {
    out["w_learning_rate"] = nullptr;
  }
  out["projection_period"] = state.projection_period;
  out["step_counter"] = state.step_counter;
  out["backend"] = backend_name(state.backend);
  json nystrom;
  nystrom["sample_count"] = state.nystrom.sample_count;
  nystrom["ensemble_runs"] = state.nystrom.ensemble_runs;
  nystrom["smoothing_delta"] = state.nystrom.smoothing_delta;
  nystrom["max_smoothing_attempts"] = state.nystrom.max_smoothing_attempts;
  nystrom["rng_seed"] = state.nystrom.rng_seed;
  nystrom["svd_max_sweeps"] = state.nystrom.svd_max_sweeps;
  out["nystrom"] = nystrom;
  return out;
}

inline std::pair<std::size_t, LRLayerState> lr_state_from_json(const json& j) {
  LRLayerState state;
  state.w_carrier = matrix_from_json(j.at("w_carrier"));
  state.bias = j.at("bias").get<std::vector<double>>();
  state.target_rank = j.at("target_rank").get<std::size_t>();
  state.lambda1 = j.at("lambda1").get<double>();
  state.lambda2 = j.at("lambda2").get<double>();
  if (!j.at("w_learning_rate").is_null()) {
    state.w_learning_rate = j.at("w_learning_rate").get<double>();
  }
  state.projection_period = j.at("projection_period").get<std::size_t>();
  state.step_counter = j.at("step_counter").get<std::size_t>();
  state.backend = parse_backend(j.at("backend").get<std::string>());
  const json& nystrom = j.at("nystrom");
  state.nystrom.sample_count = nystrom.at("sample_count").get<std::size_t>();
  state.nystrom.ensemble_runs = nystrom.at("ensemble_runs").get<std::size_t>();
  state.nystrom.smoothing_delta = nystrom.at("smoothing_delta").get<double>();
  state.nystrom.max_smoothing_attempts =
      nystrom.at("max_smoothing_attempts").get<std::size_t>();
  state.nystrom.rng_seed = nystrom.at("rng_seed").get<std::uint64_t>();
  state.nystrom.svd_max_sweeps =
      nystrom.at("svd_max_sweeps").get<std::size_t>();
  if (state.bias.size() != state.w_carrier.rows()) {
    throw std::runtime_error("checkpoint: regularizer bias width mismatch");
  }
  return {j.at("tap").get<std::size_t>(), std::move(state)};
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_to_json(const Checkpoint& ckpt) {
  validate(ckpt.net);
  detail::json out;
  out["format_version"] = kCheckpointVersion;
  out["tap_index"] = ckpt.net.tap_index;
  out["class_count"] = ckpt.net.class_count;
  out["layers"] = detail::json::array();
  for (const Layer& layer : ckpt.net.layers) {
    out["layers"].push_back(detail::layer_to_json(layer));
  }
  out["lr_state"] = detail::json::array();
  for (const auto& [tap, state] : ckpt.lr_states) {
    out["lr_state"].push_back(detail::lr_state_to_json(tap, state));
  }
  return out;
}

inline Checkpoint checkpoint_from_json(const nlohmann::ordered_json& j) {
  try {
    int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw std::runtime_error(
          "checkpoint format_version: expected " +
          std::to_string(kCheckpointVersion) + ", found " +
          std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.net.tap_index = j.at("tap_index").get<std::size_t>();
    ckpt.net.class_count = j.at("class_count").get<std::size_t>();
    for (const auto& layer : j.at("layers")) {
      ckpt.net.layers.push_back(detail::layer_from_json(layer));
    }
    for (const auto& state : j.at("lr_state")) {
      ckpt.lr_states.push_back(detail::lr_state_from_json(state));
    }
    validate(ckpt.net);
    for (const auto& [tap, state] : ckpt.lr_states) {
      if (tap >= ckpt.net.layers.size()) {
        throw std::runtime_error("checkpoint: regularizer tap out of range");
      }
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed json: ") +
                             e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ckpt) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  }
  out << checkpoint_to_json(ckpt).dump(2) << '\n';
  if (!out) {
    throw std::runtime_error("save_checkpoint: write failed for " +
                             path.string());
  }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  }
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: " + path.string() + ": " +
                             e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace lowrank
