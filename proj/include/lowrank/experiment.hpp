#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lowrank/attacks.hpp"
#include "lowrank/checkpoint.hpp"
#include "lowrank/compress.hpp"
#include "lowrank/dataset.hpp"
#include "lowrank/lrlayer.hpp"
#include "lowrank/matrix.hpp"
#include "lowrank/metrics.hpp"
#include "lowrank/network.hpp"
#include "lowrank/nystrom.hpp"
#include "lowrank/rng.hpp"
#include "lowrank/svd.hpp"
#include "lowrank/train.hpp"

namespace lowrank {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fixed seed streams derived from the master seed, so every stage draws
// independent randomness no matter which stages run.
constexpr std::uint64_t kSeedStreamData = 0;
constexpr std::uint64_t kSeedStreamSplit = 1;
constexpr std::uint64_t kSeedStreamInit = 2;
constexpr std::uint64_t kSeedStreamTrain = 3;
constexpr std::uint64_t kSeedStreamNoise = 4;
constexpr std::uint64_t kSeedStreamMargin = 5;
constexpr std::uint64_t kSeedStreamBottleneck = 6;
constexpr std::uint64_t kSeedStreamRegBase = 16;

struct DataConfig {
  std::string kind = "blobs";  // "blobs" or "csv"
  // blobs
  std::size_t classes = 2;
  std::size_t dim = 8;
  std::size_t per_class = 100;
  double separation = 4.0;
  std::size_t train_per_class = 75;
  // csv
  std::string train_path;
  std::string test_path;
  bool rescale = true;
};

struct RegularizerConfig {
  std::size_t tap = 0;
  std::size_t rank = 1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  std::optional<double> w_learning_rate;
  std::size_t projection_period = 10;
  ProjectionBackend backend = ProjectionBackend::exact_svd;
  NystromConfig nystrom;
  bool nystrom_seed_set = false;  // explicit seed beats the derived one
};

struct BottleneckConfig {
  std::size_t position = 0;  // inserted after this layer
  std::size_t rank = 1;
};

struct AttackSection {
  AttackConfig attack;
  bool search_min_epsilon = false;
};

struct CompressSection {
  std::vector<std::size_t> pca_dims;  // 0 means raw tap embeddings
  MaxMarginConfig margin;
};

struct MetricsConfig {
  std::optional<AttackSection> attack;
  std::optional<NoiseConfig> noise;
  std::optional<std::size_t> spectrum_rank;
  std::optional<std::size_t> cushion_layer;
  std::optional<CompressSection> compress;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  DataConfig data;
  // model; ignored when a checkpoint is loaded
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
  std::size_t tap = 0;
  bool has_model = false;
  TrainConfig train;
  bool has_train = false;
  std::vector<RegularizerConfig> regularizers;
  std::optional<BottleneckConfig> bottleneck;
  MetricsConfig metrics;
  std::optional<std::string> checkpoint_in;
};

namespace detail {

using json = nlohmann::ordered_json;

[[noreturn]] inline void config_fail(const std::string& where,
                                     const std::string& what) {
  throw ConfigError("config: " + where + ": " + what);
}

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

inline void check_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* name : allowed) {
      if (key == name) {
        known = true;
        break;
      }
    }
    if (!known) config_fail(where, "unknown field '" + key + "'");
  }
}

inline const json* find(const json& j, const char* key) {
  if (!j.is_object()) return nullptr;
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline const json& require(const json& j, const std::string& where,
                           const char* key) {
  if (!j.is_object()) config_fail(where, "expected an object");
  const json* v = find(j, key);
  if (v == nullptr) config_fail(join_path(where, key), "missing");
  return *v;
}

inline double as_double(const json& v, const std::string& where) {
  if (!v.is_number()) config_fail(where, "expected a number");
  return v.get<double>();
}

inline std::uint64_t as_u64(const json& v, const std::string& where) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  config_fail(where, "expected an unsigned integer");
}

inline std::size_t as_size(const json& v, const std::string& where) {
  return static_cast<std::size_t>(as_u64(v, where));
}

inline bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) config_fail(where, "expected a boolean");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) config_fail(where, "expected a string");
  return v.get<std::string>();
}

inline DataConfig parse_data(const json& j, const std::string& where) {
  DataConfig cfg;
  check_keys(j, where,
             {"kind", "classes", "dim", "per_class", "separation",
              "train_per_class", "train_path", "test_path", "rescale"});
  cfg.kind = as_string(require(j, where, "kind"), join_path(where, "kind"));
  if (cfg.kind == "blobs") {
    cfg.classes = as_size(require(j, where, "classes"), join_path(where, "classes"));
    cfg.dim = as_size(require(j, where, "dim"), join_path(where, "dim"));
    cfg.per_class =
        as_size(require(j, where, "per_class"), join_path(where, "per_class"));
    cfg.separation = as_double(require(j, where, "separation"),
                               join_path(where, "separation"));
    cfg.train_per_class = as_size(require(j, where, "train_per_class"),
                                  join_path(where, "train_per_class"));
    if (cfg.train_per_class >= cfg.per_class) {
      config_fail(join_path(where, "train_per_class"),
                  "must be below per_class");
    }
  } else if (cfg.kind == "csv") {
    cfg.train_path = as_string(require(j, where, "train_path"),
                               join_path(where, "train_path"));
    cfg.test_path = as_string(require(j, where, "test_path"),
                              join_path(where, "test_path"));
    if (const json* v = find(j, "rescale")) {
      cfg.rescale = as_bool(*v, join_path(where, "rescale"));
    }
  } else {
    config_fail(join_path(where, "kind"), "expected 'blobs' or 'csv'");
  }
  return cfg;
}

inline NystromConfig parse_nystrom(const json& j, const std::string& where,
                                   bool& seed_set) {
  NystromConfig cfg;
  check_keys(j, where,
             {"sample_count", "ensemble_runs", "smoothing_delta",
              "max_smoothing_attempts", "rng_seed", "svd_max_sweeps"});
  if (const json* v = find(j, "sample_count")) {
    cfg.sample_count = as_size(*v, join_path(where, "sample_count"));
  }
  if (const json* v = find(j, "ensemble_runs")) {
    cfg.ensemble_runs = as_size(*v, join_path(where, "ensemble_runs"));
  }
  if (const json* v = find(j, "smoothing_delta")) {
    cfg.smoothing_delta = as_double(*v, join_path(where, "smoothing_delta"));
  }
  if (const json* v = find(j, "max_smoothing_attempts")) {
    cfg.max_smoothing_attempts =
        as_size(*v, join_path(where, "max_smoothing_attempts"));
  }
  if (const json* v = find(j, "rng_seed")) {
    cfg.rng_seed = as_u64(*v, join_path(where, "rng_seed"));
    seed_set = true;
  }
  if (const json* v = find(j, "svd_max_sweeps")) {
    cfg.svd_max_sweeps = as_size(*v, join_path(where, "svd_max_sweeps"));
  }
  return cfg;
}

inline RegularizerConfig parse_regularizer(const json& j,
                                           const std::string& where) {
  RegularizerConfig cfg;
  check_keys(j, where,
             {"tap", "rank", "lambda1", "lambda2", "w_learning_rate",
              "projection_period", "backend", "nystrom"});
  cfg.tap = as_size(require(j, where, "tap"), join_path(where, "tap"));
  cfg.rank = as_size(require(j, where, "rank"), join_path(where, "rank"));
  if (const json* v = find(j, "lambda1")) {
    cfg.lambda1 = as_double(*v, join_path(where, "lambda1"));
  }
  if (const json* v = find(j, "lambda2")) {
    cfg.lambda2 = as_double(*v, join_path(where, "lambda2"));
  }
  if (const json* v = find(j, "w_learning_rate"); v != nullptr && !v->is_null()) {
    cfg.w_learning_rate = as_double(*v, join_path(where, "w_learning_rate"));
  }
  if (const json* v = find(j, "projection_period")) {
    cfg.projection_period = as_size(*v, join_path(where, "projection_period"));
  }
  if (const json* v = find(j, "backend")) {
    try {
      cfg.backend = parse_backend(as_string(*v, join_path(where, "backend")));
    } catch (const std::invalid_argument& e) {
      config_fail(join_path(where, "backend"), e.what());
    }
  }
  if (const json* v = find(j, "nystrom")) {
    cfg.nystrom =
        parse_nystrom(*v, join_path(where, "nystrom"), cfg.nystrom_seed_set);
  }
  return cfg;
}

inline TrainConfig parse_train(const json& j, const std::string& where) {
  TrainConfig cfg;
  check_keys(j, where,
             {"epochs", "batch_size", "lr_schedule", "pretrain_epochs"});
  cfg.epochs = as_size(require(j, where, "epochs"), join_path(where, "epochs"));
  if (const json* v = find(j, "batch_size")) {
    cfg.batch_size = as_size(*v, join_path(where, "batch_size"));
  }
  if (const json* v = find(j, "pretrain_epochs")) {
    cfg.pretrain_epochs = as_size(*v, join_path(where, "pretrain_epochs"));
  }
  const json& schedule = require(j, where, "lr_schedule");
  std::string spath = join_path(where, "lr_schedule");
  if (!schedule.is_array() || schedule.empty()) {
    config_fail(spath, "expected a non-empty array of [epoch, rate] pairs");
  }
  cfg.lr_schedule.clear();
  for (const json& entry : schedule) {
    if (!entry.is_array() || entry.size() != 2) {
      config_fail(spath, "expected [epoch, rate] pairs");
    }
    cfg.lr_schedule.push_back(
        {as_size(entry[0], spath), as_double(entry[1], spath)});
  }
  return cfg;
}

inline MetricsConfig parse_metrics(const json& j, const std::string& where) {
  MetricsConfig cfg;
  check_keys(j, where, {"attack", "noise", "spectrum", "cushion", "compress"});
  if (const json* v = find(j, "attack")) {
    std::string path = join_path(where, "attack");
    check_keys(*v, path,
               {"kind", "epsilon", "alpha", "max_iters", "overshoot",
                "search_min_epsilon"});
    AttackSection section;
    if (const json* f = find(*v, "kind")) {
      try {
        section.attack.kind = parse_attack_kind(as_string(*f, join_path(path, "kind")));
      } catch (const std::invalid_argument& e) {
        config_fail(join_path(path, "kind"), e.what());
      }
    }
    if (const json* f = find(*v, "epsilon")) {
      section.attack.epsilon = as_double(*f, join_path(path, "epsilon"));
    }
    if (const json* f = find(*v, "alpha")) {
      section.attack.alpha = as_double(*f, join_path(path, "alpha"));
    }
    if (const json* f = find(*v, "max_iters")) {
      section.attack.max_iters = as_size(*f, join_path(path, "max_iters"));
    }
    if (const json* f = find(*v, "overshoot")) {
      section.attack.overshoot = as_double(*f, join_path(path, "overshoot"));
    }
    if (const json* f = find(*v, "search_min_epsilon")) {
      section.search_min_epsilon =
          as_bool(*f, join_path(path, "search_min_epsilon"));
    }
    cfg.attack = section;
  }
  if (const json* v = find(j, "noise")) {
    std::string path = join_path(where, "noise");
    check_keys(*v, path, {"pixel_prob", "sigma"});
    NoiseConfig noise;
    if (const json* f = find(*v, "pixel_prob")) {
      noise.pixel_prob = as_double(*f, join_path(path, "pixel_prob"));
    }
    if (const json* f = find(*v, "sigma")) {
      noise.sigma = as_double(*f, join_path(path, "sigma"));
    }
    cfg.noise = noise;
  }
  if (const json* v = find(j, "spectrum")) {
    std::string path = join_path(where, "spectrum");
    check_keys(*v, path, {"rank"});
    cfg.spectrum_rank = as_size(require(*v, path, "rank"), join_path(path, "rank"));
  }
  if (const json* v = find(j, "cushion")) {
    std::string path = join_path(where, "cushion");
    check_keys(*v, path, {"layer"});
    cfg.cushion_layer = as_size(require(*v, path, "layer"), join_path(path, "layer"));
  }
  if (const json* v = find(j, "compress")) {
    std::string path = join_path(where, "compress");
    check_keys(*v, path, {"pca_dims", "epochs", "l2", "eta0", "alpha_decay"});
    CompressSection section;
    const json& dims = require(*v, path, "pca_dims");
    std::string dpath = join_path(path, "pca_dims");
    if (!dims.is_array() || dims.empty()) {
      config_fail(dpath, "expected a non-empty array");
    }
    for (const json& d : dims) section.pca_dims.push_back(as_size(d, dpath));
    if (const json* f = find(*v, "epochs")) {
      section.margin.epochs = as_size(*f, join_path(path, "epochs"));
    }
    if (const json* f = find(*v, "l2")) {
      section.margin.l2_coeff = as_double(*f, join_path(path, "l2"));
    }
    if (const json* f = find(*v, "eta0")) {
      section.margin.eta0 = as_double(*f, join_path(path, "eta0"));
    }
    if (const json* f = find(*v, "alpha_decay")) {
      section.margin.alpha_decay = as_double(*f, join_path(path, "alpha_decay"));
    }
    cfg.compress = section;
  }
  return cfg;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(
    const nlohmann::ordered_json& j) {
  using detail::as_size;
  using detail::as_string;
  using detail::as_u64;
  using detail::config_fail;
  using detail::find;
  using detail::join_path;
  using detail::require;

  if (!j.is_object()) config_fail("", "expected a top-level object");
  detail::check_keys(j, "",
                     {"name", "seed", "data", "model", "train", "regularizers",
                      "bottleneck", "metrics", "checkpoint"});

  ExperimentConfig cfg;
  if (const auto* v = find(j, "name")) cfg.name = as_string(*v, "name");
  cfg.seed = as_u64(require(j, "", "seed"), "seed");
  cfg.data = detail::parse_data(require(j, "", "data"), "data");

  if (const auto* v = find(j, "checkpoint")) {
    cfg.checkpoint_in = as_string(*v, "checkpoint");
  }

  if (const auto* v = find(j, "model")) {
    detail::check_keys(*v, "model", {"hidden", "activation", "tap"});
    const auto& hidden = require(*v, "model", "hidden");
    if (!hidden.is_array() || hidden.empty()) {
      config_fail("model.hidden", "expected a non-empty array");
    }
    for (const auto& h : hidden) cfg.hidden.push_back(as_size(h, "model.hidden"));
    if (const auto* a = find(*v, "activation")) {
      try {
        cfg.activation = parse_activation(as_string(*a, "model.activation"));
      } catch (const std::invalid_argument& e) {
        config_fail("model.activation", e.what());
      }
    }
    cfg.tap = as_size(require(*v, "model", "tap"), "model.tap");
    cfg.has_model = true;
  }

  if (const auto* v = find(j, "train")) {
    cfg.train = detail::parse_train(*v, "train");
    cfg.has_train = true;
  }

  if (const auto* v = find(j, "regularizers")) {
    if (!v->is_array()) config_fail("regularizers", "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      cfg.regularizers.push_back(detail::parse_regularizer(
          (*v)[i], "regularizers[" + std::to_string(i) + "]"));
    }
  }

  if (const auto* v = find(j, "bottleneck")) {
    detail::check_keys(*v, "bottleneck", {"position", "rank"});
    BottleneckConfig b;
    b.position = as_size(require(*v, "bottleneck", "position"),
                         "bottleneck.position");
    b.rank = as_size(require(*v, "bottleneck", "rank"), "bottleneck.rank");
    cfg.bottleneck = b;
  }

  if (const auto* v = find(j, "metrics")) {
    cfg.metrics = detail::parse_metrics(*v, "metrics");
  }

  if (!cfg.checkpoint_in.has_value()) {
    if (!cfg.has_model) config_fail("model", "missing (no checkpoint given)");
    if (!cfg.has_train) config_fail("train", "missing (no checkpoint given)");
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config: cannot open " + path.string());
  }
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

struct ExperimentResult {
  nlohmann::ordered_json results;
  std::vector<EpochStats> history;
  Checkpoint checkpoint;
  Dataset train;
  Dataset test;
};

namespace detail {

inline std::pair<Dataset, Dataset> stage_data(const ExperimentConfig& cfg) {
  if (cfg.data.kind == "blobs") {
    Dataset full = gen_blobs(cfg.data.classes, cfg.data.dim,
                             cfg.data.per_class, cfg.data.separation,
                             derive_seed(cfg.seed, kSeedStreamData));
    return split_per_class(full, cfg.data.train_per_class,
                           derive_seed(cfg.seed, kSeedStreamSplit));
  }
  Dataset train = load_csv(cfg.data.train_path, cfg.data.rescale);
  Dataset test = load_csv(cfg.data.test_path, cfg.data.rescale);
  if (train.features.cols() != test.features.cols()) {
    throw std::runtime_error("experiment: train and test widths differ");
  }
  std::size_t classes = std::max(train.class_count, test.class_count);
  train.class_count = classes;
  test.class_count = classes;
  return {std::move(train), std::move(test)};
}

}  // namespace detail

// Runs the configured pipeline: data, then either training (with any
// regularizer hooks attached) or a checkpoint load, then every requested
// metric. All results land in one json document.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;
  auto [train_data, test_data] = detail::stage_data(cfg);

  Network net;
  std::vector<std::pair<std::size_t, LRLayerState>> lr_states;

  if (cfg.checkpoint_in.has_value()) {
    Checkpoint loaded = load_checkpoint(*cfg.checkpoint_in);
    net = std::move(loaded.net);
    lr_states = std::move(loaded.lr_states);
    if (net.input_dim() != train_data.features.cols()) {
      throw std::runtime_error(
          "experiment: checkpoint input width does not match the data");
    }
    if (net.class_count < train_data.class_count) {
      throw std::runtime_error(
          "experiment: checkpoint has fewer classes than the data");
    }
  } else {
    net = make_mlp(train_data.features.cols(), cfg.hidden,
                   train_data.class_count, cfg.activation,
                   derive_seed(cfg.seed, kSeedStreamInit));
    if (cfg.bottleneck.has_value()) {
      net = with_bottleneck(net, cfg.bottleneck->position, cfg.bottleneck->rank,
                            derive_seed(cfg.seed, kSeedStreamBottleneck));
    }
    if (cfg.tap >= net.layers.size()) {
      throw std::runtime_error("experiment: model.tap is out of range");
    }
    net.tap_index = cfg.tap;

    std::vector<LRLayerState> states;
    states.reserve(cfg.regularizers.size());
    std::vector<TapHook> hooks;
    for (std::size_t i = 0; i < cfg.regularizers.size(); ++i) {
      const RegularizerConfig& reg = cfg.regularizers[i];
      if (reg.tap >= net.layers.size()) {
        throw std::runtime_error("experiment: regularizer tap is out of range");
      }
      std::size_t width = layer_output_dim(net.layers[reg.tap]);
      LRLayerState state = make_lr_state(width, reg.rank);
      state.lambda1 = reg.lambda1;
      state.lambda2 = reg.lambda2;
      state.w_learning_rate = reg.w_learning_rate;
      state.projection_period = reg.projection_period;
      state.backend = reg.backend;
      state.nystrom = reg.nystrom;
      if (!reg.nystrom_seed_set) {
        state.nystrom.rng_seed = derive_seed(cfg.seed, kSeedStreamRegBase + i);
      }
      states.push_back(std::move(state));
      hooks.push_back(make_lr_hook(states.back(), reg.tap));
    }

    TrainConfig tc = cfg.train;
    tc.rng_seed = derive_seed(cfg.seed, kSeedStreamTrain);
    result.history = sgd_train(net, train_data.features, train_data.labels,
                               tc, hooks);
    for (std::size_t i = 0; i < states.size(); ++i) {
      lr_states.push_back({cfg.regularizers[i].tap, std::move(states[i])});
    }
  }

  detail::json res;
  res["name"] = cfg.name;
  res["seed"] = cfg.seed;
  res["variant"]["regularizers"] = lr_states.size();
  res["variant"]["bottleneck"] = cfg.bottleneck.has_value();
  res["data"]["train_rows"] = train_data.features.rows();
  res["data"]["test_rows"] = test_data.features.rows();
  res["data"]["dim"] = train_data.features.cols();
  res["data"]["classes"] = train_data.class_count;

  if (!result.history.empty()) {
    res["training"]["epochs"] = result.history.size();
    res["training"]["final_loss"] = result.history.back().loss;
    res["training"]["final_train_accuracy"] = result.history.back().accuracy;
  }

  res["accuracy"]["train"] = classification_accuracy(
      net, train_data.features, train_data.labels);
  res["accuracy"]["test"] =
      classification_accuracy(net, test_data.features, test_data.labels);

  for (const auto& [tap, state] : lr_states) {
    detail::json s;
    s["tap"] = tap;
    s["target_rank"] = state.target_rank;
    s["carrier_rank"] = matrix_rank(symmetrize(state.w_carrier));
    s["step_counter"] = state.step_counter;
    res["regularizer_states"].push_back(s);
  }

  if (cfg.metrics.spectrum_rank.has_value()) {
    Matrix embedded =
        forward_to_tap(net, test_data.features, net.tap_index);
    SpectrumReport report = spectrum(embedded);
    std::size_t rank = *cfg.metrics.spectrum_rank;
    res["spectrum"]["tap"] = net.tap_index;
    res["spectrum"]["rank"] = rank;
    res["spectrum"]["variance_ratio"] = variance_ratio(embedded, rank);
    res["spectrum"]["singular_values"] = report.singular_values;
  }

  if (cfg.metrics.noise.has_value()) {
    NoiseConfig noise = *cfg.metrics.noise;
    noise.rng_seed = derive_seed(cfg.seed, kSeedStreamNoise);
    res["noise"]["pixel_prob"] = noise.pixel_prob;
    res["noise"]["sigma"] = noise.sigma;
    res["noise"]["accuracy"] = noisy_accuracy(net, test_data, noise);

    Matrix perturbed = perturb_gaussian(test_data.features, noise);
    PropagationReport prop = perturbation_propagation(
        net, test_data.features, perturbed, net.tap_index);
    res["noise"]["propagation"]["mean_input_ratio"] = prop.mean_input_ratio;
    res["noise"]["propagation"]["mean_tap_ratio"] = prop.mean_tap_ratio;
    res["noise"]["propagation"]["mean_amplification"] =
        prop.mean_amplification;
    res["noise"]["propagation"]["used"] = prop.used;
    res["noise"]["propagation"]["skipped"] = prop.skipped;
  }

  if (cfg.metrics.attack.has_value()) {
    const AttackSection& section = *cfg.metrics.attack;
    std::vector<AttackResult> attacks =
        attack_dataset(net, test_data, section.attack);
    std::size_t fooled = 0;
    for (const AttackResult& r : attacks) {
      if (r.fooled) ++fooled;
    }
    res["attack"]["kind"] = attack_kind_name(section.attack.kind);
    res["attack"]["epsilon"] = section.attack.epsilon;
    res["attack"]["alpha"] = section.attack.alpha;
    res["attack"]["max_iters"] = section.attack.max_iters;
    res["attack"]["accuracy"] =
        1.0 - static_cast<double>(fooled) /
                  static_cast<double>(attacks.size());
    res["attack"]["mean_rho"] = mean_perturbation_ratio(attacks);
    if (section.attack.stop == StopMode::fixed_iterations) {
      AccuracyCurves curves = accuracy_curves(attacks);
      res["attack"]["curve_instantaneous"] = curves.instantaneous;
      res["attack"]["curve_cumulative"] = curves.cumulative;
    }
    if (section.search_min_epsilon) {
      MinPerturbation found =
          min_perturbation_search(net, test_data, section.attack);
      res["attack"]["min_epsilon"]["epsilon"] = found.epsilon;
      res["attack"]["min_epsilon"]["reached"] = found.reached;
      res["attack"]["min_epsilon"]["fooled_fraction"] = found.fooled_fraction;
    }
  }

  if (cfg.metrics.cushion_layer.has_value()) {
    CushionReport report =
        layer_cushion(net, test_data.features, *cfg.metrics.cushion_layer);
    res["cushion"]["layer"] = *cfg.metrics.cushion_layer;
    res["cushion"]["value"] = report.cushion;
    res["cushion"]["used"] = report.used;
    res["cushion"]["skipped"] = report.skipped;
  }

  if (cfg.metrics.compress.has_value()) {
    const CompressSection& section = *cfg.metrics.compress;
    MaxMarginConfig margin = section.margin;
    margin.rng_seed = derive_seed(cfg.seed, kSeedStreamMargin);
    res["compress"] = detail::json::array();
    for (std::size_t dim : section.pca_dims) {
      HybridModel hybrid =
          make_hybrid(net, net.tap_index, train_data.features,
                      train_data.labels, train_data.class_count, dim, margin);
      detail::json row;
      row["pca_dim"] = dim;
      row["accuracy"] = hybrid_accuracy(hybrid, test_data);
      row["head_params"] = head_parameter_count(hybrid.head);
      row["replaced_params"] = parameter_count(net, net.tap_index + 1);
      res["compress"].push_back(row);
    }
  }

  result.results = std::move(res);
  result.checkpoint.net = std::move(net);
  result.checkpoint.lr_states = std::move(lr_states);
  result.train = std::move(train_data);
  result.test = std::move(test_data);
  return result;
}

// Writes results.json, checkpoint.json, and (after a training run)
// series.csv with per-epoch loss and accuracy.
inline void write_experiment_outputs(const ExperimentResult& result,
                                     const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::ofstream results(out_dir / "results.json");
  if (!results) {
    throw std::runtime_error("experiment: cannot write results.json");
  }
  results << result.results.dump(2) << '\n';

  save_checkpoint(out_dir / "checkpoint.json", result.checkpoint);

  if (!result.history.empty()) {
    std::ofstream series(out_dir / "series.csv");
    if (!series) {
      throw std::runtime_error("experiment: cannot write series.csv");
    }
    series << "epoch,loss,accuracy\n";
    char buffer[64];
    for (std::size_t e = 0; e < result.history.size(); ++e) {
      series << e;
      std::snprintf(buffer, sizeof(buffer), "%.17g", result.history[e].loss);
      series << ',' << buffer;
      std::snprintf(buffer, sizeof(buffer), "%.17g",
                    result.history[e].accuracy);
      series << ',' << buffer << '\n';
    }
  }
}

}  // namespace lowrank
