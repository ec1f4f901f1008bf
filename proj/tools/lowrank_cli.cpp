#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <utility>

#include <CLI11.hpp>

#include "lowrank/experiment.hpp"

namespace {

enum class Mode { exp, train, attack, noise, spectrum, cushion, compress };

struct Args {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Args& args) {
  cmd->add_option("--config", args.config, "experiment config (json)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out, "output directory (default: out)");
  cmd->add_option("--seed", args.seed, "override the config's master seed");
}

[[noreturn]] void reject(const std::string& what) {
  throw lowrank::ConfigError("config: " + what);
}

// Each utility subcommand narrows the config to one stage; exp runs it all.
lowrank::ExperimentConfig shape_for_mode(lowrank::ExperimentConfig cfg,
                                         Mode mode) {
  if (mode == Mode::exp) return cfg;
  if (mode == Mode::train) {
    if (cfg.checkpoint_in.has_value()) {
      reject("train runs from scratch but a checkpoint is named");
    }
    cfg.metrics = {};
    return cfg;
  }
  if (!cfg.checkpoint_in.has_value()) {
    reject("this subcommand measures a trained model; name a checkpoint");
  }
  lowrank::MetricsConfig keep;
  switch (mode) {
    case Mode::attack:
      if (!cfg.metrics.attack.has_value()) reject("metrics.attack is missing");
      keep.attack = cfg.metrics.attack;
      break;
    case Mode::noise:
      if (!cfg.metrics.noise.has_value()) reject("metrics.noise is missing");
      keep.noise = cfg.metrics.noise;
      break;
    case Mode::spectrum:
      if (!cfg.metrics.spectrum_rank.has_value()) {
        reject("metrics.spectrum is missing");
      }
      keep.spectrum_rank = cfg.metrics.spectrum_rank;
      break;
    case Mode::cushion:
      if (!cfg.metrics.cushion_layer.has_value()) {
        reject("metrics.cushion is missing");
      }
      keep.cushion_layer = cfg.metrics.cushion_layer;
      break;
    case Mode::compress:
      if (!cfg.metrics.compress.has_value()) {
        reject("metrics.compress is missing");
      }
      keep.compress = cfg.metrics.compress;
      break;
    default:
      break;
  }
  cfg.metrics = std::move(keep);
  return cfg;
}

void print_summary(const nlohmann::ordered_json& res, const std::string& out) {
  std::printf("name: %s\n", res["name"].get<std::string>().c_str());
  std::printf("seed: %llu\n",
              static_cast<unsigned long long>(res["seed"].get<std::uint64_t>()));
  std::printf("accuracy: train %.4f, test %.4f\n",
              res["accuracy"]["train"].get<double>(),
              res["accuracy"]["test"].get<double>());
  if (res.contains("attack")) {
    std::printf("attack (%s, eps %g): accuracy %.4f, mean rho %.4f\n",
                res["attack"]["kind"].get<std::string>().c_str(),
                res["attack"]["epsilon"].get<double>(),
                res["attack"]["accuracy"].get<double>(),
                res["attack"]["mean_rho"].get<double>());
  }
  if (res.contains("noise")) {
    std::printf("noise (p %g, sigma %g): accuracy %.4f\n",
                res["noise"]["pixel_prob"].get<double>(),
                res["noise"]["sigma"].get<double>(),
                res["noise"]["accuracy"].get<double>());
  }
  if (res.contains("spectrum")) {
    std::printf("spectrum (tap %zu): variance ratio %.6f at rank %zu\n",
                res["spectrum"]["tap"].get<std::size_t>(),
                res["spectrum"]["variance_ratio"].get<double>(),
                res["spectrum"]["rank"].get<std::size_t>());
  }
  if (res.contains("cushion")) {
    std::printf("cushion (layer %zu): %.6f\n",
                res["cushion"]["layer"].get<std::size_t>(),
                res["cushion"]["value"].get<double>());
  }
  if (res.contains("compress")) {
    for (const auto& row : res["compress"]) {
      std::printf("compress (pca dim %zu): accuracy %.4f, head %zu params\n",
                  row["pca_dim"].get<std::size_t>(),
                  row["accuracy"].get<double>(),
                  row["head_params"].get<std::size_t>());
    }
  }
  std::printf("outputs: %s\n", out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "trains small classifiers with a low-rank activation regularizer and "
      "measures robustness and compressibility"};
  app.require_subcommand(1);

  Args args;
  CLI::App* cmd_exp = app.add_subcommand(
      "exp", "run the full configured experiment: train, then every metric");
  CLI::App* cmd_train =
      app.add_subcommand("train", "train only; write checkpoint and series");
  CLI::App* cmd_attack = app.add_subcommand(
      "attack", "gradient attacks against a checkpointed model");
  CLI::App* cmd_noise = app.add_subcommand(
      "noise", "salt-style gaussian noise accuracy of a checkpointed model");
  CLI::App* cmd_spectrum = app.add_subcommand(
      "spectrum", "singular spectrum of a checkpointed model's tap activations");
  CLI::App* cmd_cushion = app.add_subcommand(
      "cushion", "worst-case layer cushion of a checkpointed model");
  CLI::App* cmd_compress = app.add_subcommand(
      "compress", "swap a checkpointed model's tail for a max-margin head");
  for (CLI::App* cmd : {cmd_exp, cmd_train, cmd_attack, cmd_noise,
                        cmd_spectrum, cmd_cushion, cmd_compress}) {
    add_common(cmd, args);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Mode mode = Mode::exp;
  if (cmd_train->parsed()) mode = Mode::train;
  if (cmd_attack->parsed()) mode = Mode::attack;
  if (cmd_noise->parsed()) mode = Mode::noise;
  if (cmd_spectrum->parsed()) mode = Mode::spectrum;
  if (cmd_cushion->parsed()) mode = Mode::cushion;
  if (cmd_compress->parsed()) mode = Mode::compress;

  try {
    lowrank::ExperimentConfig cfg = lowrank::load_experiment_config(args.config);
    if (args.seed.has_value()) cfg.seed = *args.seed;
    cfg = shape_for_mode(std::move(cfg), mode);
    lowrank::ExperimentResult result = lowrank::run_experiment(cfg);
    lowrank::write_experiment_outputs(result, args.out);
    print_summary(result.results, args.out);
  } catch (const lowrank::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
