#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "lowrank/matrix.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

enum class Activation { relu, identity };

inline std::string activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + name);
}

struct DenseLayer {
  Matrix weights;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::relu;
};

// Linear layer whose weight is factor * factor^T, so its rank never exceeds
// the factor's column count. Square, no bias, identity activation.
struct BottleneckLayer {
  Matrix factor;  // dim x rank
};

using Layer = std::variant<DenseLayer, BottleneckLayer>;

inline std::size_t layer_input_dim(const Layer& layer) {
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    return dense->weights.cols();
  }
  return std::get<BottleneckLayer>(layer).factor.rows();
}

inline std::size_t layer_output_dim(const Layer& layer) {
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    return dense->weights.rows();
  }
  return std::get<BottleneckLayer>(layer).factor.rows();
}

inline Matrix effective_weight(const BottleneckLayer& layer) {
  return multiply_a_bt(layer.factor, layer.factor);
}

inline Matrix effective_weight(const Layer& layer) {
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    return dense->weights;
  }
  return effective_weight(std::get<BottleneckLayer>(layer));
}

// Feedforward classifier. activations[i] is the post-activation output of
// layers[i]; the last layer must be dense with identity activation and emit
// class_count logits. tap_index selects the activation the auxiliary
// regularizer watches and the boundary between the head (f-) and the rest.
struct Network {
  std::vector<Layer> layers;
  std::size_t tap_index = 0;
  std::size_t class_count = 0;

  std::size_t input_dim() const { return layer_input_dim(layers.front()); }
  std::size_t output_dim() const { return layer_output_dim(layers.back()); }
};

inline void validate(const Network& net) {
  if (net.layers.empty()) {
    throw std::invalid_argument("network: no layers");
  }
  for (std::size_t i = 0; i + 1 < net.layers.size(); ++i) {
    if (layer_output_dim(net.layers[i]) != layer_input_dim(net.layers[i + 1])) {
      throw std::invalid_argument("network: layer dimensions do not chain at " +
                                  std::to_string(i));
    }
  }
  if (net.tap_index >= net.layers.size()) {
    throw std::invalid_argument("network: tap_index out of range");
  }
  const auto* last = std::get_if<DenseLayer>(&net.layers.back());
  if (last == nullptr || last->activation != Activation::identity) {
    throw std::invalid_argument(
        "network: last layer must be dense with identity activation");
  }
  if (last->weights.rows() != net.class_count) {
    throw std::invalid_argument("network: last layer width != class_count");
  }
}

inline Matrix layer_forward(const Layer& layer, const Matrix& input) {
  if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
    Matrix pre = multiply_a_bt(input, dense->weights);
    for (std::size_t r = 0; r < pre.rows(); ++r) {
      double* row = pre.row(r);
      for (std::size_t c = 0; c < pre.cols(); ++c) row[c] += dense->bias[c];
    }
    if (dense->activation == Activation::relu) {
      for (double& v : pre.data()) v = v > 0.0 ? v : 0.0;
    }
    return pre;
  }
  const auto& bottleneck = std::get<BottleneckLayer>(layer);
  Matrix inner = multiply(input, bottleneck.factor);
  return multiply_a_bt(inner, bottleneck.factor);
}

struct ForwardTrace {
  std::vector<Matrix> activations;  // one per layer, post-activation
  const Matrix& logits() const { return activations.back(); }
};

inline ForwardTrace forward_with_taps(const Network& net, const Matrix& x) {
  if (x.cols() != net.input_dim()) {
    throw std::invalid_argument("forward: input width does not match network");
  }
  ForwardTrace trace;
  trace.activations.reserve(net.layers.size());
  const Matrix* current = &x;
  for (const Layer& layer : net.layers) {
    trace.activations.push_back(layer_forward(layer, *current));
    current = &trace.activations.back();
  }
  return trace;
}

// Activations at the tap: the output of the network head f-.
inline Matrix forward_to_tap(const Network& net, const Matrix& x,
                             std::size_t tap) {
  if (tap >= net.layers.size()) {
    throw std::invalid_argument("forward_to_tap: tap out of range");
  }
  Matrix current = x;
  for (std::size_t i = 0; i <= tap; ++i) {
    current = layer_forward(net.layers[i], current);
  }
  return current;
}

inline std::vector<int> predict_labels(const Matrix& logits) {
  std::vector<int> labels(logits.rows(), 0);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (row[c] > row[best]) best = c;  // ties keep the lowest index
    }
    labels[r] = static_cast<int>(best);
  }
  return labels;
}

inline std::vector<int> predict(const Network& net, const Matrix& x) {
  return predict_labels(forward_with_taps(net, x).logits());
}

inline double classification_accuracy(const Network& net, const Matrix& x,
                                      const std::vector<int>& labels) {
  if (x.rows() != labels.size() || labels.empty()) {
    throw std::invalid_argument("classification_accuracy: bad labels");
  }
  std::vector<int> got = predict(net, x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (got[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// MLP builder: hidden layers with the given activation, final identity layer
// with class_count outputs. Weights are fan-in scaled uniform, biases zero.
// The default tap is the last hidden activation.
inline Network make_mlp(std::size_t input_dim,
                        const std::vector<std::size_t>& hidden,
                        std::size_t class_count, Activation activation,
                        std::uint64_t seed) {
  if (input_dim == 0 || class_count == 0) {
    throw std::invalid_argument("make_mlp: zero dimension");
  }
  Rng rng(seed);
  Network net;
  net.class_count = class_count;
  std::size_t fan_in = input_dim;
  auto init_dense = [&](std::size_t out, Activation act) {
    DenseLayer layer;
    layer.weights = Matrix(out, fan_in);
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : layer.weights.data()) v = rng.uniform(-limit, limit);
    layer.bias.assign(out, 0.0);
    layer.activation = act;
    net.layers.emplace_back(std::move(layer));
    fan_in = out;
  };
  for (std::size_t width : hidden) init_dense(width, activation);
  init_dense(class_count, Activation::identity);
  net.tap_index = hidden.empty() ? 0 : hidden.size() - 1;
  validate(net);
  return net;
}

// Inserts a bottleneck of the given rank right after layer `position`.
inline Network with_bottleneck(const Network& net, std::size_t position,
                               std::size_t rank, std::uint64_t seed) {
  if (position >= net.layers.size()) {
    throw std::invalid_argument("with_bottleneck: position out of range");
  }
  std::size_t dim = layer_output_dim(net.layers[position]);
  if (rank == 0 || rank > dim) {
    throw std::invalid_argument("with_bottleneck: bad rank");
  }
  Rng rng(seed);
  BottleneckLayer layer;
  layer.factor = Matrix(dim, rank);
  double limit = std::sqrt(6.0 / static_cast<double>(dim));
  for (double& v : layer.factor.data()) v = rng.uniform(-limit, limit);
  Network out = net;
  out.layers.insert(out.layers.begin() + static_cast<std::ptrdiff_t>(position) + 1,
                    std::move(layer));
  validate(out);
  return out;
}

inline std::size_t parameter_count(const Network& net,
                                   std::size_t from_layer = 0) {
  std::size_t count = 0;
  for (std::size_t i = from_layer; i < net.layers.size(); ++i) {
    if (const auto* dense = std::get_if<DenseLayer>(&net.layers[i])) {
      count += dense->weights.size() + dense->bias.size();
    } else {
      count += std::get<BottleneckLayer>(net.layers[i]).factor.size();
    }
  }
  return count;
}

}  // namespace lowrank
