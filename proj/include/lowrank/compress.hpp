#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lowrank/attacks.hpp"
#include "lowrank/dataset.hpp"
#include "lowrank/matrix.hpp"
#include "lowrank/network.hpp"
#include "lowrank/pca.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

struct MaxMarginConfig {
  double eta0 = 0.0;          // 0 picks 1 / (l2_coeff * n)
  double alpha_decay = -1.0;  // negative picks l2_coeff
  double l2_coeff = 0.01;
  std::size_t epochs = 5;
  std::uint64_t rng_seed = 0;
};

struct LinearClassifier {
  Matrix weights;  // classes x dim
  std::vector<double> bias;
};

// One-vs-rest hinge-loss classifiers fit by decaying-rate SGD. Each class
// trains on its own seeded shuffle, so results do not depend on class order.
inline LinearClassifier train_max_margin(const Matrix& features,
                                         const std::vector<int>& labels,
                                         std::size_t class_count,
                                         const MaxMarginConfig& cfg = {}) {
  if (features.rows() != labels.size() || labels.empty()) {
    throw std::invalid_argument("train_max_margin: features and labels disagree");
  }
  if (class_count < 2) {
    throw std::invalid_argument("train_max_margin: need at least two classes");
  }
  if (cfg.epochs == 0 || cfg.l2_coeff <= 0.0) {
    throw std::invalid_argument("train_max_margin: bad config");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= class_count) {
      throw std::invalid_argument("train_max_margin: label out of range");
    }
  }

  std::size_t n = features.rows();
  std::size_t dim = features.cols();
  double eta0 = cfg.eta0 > 0.0
                    ? cfg.eta0
                    : 1.0 / (cfg.l2_coeff * static_cast<double>(n));
  double alpha = cfg.alpha_decay >= 0.0 ? cfg.alpha_decay : cfg.l2_coeff;

  LinearClassifier clf;
  clf.weights = Matrix(class_count, dim);
  clf.bias.assign(class_count, 0.0);

  std::vector<std::size_t> order(n);
  for (std::size_t c = 0; c < class_count; ++c) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(cfg.rng_seed, c));
    double* w = clf.weights.row(c);
    double step_count = 0.0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t k = 0; k < n; ++k, step_count += 1.0) {
        double eta = eta0 / (1.0 + alpha * step_count);
        std::size_t i = order[k];
        const double* x = features.row(i);
        double y = labels[i] == static_cast<int>(c) ? 1.0 : -1.0;
        double margin = clf.bias[c];
        for (std::size_t j = 0; j < dim; ++j) margin += w[j] * x[j];
        margin *= y;

        double shrink = 1.0 - eta * cfg.l2_coeff;
        for (std::size_t j = 0; j < dim; ++j) w[j] *= shrink;
        if (margin < 1.0) {
          for (std::size_t j = 0; j < dim; ++j) w[j] += eta * y * x[j];
          clf.bias[c] += eta * y;
        }
      }
    }
  }
  return clf;
}

inline std::vector<int> linear_predict(const LinearClassifier& clf,
                                       const Matrix& features) {
  if (features.cols() != clf.weights.cols()) {
    throw std::invalid_argument("linear_predict: width mismatch");
  }
  Matrix scores = multiply_a_bt(features, clf.weights);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    for (std::size_t c = 0; c < scores.cols(); ++c) {
      scores(i, c) += clf.bias[c];
    }
  }
  return predict_labels(scores);
}

inline double linear_accuracy(const LinearClassifier& clf,
                              const Matrix& features,
                              const std::vector<int>& labels) {
  std::vector<int> got = linear_predict(clf, features);
  if (got.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("linear_accuracy: bad labels");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (got[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline std::size_t head_parameter_count(const LinearClassifier& clf) {
  return clf.weights.size() + clf.bias.size();
}

// Embeddings a network exposes at its tap.
inline Matrix extract_embeddings(const Network& net, const Matrix& features,
                                 std::size_t tap) {
  return forward_to_tap(net, features, tap);
}

// A frozen network trunk up to the tap, an optional PCA squeeze, and a
// small max-margin head replacing everything after the tap.
struct HybridModel {
  Network base;
  std::size_t tap = 0;
  bool use_pca = false;
  PcaModel pca;
  LinearClassifier head;
};

inline HybridModel make_hybrid(const Network& net, std::size_t tap,
                               const Matrix& train_features,
                               const std::vector<int>& labels,
                               std::size_t class_count, std::size_t pca_dim,
                               const MaxMarginConfig& cfg = {}) {
  if (tap >= net.layers.size()) {
    throw std::invalid_argument("make_hybrid: tap out of range");
  }
  HybridModel model;
  model.base = net;
  model.tap = tap;
  Matrix embedded = extract_embeddings(net, train_features, tap);
  if (pca_dim > 0) {
    if (pca_dim > embedded.cols()) {
      throw std::invalid_argument("make_hybrid: pca_dim exceeds tap width");
    }
    model.use_pca = true;
    auto [pca, reduced] = pca_fit_transform(embedded, pca_dim);
    model.pca = std::move(pca);
    embedded = std::move(reduced);
  }
  model.head = train_max_margin(embedded, labels, class_count, cfg);
  return model;
}

inline std::vector<int> hybrid_predict(const HybridModel& model,
                                       const Matrix& features) {
  Matrix embedded = extract_embeddings(model.base, features, model.tap);
  if (model.use_pca) embedded = pca_transform(model.pca, embedded);
  return linear_predict(model.head, embedded);
}

inline double hybrid_accuracy(const HybridModel& model, const Dataset& data) {
  validate(data);
  std::vector<int> got = hybrid_predict(model, data.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (got[i] == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(data.labels.size());
}

// Accuracy of the hybrid on adversarial examples crafted against `source`
// (typically the full source network the hybrid was carved from).
inline double hybrid_adversarial_accuracy(const HybridModel& model,
                                          const Network& source,
                                          const Dataset& data,
                                          const AttackConfig& cfg) {
  validate(data);
  std::size_t correct = 0;
  Matrix adversarial(data.features.rows(), data.features.cols());
  for (std::size_t i = 0; i < data.features.rows(); ++i) {
    AttackResult r =
        run_attack(source, data.features.row_copy(i), data.labels[i], cfg);
    adversarial.set_row(i, r.x_adv);
  }
  std::vector<int> got = hybrid_predict(model, adversarial);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (got[i] == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(data.labels.size());
}

struct CompressionRow {
  std::size_t pca_dim = 0;  // 0 means raw tap embeddings
  double accuracy_a = 0.0;
  double accuracy_b = 0.0;
  std::size_t head_params = 0;
  std::size_t replaced_params = 0;  // parameters past the tap in the base net
};

// Side-by-side hybrid accuracy for two networks of identical shape across a
// sweep of embedding sizes.
inline std::vector<CompressionRow> compression_eval(
    const Network& net_a, const Network& net_b, const Dataset& train,
    const Dataset& test, const std::vector<std::size_t>& pca_dims,
    std::size_t tap, const MaxMarginConfig& cfg = {}) {
  validate(train);
  validate(test);
  std::vector<CompressionRow> rows;
  for (std::size_t dim : pca_dims) {
    HybridModel hybrid_a = make_hybrid(net_a, tap, train.features,
                                       train.labels, train.class_count, dim, cfg);
    HybridModel hybrid_b = make_hybrid(net_b, tap, train.features,
                                       train.labels, train.class_count, dim, cfg);
    CompressionRow row;
    row.pca_dim = dim;
    row.accuracy_a = hybrid_accuracy(hybrid_a, test);
    row.accuracy_b = hybrid_accuracy(hybrid_b, test);
    row.head_params = head_parameter_count(hybrid_a.head);
    row.replaced_params = parameter_count(net_a, tap + 1);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace lowrank
