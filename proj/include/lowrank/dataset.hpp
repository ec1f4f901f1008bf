#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lowrank/matrix.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

struct Dataset {
  Matrix features;  // one row per example
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::string name;
};

inline void validate(const Dataset& data) {
  if (data.features.rows() != data.labels.size()) {
    throw std::invalid_argument("dataset: features and labels disagree");
  }
  if (data.class_count == 0) {
    throw std::invalid_argument("dataset: class_count must be positive");
  }
  for (int label : data.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= data.class_count) {
      throw std::invalid_argument("dataset: label out of range");
    }
  }
}

// Rescales each feature column to [0, 1]; a (near-)constant column becomes
// 0.5 everywhere.
inline void min_max_rescale(Matrix& features) {
  for (std::size_t j = 0; j < features.cols(); ++j) {
    double lo = features(0, j);
    double hi = lo;
    for (std::size_t i = 1; i < features.rows(); ++i) {
      lo = std::min(lo, features(i, j));
      hi = std::max(hi, features(i, j));
    }
    double span = hi - lo;
    if (span < 1e-12) {
      for (std::size_t i = 0; i < features.rows(); ++i) features(i, j) = 0.5;
    } else {
      for (std::size_t i = 0; i < features.rows(); ++i) {
        features(i, j) = (features(i, j) - lo) / span;
      }
    }
  }
}

// Gaussian class blobs: every class mean sits at `separation` along its own
// random unit direction, samples add unit noise, and features end up
// min-max rescaled to [0, 1].
inline Dataset gen_blobs(std::size_t classes, std::size_t dim,
                         std::size_t per_class, double separation,
                         std::uint64_t seed) {
  if (classes < 2 || dim == 0 || per_class == 0) {
    throw std::invalid_argument("gen_blobs: need >= 2 classes and nonzero sizes");
  }
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw std::invalid_argument("gen_blobs: separation must be finite and >= 0");
  }
  Rng rng(seed);
  Dataset data;
  data.features = Matrix(classes * per_class, dim);
  data.labels.resize(classes * per_class);
  data.class_count = classes;
  data.name = "blobs";

  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> mean(dim);
    double norm = 0.0;
    while (norm < 1e-12) {
      for (double& v : mean) v = rng.normal();
      norm = norm2(mean);
    }
    for (double& v : mean) v *= separation / norm;

    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      double* out = data.features.row(row);
      for (std::size_t j = 0; j < dim; ++j) out[j] = mean[j] + rng.normal();
      data.labels[row] = static_cast<int>(c);
    }
  }
  min_max_rescale(data.features);
  return data;
}

// Per-class split: each class contributes its first train_per_class examples
// (under a seeded shuffle) to the train side and the rest to the test side.
inline std::pair<Dataset, Dataset> split_per_class(const Dataset& data,
                                                   std::size_t train_per_class,
                                                   std::uint64_t seed) {
  validate(data);
  std::vector<std::vector<std::size_t>> by_class(data.class_count);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() < train_per_class) {
      throw std::invalid_argument("split_per_class: class too small for split");
    }
    Rng rng(derive_seed(seed, c));
    rng.shuffle(by_class[c]);
    for (std::size_t k = 0; k < by_class[c].size(); ++k) {
      (k < train_per_class ? train_idx : test_idx).push_back(by_class[c][k]);
    }
  }
  Rng mix(derive_seed(seed, data.class_count));
  mix.shuffle(train_idx);
  mix.shuffle(test_idx);

  auto take = [&](const std::vector<std::size_t>& idx, const char* suffix) {
    Dataset part;
    part.features = Matrix(idx.size(), data.features.cols());
    part.labels.resize(idx.size());
    part.class_count = data.class_count;
    part.name = data.name + suffix;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      part.features.set_row(k, data.features.row_copy(idx[k]));
      part.labels[k] = data.labels[idx[k]];
    }
    return part;
  };
  return {take(train_idx, "-train"), take(test_idx, "-test")};
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(current);
      current.clear();
    } else if (ch != '\r') {
      current += ch;
    }
  }
  fields.push_back(current);
  return fields;
}

[[noreturn]] inline void csv_error(const std::filesystem::path& path,
                                   std::size_t row, const std::string& what) {
  std::ostringstream msg;
  msg << path.string() << " row " << row << ": " << what;
  throw std::runtime_error(msg.str());
}

}  // namespace detail

// Reads a labeled CSV whose header names one column "label"; every other
// column is a feature, kept in header order.
inline Dataset load_csv(const std::filesystem::path& path,
                        bool rescale = false) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_csv: cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    detail::csv_error(path, 1, "missing header");
  }
  std::vector<std::string> header = detail::split_fields(line);
  std::size_t label_col = header.size();
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == "label") {
      if (label_col != header.size()) {
        detail::csv_error(path, 1, "duplicate label column");
      }
      label_col = j;
    }
  }
  if (label_col == header.size()) {
    detail::csv_error(path, 1, "no column named label");
  }
  std::size_t dim = header.size() - 1;
  if (dim == 0) detail::csv_error(path, 1, "no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      detail::csv_error(path, row, "expected " + std::to_string(header.size()) +
                                       " fields, got " +
                                       std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      std::size_t pos = 0;
      if (j == label_col) {
        int label = 0;
        try {
          label = std::stoi(fields[j], &pos);
        } catch (const std::exception&) {
          detail::csv_error(path, row, "bad label '" + fields[j] + "'");
        }
        if (pos != fields[j].size() || label < 0) {
          detail::csv_error(path, row, "bad label '" + fields[j] + "'");
        }
        labels.push_back(label);
      } else {
        double value = 0.0;
        try {
          value = std::stod(fields[j], &pos);
        } catch (const std::exception&) {
          detail::csv_error(path, row, "bad value '" + fields[j] + "'");
        }
        if (pos != fields[j].size() || !std::isfinite(value)) {
          detail::csv_error(path, row, "bad value '" + fields[j] + "'");
        }
        values.push_back(value);
      }
    }
  }
  if (labels.empty()) detail::csv_error(path, row + 1, "no data rows");

  Dataset data;
  data.features = Matrix(labels.size(), dim);
  std::copy(values.begin(), values.end(), data.features.data().begin());
  data.labels = std::move(labels);
  data.class_count = static_cast<std::size_t>(
                         *std::max_element(data.labels.begin(), data.labels.end())) +
                     1;
  data.name = path.stem().string();
  if (rescale) min_max_rescale(data.features);
  validate(data);
  return data;
}

// Writes features as f0..f{d-1} plus a trailing label column, with enough
// digits that a reload reproduces every double bit for bit.
inline void save_csv(const std::filesystem::path& path, const Dataset& data) {
  validate(data);
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_csv: cannot open " + path.string());
  }
  for (std::size_t j = 0; j < data.features.cols(); ++j) {
    out << 'f' << j << ',';
  }
  out << "label\n";
  char buffer[64];
  for (std::size_t i = 0; i < data.features.rows(); ++i) {
    const double* row = data.features.row(i);
    for (std::size_t j = 0; j < data.features.cols(); ++j) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", row[j]);
      out << buffer << ',';
    }
    out << data.labels[i] << '\n';
  }
  if (!out) {
    throw std::runtime_error("save_csv: write failed for " + path.string());
  }
}

}  // namespace lowrank
