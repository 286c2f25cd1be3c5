#pragma once

// Datasets: in-memory representation, CSV ingestion, stratified splits,
// synthetic Gaussian blobs with label-noise outliers, and the labeled /
// unlabeled pool bookkeeping used by the simulator.

#include "alsim/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

namespace alsim {

/// Feature matrix, labels and a train/test partition.
///
/// A freshly loaded or generated dataset has every index in `train_indices`
/// and an empty test partition; `split` produces the partitioned copy.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int class_count = 0;
  IndexList train_indices;
  IndexList test_indices;

  Index size() const { return labels.size(); }
  Index dim() const { return static_cast<Index>(features.cols()); }

  /// Throws Error when an invariant is broken.
  void validate() const {
    if (static_cast<Index>(features.rows()) != labels.size())
      throw Error("dataset: feature rows and label count differ");
    if (class_count < 2) throw Error("dataset: class_count must be at least 2");
    for (int y : labels) {
      if (y < 0 || y >= class_count) throw Error("dataset: label outside [0, class_count)");
    }
    if (!features.allFinite()) throw Error("dataset: non-finite feature value");
    std::vector<char> seen(size(), 0);
    for (Index i : train_indices) {
      if (i >= size()) throw Error("dataset: train index out of range");
      seen[i] = 1;
    }
    for (Index i : test_indices) {
      if (i >= size()) throw Error("dataset: test index out of range");
      if (seen[i]) throw Error("dataset: train and test partitions overlap");
    }
  }

  std::vector<Index> class_counts(const IndexList& indices) const {
    std::vector<Index> counts(static_cast<std::size_t>(class_count), 0);
    for (Index i : indices) ++counts[static_cast<std::size_t>(labels[i])];
    return counts;
  }
};

inline IndexList iota_indices(Index n) {
  IndexList out(n);
  for (Index i = 0; i < n; ++i) out[i] = i;
  return out;
}

// --------------------------------------------------------------------------
// CSV
// --------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

inline void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace detail

/// Reads `f0,...,f{d-1},label` CSV. `class_count` overrides 1 + max(label)
/// when given (it must still exceed every label).
inline Dataset load_csv(const std::string& path, std::optional<int> class_count = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw Error("empty dataset: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_fields(line);
  if (header.size() < 2 || header.back() != "label")
    throw Error("dataset header must be f0,...,f{d-1},label");
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j] != "f" + std::to_string(j))
      throw Error("dataset header column " + std::to_string(j) + " must be f" + std::to_string(j));
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    auto fields = detail::split_fields(line);
    if (fields.size() != dim + 1) {
      throw Error("row " + std::to_string(row) + ": expected " + std::to_string(dim + 1) +
                  " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) {
      auto v = detail::parse_number<double>(fields[j]);
      if (!v) throw Error("row " + std::to_string(row) + ": non-numeric value in column f" + std::to_string(j));
      if (!std::isfinite(*v)) throw Error("row " + std::to_string(row) + ": non-finite value");
      values.push_back(*v);
    }
    auto y = detail::parse_number<int>(fields[dim]);
    if (!y || *y < 0) throw Error("row " + std::to_string(row) + ": label must be a nonnegative integer");
    labels.push_back(*y);
  }
  if (labels.empty()) throw Error("empty dataset: " + path);

  Dataset ds;
  ds.features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                   static_cast<Eigen::Index>(dim));
  ds.labels = std::move(labels);
  const int inferred = 1 + *std::max_element(ds.labels.begin(), ds.labels.end());
  if (class_count) {
    if (*class_count < inferred) throw Error("configured class_count is smaller than 1 + max label");
    ds.class_count = *class_count;
  } else {
    ds.class_count = std::max(inferred, 2);
  }
  ds.train_indices = iota_indices(ds.size());
  ds.validate();
  return ds;
}

/// Writes the dataset in the same CSV layout `load_csv` reads. Values use
/// the shortest round-trip representation so a reload is bit-exact.
inline void save_csv(const Dataset& ds, const std::string& path) {
  std::string out;
  for (Index j = 0; j < ds.dim(); ++j) out += "f" + std::to_string(j) + ",";
  out += "label\n";
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.dim(); ++j) {
      detail::append_double(out, ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out += ',';
    }
    out += std::to_string(ds.labels[i]);
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write dataset file: " + path);
  f << out;
  if (!f) throw Error("failed writing dataset file: " + path);
}

// --------------------------------------------------------------------------
// Splitting and preprocessing
// --------------------------------------------------------------------------

/// Stratified train/test partition over all samples. Per class,
/// round(test_fraction * n_c) samples go to test, always leaving at least
/// one in train. Singleton classes stay in train with a warning.
inline Dataset split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("split: test_fraction must be in (0,1)");
  if (ds.size() < 2) throw Error("split: need at least 2 samples");

  std::vector<IndexList> members(static_cast<std::size_t>(ds.class_count));
  for (Index i = 0; i < ds.size(); ++i) members[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  Rng rng(seed);
  Dataset out = ds;
  out.train_indices.clear();
  out.test_indices.clear();
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& m = members[c];
    if (m.empty()) continue;
    if (m.size() == 1) {
      warn("split: class " + std::to_string(c) + " has a single sample; kept in train");
      out.train_indices.push_back(m.front());
      continue;
    }
    std::shuffle(m.begin(), m.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(m.size())));
    n_test = std::min(n_test, m.size() - 1);
    out.test_indices.insert(out.test_indices.end(), m.begin(), m.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train_indices.insert(out.train_indices.end(), m.begin() + static_cast<std::ptrdiff_t>(n_test), m.end());
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  return out;
}

/// Z-scores every feature with mean and standard deviation taken over the
/// train partition. Constant features are only centered.
inline Dataset standardize(const Dataset& ds) {
  Dataset out = ds;
  if (ds.train_indices.empty()) return out;
  const Matrix train = gather_rows(ds.features, ds.train_indices);
  const RowVector mean = train.colwise().mean();
  RowVector sd = ((train.rowwise() - mean).array().square().colwise().sum() /
                  static_cast<double>(train.rows()))
                     .sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (sd[j] == 0.0) sd[j] = 1.0;
  }
  out.features = (ds.features.rowwise() - mean).array().rowwise() / sd.array();
  return out;
}

// --------------------------------------------------------------------------
// Synthetic blobs
// --------------------------------------------------------------------------

struct Blobs {
  Dataset data;
  IndexList outliers;  // ascending; samples whose label was reassigned
};

/// Cluster centers with pairwise distance >= separation.
inline Matrix blob_centers(int class_count, Index dim, double separation) {
  const auto k = static_cast<Eigen::Index>(class_count);
  Matrix centers = Matrix::Zero(k, static_cast<Eigen::Index>(dim));
  if (dim >= static_cast<Index>(class_count)) {
    // scaled simplex vertices: |c_i - c_j| = separation
    for (Eigen::Index c = 0; c < k; ++c) centers(c, c) = separation / std::numbers::sqrt2;
  } else if (dim >= 2) {
    const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(class_count)));
    for (Eigen::Index c = 0; c < k; ++c) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(class_count);
      centers(c, 0) = radius * std::cos(angle);
      centers(c, 1) = radius * std::sin(angle);
    }
  } else {
    for (Eigen::Index c = 0; c < k; ++c) centers(c, 0) = separation * static_cast<double>(c);
  }
  return centers;
}

inline Blobs generate_blobs(int class_count, Index dim, Index per_class, double outlier_fraction,
                            double separation, std::uint64_t seed) {
  if (class_count < 2) throw Error("generate_blobs: need at least 2 classes");
  if (dim < 1) throw Error("generate_blobs: dim must be positive");
  if (per_class < 10) throw Error("generate_blobs: need at least 10 samples per class");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0))
    throw Error("generate_blobs: outlier_fraction must be in [0,1)");
  if (!(separation > 0.0)) throw Error("generate_blobs: separation must be positive");

  const Matrix centers = blob_centers(class_count, dim, separation);
  const Index n = static_cast<Index>(class_count) * per_class;

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Blobs out;
  out.data.class_count = class_count;
  out.data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  out.data.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto c = static_cast<int>(i / per_class);
    out.data.labels[i] = c;
    for (Index j = 0; j < dim; ++j) {
      out.data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          centers(c, static_cast<Eigen::Index>(j)) + normal(rng);
    }
  }
  out.data.train_indices = iota_indices(n);

  const auto n_outliers = static_cast<Index>(std::llround(outlier_fraction * static_cast<double>(n)));
  IndexList order = iota_indices(n);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> shift(1, class_count - 1);
  for (Index t = 0; t < n_outliers; ++t) {
    const Index i = order[t];
    out.data.labels[i] = (out.data.labels[i] + shift(rng)) % class_count;
    out.outliers.push_back(i);
  }
  std::sort(out.outliers.begin(), out.outliers.end());
  return out;
}

// --------------------------------------------------------------------------
// Pool bookkeeping
// --------------------------------------------------------------------------

/// Disjoint labeled / unlabeled sets over the train partition. `labeled`
/// keeps insertion order; `unlabeled` stays sorted ascending.
class PoolState {
 public:
  PoolState(const IndexList& train_indices, const IndexList& initial_labeled) {
    Index max_index = 0;
    for (Index i : train_indices) max_index = std::max(max_index, i);
    state_.assign(train_indices.empty() ? 0 : max_index + 1, kOutside);
    for (Index i : train_indices) state_[i] = kUnlabeled;
    for (Index i : initial_labeled) {
      if (i >= state_.size() || state_[i] != kUnlabeled)
        throw Error("pool: initial labeled index not in the unlabeled train pool");
      state_[i] = kLabeled;
      labeled_.push_back(i);
    }
    for (Index i : train_indices) {
      if (state_[i] == kUnlabeled) unlabeled_.push_back(i);
    }
    std::sort(unlabeled_.begin(), unlabeled_.end());
  }

  const IndexList& labeled() const { return labeled_; }
  const IndexList& unlabeled() const { return unlabeled_; }
  bool is_labeled(Index i) const { return i < state_.size() && state_[i] == kLabeled; }

  /// Moves `batch` from unlabeled to labeled. Every index must currently be
  /// unlabeled and appear once.
  void label(const IndexList& batch) {
    for (Index i : batch) {
      if (i >= state_.size() || state_[i] != kUnlabeled)
        throw Error("pool: queried index " + std::to_string(i) + " is not in the unlabeled pool");
      state_[i] = kLabeled;
      labeled_.push_back(i);
    }
    std::erase_if(unlabeled_, [this](Index i) { return state_[i] == kLabeled; });
  }

 private:
  static constexpr char kOutside = 0;
  static constexpr char kUnlabeled = 1;
  static constexpr char kLabeled = 2;

  std::vector<char> state_;
  IndexList labeled_;
  IndexList unlabeled_;
};

}  // namespace alsim
