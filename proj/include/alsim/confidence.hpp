#pragma once

// Confidence-probability quantification methods. Each maps logits, a model
// or an ensemble to a ConfidenceReport whose `uncertainty` column is the
// ranking key: larger means less confident, for every method.

#include "alsim/common.hpp"
#include "alsim/data.hpp"
#include "alsim/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace alsim {

struct ConfidenceReport {
  Matrix distribution;            // M x K class distribution
  IndexList predicted;            // argmax of each row, lowest class id on ties
  std::vector<double> confidence;  // distribution at the predicted class
  std::vector<double> uncertainty;

  Index size() const { return predicted.size(); }
};

/// Fills predicted / confidence from the distribution and sets
/// uncertainty = 1 - confidence.
inline ConfidenceReport report_from_distribution(Matrix distribution) {
  ConfidenceReport r;
  const auto m = static_cast<std::size_t>(distribution.rows());
  r.predicted.resize(m);
  r.confidence.resize(m);
  r.uncertainty.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = distribution.row(static_cast<Eigen::Index>(i));
    r.predicted[i] = argmax(row);
    r.confidence[i] = row[static_cast<Eigen::Index>(r.predicted[i])];
    r.uncertainty[i] = 1.0 - r.confidence[i];
  }
  r.distribution = std::move(distribution);
  return r;
}

inline Matrix softmax_probabilities(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    p.row(i) = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline ConfidenceReport softmax(const Matrix& logits) { return report_from_distribution(softmax_probabilities(logits)); }

/// Softmax with exp(alpha_const) added to the denominator; rows sum to < 1.
inline ConfidenceReport inhibited_softmax(const Matrix& logits, double alpha_const) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = std::max(logits.row(i).maxCoeff(), alpha_const);
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum() + std::exp(alpha_const - m);
  }
  return report_from_distribution(std::move(p));
}

inline ConfidenceReport inhibited_softmax(const LearnerModel& model, const Matrix& features, double alpha_const) {
  if (model.head != HeadKind::InhibitedSoftmax) warn("inhibited_softmax: model was not trained with the inhibited head");
  return inhibited_softmax(forward_logits(model, features), alpha_const);
}

inline ConfidenceReport temperature_scaled(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  return softmax(logits / temperature);
}

/// Mean cross-entropy of softmax(logits / T) against labels.
inline double temperature_nll(const Matrix& logits, std::span<const int> labels, double temperature) {
  const Matrix z = logits / temperature;
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    const double lse = m + std::log((z.row(i).array() - m).exp().sum());
    total += lse - z(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(z.rows());
}

/// Grid search over T in {0.01, 0.02, ..., 10.00}; returns the T with the
/// smallest mean cross-entropy, the smallest such T on ties.
inline double fit_temperature(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw Error("fit_temperature: need at least one labeled sample");
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw Error("fit_temperature: size mismatch");
  double best_t = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int step = 1; step <= 1000; ++step) {
    const double t = step / 100.0;
    const double nll = temperature_nll(logits, labels, t);
    if (nll < best) {
      best = nll;
      best_t = t;
    }
  }
  return best_t;
}

/// Dirichlet view of the logits: alpha = ReLU(z) + 1, distribution alpha / S,
/// uncertainty K / S.
inline ConfidenceReport evidential_confidence(const Matrix& logits) {
  const Matrix alpha = logits.cwiseMax(0.0).array() + 1.0;
  const Vector strength = alpha.rowwise().sum();
  Matrix dist = alpha.array().colwise() / strength.array();
  auto r = report_from_distribution(std::move(dist));
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.uncertainty[i] = static_cast<double>(logits.cols()) / strength[static_cast<Eigen::Index>(i)];
  }
  return r;
}

inline ConfidenceReport evidential_confidence(const LearnerModel& model, const Matrix& features) {
  if (model.head != HeadKind::Evidential) warn("evidential_confidence: model was not trained with the evidential head");
  return evidential_confidence(forward_logits(model, features));
}

/// Arithmetic mean of softmax outputs over `passes` dropout-active forward
/// passes seeded base_seed, base_seed + 1, ...
inline ConfidenceReport mc_dropout(const LearnerModel& model, const Matrix& features, int passes,
                                   std::uint64_t base_seed) {
  if (passes < 1) throw Error("mc_dropout: passes must be at least 1");
  Matrix sum = Matrix::Zero(features.rows(), static_cast<Eigen::Index>(model.class_count()));
  for (int p = 0; p < passes; ++p) {
    sum += softmax_probabilities(forward_logits(model, features, true, base_seed + static_cast<std::uint64_t>(p)));
  }
  return report_from_distribution(sum / static_cast<double>(passes));
}

/// Plain softmax over a label-smoothing-trained model; the method differs
/// from vanilla softmax only through training.
inline ConfidenceReport label_smoothing_confidence(const LearnerModel& model, const Matrix& features) {
  return softmax(forward_logits(model, features));
}

// --------------------------------------------------------------------------
// Ensembles
// --------------------------------------------------------------------------

namespace detail {
inline void check_members(const std::vector<Matrix>& members) {
  if (members.size() < 2) throw Error("ensemble: need at least 2 members");
  for (const auto& m : members) {
    if (m.rows() != members.front().rows() || m.cols() != members.front().cols())
      throw Error("ensemble: member shapes differ");
  }
}

inline Matrix mean_distribution(const std::vector<Matrix>& members) {
  Matrix mean = Matrix::Zero(members.front().rows(), members.front().cols());
  for (const auto& m : members) mean += m;
  return mean / static_cast<double>(members.size());
}
}  // namespace detail

/// Vote entropy of the members' argmax votes. Predicted class is the
/// plurality vote (lowest class id on ties); distribution is the member mean.
inline ConfidenceReport ensemble_vote_entropy(const std::vector<Matrix>& members) {
  detail::check_members(members);
  const auto e = static_cast<double>(members.size());
  ConfidenceReport r;
  r.distribution = detail::mean_distribution(members);
  const auto m = static_cast<std::size_t>(r.distribution.rows());
  const auto k = r.distribution.cols();
  r.predicted.resize(m);
  r.confidence.resize(m);
  r.uncertainty.resize(m);
  std::vector<int> votes(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(votes.begin(), votes.end(), 0);
    for (const auto& member : members) ++votes[argmax(member.row(static_cast<Eigen::Index>(i)))];
    double ve = 0.0;
    Index winner = 0;
    for (std::size_t c = 0; c < votes.size(); ++c) {
      if (votes[c] > votes[winner]) winner = c;
      if (votes[c] == 0) continue;
      const double f = votes[c] / e;
      ve -= f * std::log(f);
    }
    r.predicted[i] = winner;
    r.confidence[i] = r.distribution(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(winner));
    r.uncertainty[i] = std::max(0.0, ve);
  }
  return r;
}

/// Mean KL divergence of each member from the consensus (member mean).
/// Probabilities are floored at 1e-12 before taking logs.
inline ConfidenceReport ensemble_kld(const std::vector<Matrix>& members) {
  detail::check_members(members);
  constexpr double kFloor = 1e-12;
  auto r = report_from_distribution(detail::mean_distribution(members));
  const Matrix consensus = r.distribution.cwiseMax(kFloor);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    double kld = 0.0;
    for (const auto& member : members) {
      for (Eigen::Index c = 0; c < member.cols(); ++c) {
        const double p = std::max(member(row, c), kFloor);
        kld += p * std::log(p / consensus(row, c));
      }
    }
    r.uncertainty[i] = std::max(0.0, kld / static_cast<double>(members.size()));
  }
  return r;
}

// --------------------------------------------------------------------------
// Trust score
// --------------------------------------------------------------------------

/// Per-class labeled feature vectors kept after k-NN density filtering.
struct TrustIndex {
  std::vector<Matrix> retained;  // one (n_c x d) block per class, possibly empty
  Index k = 10;
};

/// Builds the index from the given points. Per class with at least k + 1
/// points, the floor(density_fraction * n_c) points with the largest
/// distance to their k-th nearest same-class neighbour are discarded.
inline TrustIndex build_trust_index(const Matrix& features, std::span<const int> labels, int class_count, Index k,
                                    double density_fraction) {
  if (k < 1) throw Error("trust index: k must be at least 1");
  if (!(density_fraction >= 0.0 && density_fraction < 1.0)) throw Error("trust index: density_fraction must be in [0,1)");
  TrustIndex index;
  index.k = k;
  index.retained.resize(static_cast<std::size_t>(class_count));
  for (int c = 0; c < class_count; ++c) {
    IndexList rows;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) rows.push_back(i);
    }
    Matrix pts = gather_rows(features, rows);
    const auto n = static_cast<Index>(pts.rows());
    const auto drop = static_cast<Index>(std::floor(density_fraction * static_cast<double>(n)));
    if (n >= k + 1 && drop > 0) {
      std::vector<double> radius(n);
      std::vector<double> d(n - 1);
      for (Index i = 0; i < n; ++i) {
        Index t = 0;
        for (Index j = 0; j < n; ++j) {
          if (j != i) d[t++] = (pts.row(static_cast<Eigen::Index>(i)) - pts.row(static_cast<Eigen::Index>(j))).norm();
        }
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
        radius[i] = d[k - 1];
      }
      IndexList order = iota_indices(n);
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return radius[a] < radius[b]; });
      order.resize(n - drop);
      std::sort(order.begin(), order.end());
      pts = gather_rows(pts, order);
    }
    index.retained[static_cast<std::size_t>(c)] = std::move(pts);
  }
  return index;
}

inline TrustIndex build_trust_index(const Dataset& ds, const IndexList& labeled, Index k, double density_fraction) {
  std::vector<int> labels(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) labels[i] = ds.labels[labeled[i]];
  return build_trust_index(gather_rows(ds.features, labeled), labels, ds.class_count, k, density_fraction);
}

/// Euclidean distance from `x` to the nearest retained point of class c,
/// +inf when that class has no retained points.
inline double class_distance(const TrustIndex& index, std::size_t c, const RowVector& x) {
  const auto& pts = index.retained[c];
  if (pts.rows() == 0) return std::numeric_limits<double>::infinity();
  return std::sqrt((pts.rowwise() - x).rowwise().squaredNorm().minCoeff());
}

/// Trust score ts = dist(x, nearest other class) / dist(x, predicted class),
/// ranked through uncertainty = 1 / (1 + ts). The class distribution and
/// prediction are taken from `base` (the selection model's softmax).
inline ConfidenceReport trust_score(const TrustIndex& index, const Matrix& features, const ConfidenceReport& base) {
  if (static_cast<Index>(features.rows()) != base.size()) throw Error("trust_score: report and features differ in size");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  ConfidenceReport r = base;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const RowVector x = features.row(static_cast<Eigen::Index>(i));
    const Index pred = base.predicted[i];
    const double to_pred = class_distance(index, pred, x);
    double to_other = kInf;
    for (std::size_t c = 0; c < index.retained.size(); ++c) {
      if (c != pred) to_other = std::min(to_other, class_distance(index, c, x));
    }
    double ts;
    if (to_pred == 0.0 || (std::isinf(to_other) && !std::isinf(to_pred))) {
      ts = kInf;
    } else if (std::isinf(to_pred) && std::isinf(to_other)) {
      ts = 1.0;  // no labeled evidence either way
    } else {
      ts = to_other / to_pred;
    }
    r.uncertainty[i] = std::isinf(ts) ? 0.0 : 1.0 / (1.0 + ts);
  }
  return r;
}

}  // namespace alsim
