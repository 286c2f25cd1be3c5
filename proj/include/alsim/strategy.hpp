#pragma once

// Query strategies over the unlabeled pool, and Uncertainty Clipping: drop
// the most uncertain ceil(f * N) pool samples before taking the batch.

#include "alsim/common.hpp"
#include "alsim/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

namespace alsim {

enum class StrategyKind { LeastConfidence, Entropy, Margin, Random };

inline std::string_view to_string(StrategyKind s) {
  switch (s) {
    case StrategyKind::LeastConfidence: return "lc";
    case StrategyKind::Entropy: return "ent";
    case StrategyKind::Margin: return "mm";
    case StrategyKind::Random: return "rand";
  }
  return "?";
}

/// `reports` rows are aligned with `pool`; it may be null for Random.
struct QueryRequest {
  std::span<const Index> pool;
  Index batch_size = 25;
  const ConfidenceReport* reports = nullptr;
  double clip_fraction = 0.05;
  std::uint64_t seed = 0;
};

/// Number of pool samples Uncertainty Clipping drops.
inline Index clip_count(Index pool_size, double clip_fraction) {
  if (!(clip_fraction >= 0.0 && clip_fraction < 1.0)) throw Error("clip_fraction must be in [0,1)");
  // the epsilon keeps e.g. 0.05 * 100 from rounding up to 6
  const double raw = clip_fraction * static_cast<double>(pool_size) - 1e-9;
  return raw <= 0.0 ? 0 : static_cast<Index>(std::ceil(raw));
}

/// Drops the first ceil(clip_fraction * pool_size) entries of a
/// most-uncertain-first ranking.
inline IndexList apply_clipping(std::span<const Index> ranked, Index pool_size, double clip_fraction) {
  const Index drop = std::min<Index>(clip_count(pool_size, clip_fraction), ranked.size());
  return IndexList(ranked.begin() + static_cast<std::ptrdiff_t>(drop), ranked.end());
}

/// Pool indices ordered most uncertain first by `score`; ties go to the
/// smaller sample index.
inline IndexList rank_pool(std::span<const Index> pool, std::span<const double> score, bool higher_is_uncertain) {
  if (pool.size() != score.size()) throw Error("strategy: report size does not match pool size");
  std::vector<std::size_t> pos(pool.size());
  std::iota(pos.begin(), pos.end(), 0);
  std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return higher_is_uncertain ? score[a] > score[b] : score[a] < score[b];
    return pool[a] < pool[b];
  });
  IndexList ranked(pool.size());
  for (std::size_t i = 0; i < pos.size(); ++i) ranked[i] = pool[pos[i]];
  return ranked;
}

namespace detail {

inline IndexList take_batch(const QueryRequest& req, const IndexList& ranked) {
  auto rest = apply_clipping(ranked, req.pool.size(), req.clip_fraction);
  if (rest.size() < req.batch_size) {
    throw Error("strategy: pool of " + std::to_string(req.pool.size()) + " too small for batch " +
                std::to_string(req.batch_size) + " after clipping");
  }
  rest.resize(req.batch_size);
  return rest;
}

inline const ConfidenceReport& require_reports(const QueryRequest& req) {
  if (req.reports == nullptr) throw Error("strategy: confidence reports required");
  if (req.reports->size() != req.pool.size()) throw Error("strategy: report size does not match pool size");
  return *req.reports;
}

}  // namespace detail

inline double entropy(const RowVector& p) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    if (p[c] > 0.0) h -= p[c] * std::log(p[c]);
  }
  return h;
}

/// Difference between the two largest entries.
inline double top2_margin(const RowVector& p) {
  double first = -std::numeric_limits<double>::infinity();
  double second = first;
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    if (p[c] > first) {
      second = first;
      first = p[c];
    } else if (p[c] > second) {
      second = p[c];
    }
  }
  return first - second;
}

/// Ranks by the report's uncertainty (1 - P(y_hat|x) for probability
/// methods, the method's own score otherwise).
inline IndexList least_confidence(const QueryRequest& req) {
  const auto& rep = detail::require_reports(req);
  return detail::take_batch(req, rank_pool(req.pool, rep.uncertainty, true));
}

inline IndexList entropy_strategy(const QueryRequest& req) {
  const auto& rep = detail::require_reports(req);
  std::vector<double> h(rep.size());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = entropy(rep.distribution.row(static_cast<Eigen::Index>(i)));
  return detail::take_batch(req, rank_pool(req.pool, h, true));
}

inline IndexList margin_strategy(const QueryRequest& req) {
  const auto& rep = detail::require_reports(req);
  if (rep.distribution.cols() < 2) throw Error("margin strategy needs at least 2 classes");
  std::vector<double> m(rep.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = top2_margin(rep.distribution.row(static_cast<Eigen::Index>(i)));
  return detail::take_batch(req, rank_pool(req.pool, m, false));
}

/// Uniform draw without replacement; clipping does not apply.
inline IndexList random_strategy(const QueryRequest& req) {
  if (req.batch_size > req.pool.size()) throw Error("random strategy: batch larger than pool");
  IndexList pool(req.pool.begin(), req.pool.end());
  Rng rng(req.seed);
  // partial Fisher-Yates
  for (Index i = 0; i < req.batch_size; ++i) {
    std::uniform_int_distribution<Index> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(req.batch_size);
  return pool;
}

inline IndexList select(StrategyKind kind, const QueryRequest& req) {
  switch (kind) {
    case StrategyKind::LeastConfidence: return least_confidence(req);
    case StrategyKind::Entropy: return entropy_strategy(req);
    case StrategyKind::Margin: return margin_strategy(req);
    case StrategyKind::Random: return random_strategy(req);
  }
  throw Error("unknown strategy");
}

}  // namespace alsim
