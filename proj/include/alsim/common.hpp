#pragma once

// Shared types and small utilities used across the alsim headers.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace alsim {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = std::size_t;
using IndexList = std::vector<Index>;
using Rng = std::mt19937_64;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --------------------------------------------------------------------------
// Warnings
// --------------------------------------------------------------------------

using WarningHandler = std::function<void(std::string_view)>;

namespace detail {
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
inline WarningHandler& warning_handler() {
  static WarningHandler h = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return h;
}
}  // namespace detail

/// Replaces the process-wide warning sink and returns the previous one.
inline WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(detail::warning_mutex());
  auto previous = std::move(detail::warning_handler());
  detail::warning_handler() = std::move(handler);
  return previous;
}

inline void warn(std::string_view msg) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_handler()) detail::warning_handler()(msg);
}

// --------------------------------------------------------------------------
// Seeds
// --------------------------------------------------------------------------

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent sub-seed from a base seed and a sequence of tags.
/// Stable across runs and platforms; used to give every (repetition,
/// iteration, model) its own random stream.
template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t base, Tags... tags) {
  std::uint64_t h = mix64(base);
  ((h = mix64(h ^ static_cast<std::uint64_t>(tags))), ...);
  return h;
}

/// Stream tags for derive_seed.
enum class Stream : std::uint64_t {
  InitialDraw = 1,
  Prediction = 2,
  Selection = 3,
  Query = 4,
  Dropout = 5,
  Passive = 6,
};

constexpr std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

// --------------------------------------------------------------------------
// Small helpers
// --------------------------------------------------------------------------

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Row>
Index argmax(const Row& row) {
  Index best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row[c] > row[static_cast<Eigen::Index>(best)]) best = static_cast<Index>(c);
  }
  return best;
}

inline Matrix gather_rows(const Matrix& m, const IndexList& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace alsim
