#pragma once

#include "alsim/common.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

namespace alsim::test {

/// Per-process scratch directory.
inline std::filesystem::path temp_dir() {
  static const auto dir = [] {
    auto d = std::filesystem::temp_directory_path() /
             ("alsim_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

/// Collects warnings for the lifetime of the object.
class CaptureWarnings {
 public:
  CaptureWarnings() {
    previous_ = set_warning_handler([this](std::string_view m) { messages_.emplace_back(m); });
  }
  ~CaptureWarnings() { set_warning_handler(std::move(previous_)); }
  CaptureWarnings(const CaptureWarnings&) = delete;
  CaptureWarnings& operator=(const CaptureWarnings&) = delete;

  std::size_t count() const { return messages_.size(); }
  const std::vector<std::string>& messages() const { return messages_; }

 private:
  WarningHandler previous_;
  std::vector<std::string> messages_;
};

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace alsim::test
