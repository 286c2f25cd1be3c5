#pragma once

// Post-hoc analyses over experiment results: acc_last5 summaries, Jaccard
// coefficients between queried sets, and class-distribution shift.

#include "alsim/common.hpp"
#include "alsim/data.hpp"
#include "alsim/simulator.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace alsim {

// --------------------------------------------------------------------------
// Queried sets
// --------------------------------------------------------------------------

using SampleSet = std::set<Index>;

/// Union of queried indices over every repetition and iteration.
inline SampleSet queried_union(const ExperimentResult& result) {
  SampleSet s;
  for (const auto& rep : result.repetitions) {
    for (const auto& it : rep.iterations) s.insert(it.queried.begin(), it.queried.end());
  }
  return s;
}

/// |A n B| / |A u B|, with J(empty, empty) = 1.
inline double jaccard(const SampleSet& a, const SampleSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

inline Matrix jaccard_matrix(const std::vector<SampleSet>& sets) {
  if (sets.size() < 2) throw Error("jaccard_matrix: need at least 2 sets");
  const auto n = static_cast<Eigen::Index>(sets.size());
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      m(i, j) = m(j, i) = jaccard(sets[static_cast<std::size_t>(i)], sets[static_cast<std::size_t>(j)]);
    }
  }
  return m;
}

/// clipped - base, elementwise.
inline Matrix jaccard_delta(const Matrix& base, const Matrix& clipped) {
  if (base.rows() != clipped.rows() || base.cols() != clipped.cols()) throw Error("jaccard_delta: shape mismatch");
  return clipped - base;
}

// --------------------------------------------------------------------------
// Class shift
// --------------------------------------------------------------------------

struct ClassShift {
  std::vector<double> queried_fraction;
  std::vector<double> train_fraction;
  std::vector<double> shift;  // queried - train
};

inline ClassShift class_shift(const SampleSet& queried, const Dataset& ds) {
  if (queried.empty()) throw Error("class_shift: empty queried set");
  if (ds.train_indices.empty()) throw Error("class_shift: dataset has no train partition");
  const auto k = static_cast<std::size_t>(ds.class_count);
  ClassShift cs;
  cs.queried_fraction.assign(k, 0.0);
  cs.train_fraction.assign(k, 0.0);
  for (Index i : queried) {
    if (i >= ds.size()) throw Error("class_shift: queried index outside the dataset");
    cs.queried_fraction[static_cast<std::size_t>(ds.labels[i])] += 1.0;
  }
  for (Index i : ds.train_indices) cs.train_fraction[static_cast<std::size_t>(ds.labels[i])] += 1.0;
  cs.shift.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    cs.queried_fraction[c] /= static_cast<double>(queried.size());
    cs.train_fraction[c] /= static_cast<double>(ds.train_indices.size());
    cs.shift[c] = cs.queried_fraction[c] - cs.train_fraction[c];
  }
  return cs;
}

// --------------------------------------------------------------------------
// Summary
// --------------------------------------------------------------------------

inline constexpr std::string_view kAllDatasets = "ALL";

struct SummaryRow {
  std::string dataset;  // kAllDatasets for the cross-dataset mean
  std::string method;
  double clip_fraction = 0.0;
  Index runs = 0;
  double acc_last5_mean = 0.0;
  double acc_last5_sd = 0.0;
  double query_seconds_mean = 0.0;
  double loop_seconds_mean = 0.0;  // train + query per AL iteration
};

namespace detail {

/// Order-independent mean: values are sorted before summation.
inline double stable_mean(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_sd(std::vector<double> v) {
  if (v.size() < 2) return 0.0;
  const double m = stable_mean(v);
  for (double& x : v) x = (x - m) * (x - m);
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Per (dataset, method, clip): mean and sample standard deviation of
/// acc_last5 over repetitions, plus mean per-iteration timings. Rows with
/// dataset "ALL" average the per-dataset means with equal weight.
inline std::vector<SummaryRow> summarize(const std::vector<ExperimentResult>& results) {
  using Key = std::tuple<std::string, std::string, double>;
  struct Acc {
    std::vector<double> acc, query, loop;
  };
  std::map<Key, Acc> groups;
  for (const auto& r : results) {
    auto& g = groups[Key{r.dataset, std::string(method_id(r.method)), r.clip_fraction}];
    if (r.passive_accuracy) g.acc.push_back(*r.passive_accuracy);
    for (const auto& rep : r.repetitions) {
      if (rep.acc_last5) g.acc.push_back(*rep.acc_last5);
      for (const auto& it : rep.iterations) {
        g.query.push_back(it.query_seconds);
        g.loop.push_back(it.query_seconds + it.train_seconds);
      }
    }
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, g] : groups) {
    SummaryRow row;
    std::tie(row.dataset, row.method, row.clip_fraction) = key;
    row.runs = g.acc.size();
    row.acc_last5_mean = detail::stable_mean(g.acc);
    row.acc_last5_sd = detail::sample_sd(g.acc);
    row.query_seconds_mean = detail::stable_mean(g.query);
    row.loop_seconds_mean = detail::stable_mean(g.loop);
    rows.push_back(std::move(row));
  }
  const std::size_t per_dataset = rows.size();
  std::map<std::pair<std::string, double>, std::vector<std::size_t>> grand;
  for (std::size_t i = 0; i < per_dataset; ++i) grand[{rows[i].method, rows[i].clip_fraction}].push_back(i);
  for (const auto& [key, members] : grand) {
    SummaryRow row;
    row.dataset = std::string(kAllDatasets);
    row.method = key.first;
    row.clip_fraction = key.second;
    std::vector<double> acc, query, loop;
    for (std::size_t i : members) {
      row.runs += rows[i].runs;
      acc.push_back(rows[i].acc_last5_mean);
      query.push_back(rows[i].query_seconds_mean);
      loop.push_back(rows[i].loop_seconds_mean);
    }
    row.acc_last5_mean = detail::stable_mean(acc);
    row.acc_last5_sd = detail::sample_sd(acc);
    row.query_seconds_mean = detail::stable_mean(query);
    row.loop_seconds_mean = detail::stable_mean(loop);
    rows.push_back(std::move(row));
  }
  return rows;
}

// --------------------------------------------------------------------------
// Tables
// --------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << body;
}

}  // namespace detail

/// Column headers of the analysis tables.
inline constexpr std::string_view kSummaryHeader =
    "dataset,method,clip_fraction,runs,acc_last5_mean,acc_last5_sd,query_seconds_mean,loop_seconds_mean";
inline constexpr std::string_view kJaccardHeader = "dataset,clip_fraction,method_a,method_b,jaccard";
inline constexpr std::string_view kJaccardDeltaHeader =
    "dataset,clip_fraction,method_a,method_b,base_jaccard,clipped_jaccard,delta";
inline constexpr std::string_view kClassShiftHeader =
    "dataset,method,clip_fraction,class,queried_fraction,train_fraction,shift";

struct AnalysisTables {
  std::string summary;
  std::string jaccard;
  std::string jaccard_delta;
  std::string class_shift;
};

/// Named queried sets for one (dataset, clip) cell of the Jaccard analysis.
/// The passive model's misclassified train samples join as "wrong".
using NamedSets = std::map<std::string, SampleSet>;

/// Builds all four tables. `datasets` maps dataset names to their (split)
/// data for the class-shift table; results for datasets missing from the
/// map are skipped there.
inline AnalysisTables analyze(const std::vector<ExperimentResult>& results,
                              const std::map<std::string, Dataset>& datasets = {}) {
  AnalysisTables t;
  {
    std::ostringstream os;
    os << kSummaryHeader << '\n';
    for (const auto& r : summarize(results)) {
      os << r.dataset << ',' << r.method << ',' << detail::fmt(r.clip_fraction) << ',' << r.runs << ','
         << detail::fmt(r.acc_last5_mean) << ',' << detail::fmt(r.acc_last5_sd) << ','
         << detail::fmt(r.query_seconds_mean) << ',' << detail::fmt(r.loop_seconds_mean) << '\n';
    }
    t.summary = os.str();
  }

  // (dataset, clip) -> method -> queried union. "ALL" pools datasets by
  // offsetting indices per dataset.
  std::map<std::pair<std::string, double>, NamedSets> cells;
  std::map<std::string, SampleSet> wrong;
  std::map<std::string, Index> offset;
  {
    std::set<std::string> names;
    for (const auto& r : results) names.insert(r.dataset);
    Index next = 0;
    for (const auto& n : names) {
      Index max_index = 0;
      for (const auto& r : results) {
        if (r.dataset != n) continue;
        for (Index i : queried_union(r)) max_index = std::max(max_index, i);
        for (Index i : r.wrong) max_index = std::max(max_index, i);
      }
      offset[n] = next;
      next += max_index + 1;
    }
  }
  for (const auto& r : results) {
    if (r.method == Method::Passive) {
      wrong[r.dataset].insert(r.wrong.begin(), r.wrong.end());
      continue;
    }
    const auto u = queried_union(r);
    const std::string m(method_id(r.method));
    auto& mine = cells[{r.dataset, r.clip_fraction}][m];
    mine.insert(u.begin(), u.end());
    auto& all = cells[{std::string(kAllDatasets), r.clip_fraction}][m];
    for (Index i : u) all.insert(offset[r.dataset] + i);
  }
  for (const auto& [ds, w] : wrong) {
    for (auto& [key, sets] : cells) {
      if (key.first == ds) sets["wrong"].insert(w.begin(), w.end());
      if (key.first == kAllDatasets) {
        for (Index i : w) sets["wrong"].insert(offset[ds] + i);
      }
    }
  }

  std::map<std::pair<std::string, double>, std::pair<std::vector<std::string>, Matrix>> matrices;
  {
    std::ostringstream os;
    os << kJaccardHeader << '\n';
    for (const auto& [key, sets] : cells) {
      std::vector<std::string> names;
      std::vector<SampleSet> list;
      for (const auto& [name, s] : sets) {
        names.push_back(name);
        list.push_back(s);
      }
      if (list.size() < 2) continue;
      const Matrix m = jaccard_matrix(list);
      for (std::size_t i = 0; i < names.size(); ++i) {
        for (std::size_t j = 0; j < names.size(); ++j) {
          os << key.first << ',' << detail::fmt(key.second) << ',' << names[i] << ',' << names[j] << ','
             << detail::fmt(m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
        }
      }
      matrices[key] = {names, m};
    }
    t.jaccard = os.str();
  }

  {
    std::ostringstream os;
    os << kJaccardDeltaHeader << '\n';
    for (const auto& [key, clipped] : matrices) {
      if (key.second == 0.0) continue;
      auto base_it = matrices.find({key.first, 0.0});
      if (base_it == matrices.end()) continue;
      // restrict both to the methods they share
      std::vector<std::string> shared;
      for (const auto& n : clipped.first) {
        if (std::find(base_it->second.first.begin(), base_it->second.first.end(), n) != base_it->second.first.end())
          shared.push_back(n);
      }
      auto pick = [&](const std::pair<std::vector<std::string>, Matrix>& src) {
        Matrix out(static_cast<Eigen::Index>(shared.size()), static_cast<Eigen::Index>(shared.size()));
        for (std::size_t i = 0; i < shared.size(); ++i) {
          for (std::size_t j = 0; j < shared.size(); ++j) {
            const auto a = std::find(src.first.begin(), src.first.end(), shared[i]) - src.first.begin();
            const auto b = std::find(src.first.begin(), src.first.end(), shared[j]) - src.first.begin();
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = src.second(a, b);
          }
        }
        return out;
      };
      const Matrix base = pick(base_it->second);
      const Matrix clip = pick(clipped);
      const Matrix delta = jaccard_delta(base, clip);
      for (std::size_t i = 0; i < shared.size(); ++i) {
        for (std::size_t j = 0; j < shared.size(); ++j) {
          const auto a = static_cast<Eigen::Index>(i);
          const auto b = static_cast<Eigen::Index>(j);
          os << key.first << ',' << detail::fmt(key.second) << ',' << shared[i] << ',' << shared[j] << ','
             << detail::fmt(base(a, b)) << ',' << detail::fmt(clip(a, b)) << ',' << detail::fmt(delta(a, b)) << '\n';
        }
      }
    }
    t.jaccard_delta = os.str();
  }

  {
    std::ostringstream os;
    os << kClassShiftHeader << '\n';
    for (const auto& [key, sets] : cells) {
      auto ds_it = datasets.find(key.first);
      if (ds_it == datasets.end()) continue;
      for (const auto& [name, s] : sets) {
        if (name == "wrong" || s.empty()) continue;
        const auto cs = class_shift(s, ds_it->second);
        for (std::size_t c = 0; c < cs.shift.size(); ++c) {
          os << key.first << ',' << name << ',' << detail::fmt(key.second) << ',' << c << ','
             << detail::fmt(cs.queried_fraction[c]) << ',' << detail::fmt(cs.train_fraction[c]) << ','
             << detail::fmt(cs.shift[c]) << '\n';
        }
      }
    }
    t.class_shift = os.str();
  }
  return t;
}

/// Reads every `*.jsonl` result file in `dir`, in filename order.
inline std::vector<ExperimentResult> load_results(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no result files (*.jsonl) in " + dir.string());
  std::vector<ExperimentResult> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw Error("cannot open " + f.string());
    try {
      out.push_back(read_result(in));
    } catch (const Error& e) {
      throw Error(f.filename().string() + ": " + e.what());
    }
  }
  return out;
}

inline void write_tables(const AnalysisTables& t, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::write_file(out_dir / "summary.csv", t.summary);
  detail::write_file(out_dir / "jaccard.csv", t.jaccard);
  detail::write_file(out_dir / "jaccard_delta.csv", t.jaccard_delta);
  detail::write_file(out_dir / "class_shift.csv", t.class_shift);
}

}  // namespace alsim
