#pragma once

// Experiment grids: the INI-style run configuration, the run manifest, and
// a bounded worker pool that executes (dataset x method x clip) cells.
//
// Configuration keys (every key is optional; unknown sections or keys are
// rejected):
//
//   [experiment]  base_seed = 0          clock = wall | counter
//   [data]        test_fraction = 0.2    split_seed = 0
//                 standardize = false    class_count = <auto>
//   [datasets]    <name> = <csv path>    (relative to the config file)
//   [grid]        methods = lc, rand     clip = 0.0, 0.05
//   [protocol]    initial_labeled = 25   iterations = 20
//                 batch_size = 25        repetitions = 10
//   [learner]     hidden_sizes = 128     dropout = 0.1    epochs = 100
//                 learning_rate = 0.05   batch_size = 32
//   [method]      is_alpha = 1.0         is_lambda = 0.01
//                 trust_k = 10           trust_density = 0.0
//                 mc_passes = 50         ensemble_size = 5
//                 ls_alpha = 0.2         evidential_anneal_epochs = 10

#include "alsim/analysis.hpp"
#include "alsim/data.hpp"
#include "alsim/simulator.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <atomic>
#include <charconv>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

namespace alsim {

struct DatasetSpec {
  std::string name;
  std::string path;  // resolved against the config file directory when relative
};

struct RunConfig {
  std::string config_path;
  std::uint64_t base_seed = 0;
  ClockKind clock = ClockKind::Wall;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  bool standardize = false;
  std::optional<int> class_count;
  std::vector<DatasetSpec> datasets;
  std::vector<Method> methods{Method::Lc, Method::Rand};
  std::vector<double> clips{0.0, 0.05};
  Index initial_labeled = 25;
  Index iterations = 20;
  Index batch_size = 25;
  Index repetitions = 10;
  LearnerConfig learner;
  MethodParams params;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto pos = s.find(',', start);
    if (pos == std::string::npos) pos = s.size();
    auto item = trim(std::string_view(s).substr(start, pos - start));
    if (!item.empty()) out.push_back(item);
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_value(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw Error("config: " + key + " must be true or false");
  } else {
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
      throw Error("config: invalid value '" + s + "' for " + key);
    return v;
  }
}

}  // namespace detail

inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.what());
  }

  static const std::map<std::string, std::set<std::string>> known = {
      {"experiment", {"base_seed", "clock"}},
      {"data", {"test_fraction", "split_seed", "standardize", "class_count"}},
      {"datasets", {}},
      {"grid", {"methods", "clip"}},
      {"protocol", {"initial_labeled", "iterations", "batch_size", "repetitions"}},
      {"learner", {"hidden_sizes", "dropout", "epochs", "learning_rate", "batch_size"}},
      {"method",
       {"is_alpha", "is_lambda", "trust_k", "trust_density", "mc_passes", "ensemble_size", "ls_alpha",
        "evidential_anneal_epochs"}},
  };

  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw Error("config: unknown section [" + section + "]");
    if (!body.data().empty()) throw Error("config: key '" + section + "' outside any section");
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      const std::string& v = node.data();
      if (section == "datasets") {
        std::filesystem::path p = detail::trim(v);
        if (p.empty()) throw Error("config: empty path for dataset " + key);
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        cfg.datasets.push_back({key, p.string()});
        continue;
      }
      if (!it->second.contains(key)) throw Error("config: unknown key " + full);
      using detail::parse_value;
      if (full == "experiment.base_seed") cfg.base_seed = parse_value<std::uint64_t>(full, v);
      else if (full == "experiment.clock") {
        const auto c = detail::trim(v);
        if (c == "wall") cfg.clock = ClockKind::Wall;
        else if (c == "counter") cfg.clock = ClockKind::Counter;
        else throw Error("config: clock must be wall or counter");
      }
      else if (full == "data.test_fraction") cfg.test_fraction = parse_value<double>(full, v);
      else if (full == "data.split_seed") cfg.split_seed = parse_value<std::uint64_t>(full, v);
      else if (full == "data.standardize") cfg.standardize = parse_value<bool>(full, v);
      else if (full == "data.class_count") cfg.class_count = parse_value<int>(full, v);
      else if (full == "grid.methods") {
        cfg.methods.clear();
        for (const auto& m : detail::split_list(v)) cfg.methods.push_back(parse_method(m));
      } else if (full == "grid.clip") {
        cfg.clips.clear();
        for (const auto& c : detail::split_list(v)) cfg.clips.push_back(parse_value<double>(full, c));
      }
      else if (full == "protocol.initial_labeled") cfg.initial_labeled = parse_value<Index>(full, v);
      else if (full == "protocol.iterations") cfg.iterations = parse_value<Index>(full, v);
      else if (full == "protocol.batch_size") cfg.batch_size = parse_value<Index>(full, v);
      else if (full == "protocol.repetitions") cfg.repetitions = parse_value<Index>(full, v);
      else if (full == "learner.hidden_sizes") {
        cfg.learner.hidden_sizes.clear();
        for (const auto& h : detail::split_list(v)) cfg.learner.hidden_sizes.push_back(parse_value<Index>(full, h));
      }
      else if (full == "learner.dropout") cfg.learner.dropout_rate = parse_value<double>(full, v);
      else if (full == "learner.epochs") cfg.learner.epochs = parse_value<int>(full, v);
      else if (full == "learner.learning_rate") cfg.learner.learning_rate = parse_value<double>(full, v);
      else if (full == "learner.batch_size") cfg.learner.batch_size = parse_value<Index>(full, v);
      else if (full == "method.is_alpha") cfg.params.is_alpha = parse_value<double>(full, v);
      else if (full == "method.is_lambda") cfg.params.is_lambda = parse_value<double>(full, v);
      else if (full == "method.trust_k") cfg.params.trust_k = parse_value<Index>(full, v);
      else if (full == "method.trust_density") cfg.params.trust_density = parse_value<double>(full, v);
      else if (full == "method.mc_passes") cfg.params.mc_passes = parse_value<int>(full, v);
      else if (full == "method.ensemble_size") cfg.params.ensemble_size = parse_value<int>(full, v);
      else if (full == "method.ls_alpha") cfg.params.ls_alpha = parse_value<double>(full, v);
      else if (full == "method.evidential_anneal_epochs") cfg.params.evidential_anneal_epochs = parse_value<int>(full, v);
    }
  }
  if (cfg.datasets.empty()) throw Error("config: no datasets listed under [datasets]");
  if (cfg.methods.empty()) throw Error("config: grid.methods is empty");
  if (cfg.clips.empty()) throw Error("config: grid.clip is empty");
  for (double c : cfg.clips) {
    if (!(c >= 0.0 && c < 1.0)) throw Error("config: clip values must be in [0,1)");
  }
  cfg.learner.validate();
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  auto cfg = parse_config(in, std::filesystem::absolute(path).parent_path());
  cfg.config_path = path;
  return cfg;
}

/// Loads, splits and (optionally) standardizes a dataset exactly as a run does.
inline Dataset prepare_dataset(const std::string& path, const RunConfig& cfg) {
  Dataset ds = split(load_csv(path, cfg.class_count), cfg.test_fraction, cfg.split_seed);
  return cfg.standardize ? standardize(ds) : ds;
}

// --------------------------------------------------------------------------
// Grid and manifest
// --------------------------------------------------------------------------

struct GridCell {
  std::string dataset;
  Method method = Method::Lc;
  double clip_fraction = 0.0;
  std::string file;  // result file name inside the output directory
};

inline std::string format_clip(double clip) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, clip);
  return std::string(buf, ptr);
}

inline std::vector<GridCell> build_grid(const RunConfig& cfg) {
  std::vector<GridCell> cells;
  std::set<std::string> names;
  for (const auto& d : cfg.datasets) {
    for (Method m : cfg.methods) {
      for (double c : cfg.clips) {
        GridCell cell{d.name, m, c, d.name + "__" + std::string(method_id(m)) + "__clip" + format_clip(c) + ".jsonl"};
        if (!names.insert(cell.file).second) throw Error("grid: duplicate cell " + cell.file);
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

inline nlohmann::ordered_json manifest_json(const RunConfig& cfg, const std::vector<GridCell>& cells,
                                            const std::string& out_dir) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["config_path"] = cfg.config_path;
  j["base_seed"] = cfg.base_seed;
  j["output_dir"] = out_dir;
  j["clock"] = cfg.clock == ClockKind::Wall ? "wall" : "counter";
  j["data"] = {{"test_fraction", cfg.test_fraction},
               {"split_seed", cfg.split_seed},
               {"standardize", cfg.standardize},
               {"class_count", cfg.class_count ? ordered_json(*cfg.class_count) : ordered_json(nullptr)}};
  auto ds = ordered_json::object();
  for (const auto& d : cfg.datasets) ds[d.name] = d.path;
  j["datasets"] = ds;
  j["protocol"] = {{"initial_labeled", cfg.initial_labeled},
                   {"iterations", cfg.iterations},
                   {"batch_size", cfg.batch_size},
                   {"repetitions", cfg.repetitions}};
  j["learner"] = {{"hidden_sizes", cfg.learner.hidden_sizes},
                  {"dropout", cfg.learner.dropout_rate},
                  {"epochs", cfg.learner.epochs},
                  {"learning_rate", cfg.learner.learning_rate},
                  {"batch_size", cfg.learner.batch_size}};
  j["method"] = {{"is_alpha", cfg.params.is_alpha},
                 {"is_lambda", cfg.params.is_lambda},
                 {"trust_k", cfg.params.trust_k},
                 {"trust_density", cfg.params.trust_density},
                 {"mc_passes", cfg.params.mc_passes},
                 {"ensemble_size", cfg.params.ensemble_size},
                 {"ls_alpha", cfg.params.ls_alpha},
                 {"evidential_anneal_epochs", cfg.params.evidential_anneal_epochs}};
  auto arr = ordered_json::array();
  for (const auto& c : cells) {
    arr.push_back({{"dataset", c.dataset},
                   {"method", std::string(method_id(c.method))},
                   {"clip_fraction", c.clip_fraction},
                   {"file", c.file}});
  }
  j["cells"] = arr;
  return j;
}

/// Reads the datasets a manifest references, prepared as during the run.
inline std::map<std::string, Dataset> datasets_from_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest: " + manifest_path.string());
  const auto j = nlohmann::json::parse(in);
  RunConfig cfg;
  cfg.test_fraction = j.at("data").at("test_fraction").get<double>();
  cfg.split_seed = j.at("data").at("split_seed").get<std::uint64_t>();
  cfg.standardize = j.at("data").at("standardize").get<bool>();
  if (!j.at("data").at("class_count").is_null()) cfg.class_count = j.at("data").at("class_count").get<int>();
  std::map<std::string, Dataset> out;
  for (const auto& [name, path] : j.at("datasets").items()) out[name] = prepare_dataset(path.get<std::string>(), cfg);
  return out;
}

inline ExperimentConfig experiment_for(const RunConfig& cfg, const GridCell& cell,
                                       std::shared_ptr<const Dataset> dataset) {
  ExperimentConfig e;
  e.dataset_name = cell.dataset;
  e.dataset = std::move(dataset);
  e.method = cell.method;
  e.clip_fraction = cell.clip_fraction;
  e.initial_labeled = cfg.initial_labeled;
  e.iterations = cfg.iterations;
  e.batch_size = cfg.batch_size;
  e.repetitions = cfg.repetitions;
  e.base_seed = cfg.base_seed;
  e.learner = cfg.learner;
  e.params = cfg.params;
  e.clock = cfg.clock;
  return e;
}

/// Runs `task(i)` for i in [0, n) on up to `jobs` threads.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) task(i);
  };
  if (jobs == 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
}

struct CellFailure {
  std::string file;
  std::string message;
};

/// Executes the grid into `out_dir`: writes manifest.json first, then one
/// result file per cell. Every dataset is loaded before any training
/// starts. Returns the failed cells (empty on success).
inline std::vector<CellFailure> run_grid(const RunConfig& cfg, const std::filesystem::path& out_dir, std::size_t jobs) {
  std::map<std::string, std::shared_ptr<const Dataset>> data;
  for (const auto& d : cfg.datasets) {
    if (!std::filesystem::exists(d.path)) throw Error("dataset " + d.name + " not found: " + d.path);
    data[d.name] = std::make_shared<const Dataset>(prepare_dataset(d.path, cfg));
  }
  const auto cells = build_grid(cfg);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "manifest.json");
    if (!f) throw Error("cannot write manifest in " + out_dir.string());
    f << manifest_json(cfg, cells, out_dir.string()).dump(2) << '\n';
  }

  std::vector<std::optional<std::string>> errors(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const auto& cell = cells[i];
    try {
      const auto result = run_experiment(experiment_for(cfg, cell, data.at(cell.dataset)));
      std::ofstream f(out_dir / cell.file, std::ios::binary);
      if (!f) throw Error("cannot write " + cell.file);
      write_result(result, f);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::vector<CellFailure> failures;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (errors[i]) failures.push_back({cells[i].file, *errors[i]});
  }
  return failures;
}

/// Analysis of a results directory into `out_dir`. Class shift needs the
/// datasets, which are located through manifest.json when present.
inline AnalysisTables analyze_directory(const std::filesystem::path& results_dir, const std::filesystem::path& out_dir) {
  const auto results = load_results(results_dir);
  std::map<std::string, Dataset> datasets;
  if (std::filesystem::exists(results_dir / "manifest.json")) datasets = datasets_from_manifest(results_dir / "manifest.json");
  auto tables = analyze(results, datasets);
  write_tables(tables, out_dir);
  return tables;
}

}  // namespace alsim
