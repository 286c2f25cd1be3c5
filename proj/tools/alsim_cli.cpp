// alsim: generate synthetic datasets, run active-learning experiment grids,
// and analyze their results.

#include "alsim/alsim.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace {

struct GenDataOptions {
  int classes = 2;
  alsim::Index dim = 16;
  alsim::Index per_class = 1000;
  double outlier_fraction = 0.0;
  double separation = 6.0;
  std::uint64_t seed = 0;
  std::string out;
};

/// Sidecar listing ground-truth outliers: blobs.csv -> blobs.outliers.csv
fs::path outlier_sidecar(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension();
  return fs::path(p.string() + ".outliers.csv");
}

int cmd_gen_data(const GenDataOptions& o) {
  const auto blobs = alsim::generate_blobs(o.classes, o.dim, o.per_class, o.outlier_fraction, o.separation, o.seed);
  alsim::save_csv(blobs.data, o.out);
  const auto sidecar = outlier_sidecar(o.out);
  std::ofstream f(sidecar);
  if (!f) throw alsim::Error("cannot write " + sidecar.string());
  f << "index\n";
  for (auto i : blobs.outliers) f << i << '\n';
  std::cout << "wrote " << blobs.data.size() << " samples to " << o.out << " and " << blobs.outliers.size()
            << " outlier indices to " << sidecar.string() << '\n';
  return 0;
}

int cmd_run(const std::string& config, const std::string& out, std::size_t jobs) {
  const auto cfg = alsim::parse_config_file(config);
  const auto failures = alsim::run_grid(cfg, out, jobs);
  const auto cells = alsim::build_grid(cfg).size();
  for (const auto& f : failures) std::cerr << "cell " << f.file << " failed: " << f.message << '\n';
  std::cout << (cells - failures.size()) << "/" << cells << " cells completed in " << out << '\n';
  return failures.empty() ? 0 : 1;
}

int cmd_analyze(const std::string& results, const std::string& out) {
  alsim::analyze_directory(results, out.empty() ? results : out);
  std::cout << "wrote summary.csv, jaccard.csv, jaccard_delta.csv, class_shift.csv to "
            << (out.empty() ? results : out) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pool-based active learning simulator"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate Gaussian blobs with label-noise outliers");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes")->check(CLI::Range(2, 1000));
  gen_cmd->add_option("--dim", gen.dim, "Feature dimension")->check(CLI::Range(1, 100000));
  gen_cmd->add_option("--per-class", gen.per_class, "Samples per class")->check(CLI::Range(10, 100000000));
  gen_cmd->add_option("--outlier-fraction", gen.outlier_fraction, "Fraction of relabeled samples, in [0,1)");
  gen_cmd->add_option("--separation", gen.separation, "Minimum distance between class centers");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--out", gen.out, "Output CSV path")->required();

  std::string config;
  std::string run_out = "results";
  std::size_t jobs = 1;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment grid from a config file");
  run_cmd->add_option("config", config, "Config file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", run_out, "Output directory");
  run_cmd->add_option("--jobs", jobs, "Concurrent grid cells")->check(CLI::Range(1, 1024));

  std::string results_dir;
  std::string analyze_out;
  auto* analyze_cmd = app.add_subcommand("analyze", "Build analysis tables from a results directory");
  analyze_cmd->add_option("results", results_dir, "Results directory")->required()->check(CLI::ExistingDirectory);
  analyze_cmd->add_option("--out", analyze_out, "Output directory (default: the results directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*run_cmd) return cmd_run(config, run_out, jobs);
    if (*analyze_cmd) return cmd_analyze(results_dir, analyze_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
