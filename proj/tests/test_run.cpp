#include "alsim/run.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace alsim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(ALSIM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "/base");
}

/// A fresh directory under the test scratch area.
fs::path fresh(const std::string& name) {
  const auto d = test::temp_dir() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kSmallRun = R"([experiment]
base_seed = 3
clock = counter
[datasets]
toy = toy.csv
[grid]
methods = rand, lc
clip = 0.0, 0.05
[protocol]
initial_labeled = 10
iterations = 5
batch_size = 10
repetitions = 2
[learner]
hidden_sizes = 8
epochs = 3
)";

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto cfg = parse(
      "; comment\n[datasets]\nblobs = data/blobs.csv\nabs = /tmp/x.csv\n"
      "[grid]\nmethods = softmax-lc, ve, pass\nclip = 0, 0.05, 0.1\n"
      "[learner]\nhidden_sizes = 64, 32\ndropout = 0.2\n"
      "[method]\nmc_passes = 7\n[data]\nstandardize = true\n");
  ASSERT_EQ(cfg.datasets.size(), 2u);
  EXPECT_EQ(cfg.datasets[0].path, "/base/data/blobs.csv");
  EXPECT_EQ(cfg.datasets[1].path, "/tmp/x.csv");
  EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::Lc, Method::Ve, Method::Passive}));
  EXPECT_EQ(cfg.clips, (std::vector<double>{0.0, 0.05, 0.1}));
  EXPECT_EQ(cfg.learner.hidden_sizes, (std::vector<Index>{64, 32}));
  EXPECT_EQ(cfg.learner.dropout_rate, 0.2);
  EXPECT_EQ(cfg.params.mc_passes, 7);
  EXPECT_TRUE(cfg.standardize);
  // untouched defaults
  EXPECT_EQ(cfg.iterations, 20u);
  EXPECT_EQ(cfg.batch_size, 25u);
  EXPECT_EQ(cfg.initial_labeled, 25u);
  EXPECT_EQ(cfg.repetitions, 10u);
  EXPECT_EQ(cfg.params.ensemble_size, 5);
  EXPECT_EQ(cfg.params.trust_k, 10u);
  EXPECT_EQ(cfg.params.is_alpha, 1.0);
  EXPECT_EQ(cfg.params.ls_alpha, 0.2);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse("[datasets]\na = a.csv\n[grid]\nmethod = lc\n"), Error);
  EXPECT_THROW(parse("[datasets]\na = a.csv\n[gird]\nmethods = lc\n"), Error);
  EXPECT_THROW(parse("[datasets]\na = a.csv\n[grid]\nmethods = lc, bald\n"), Error);
  EXPECT_THROW(parse("[datasets]\na = a.csv\n[grid]\nclip = 1.0\n"), Error);
  EXPECT_THROW(parse("[datasets]\na = a.csv\n[protocol]\niterations = ten\n"), Error);
  EXPECT_THROW(parse("[datasets]\na = a.csv\n[learner]\ndropout = 1.5\n"), Error);
  EXPECT_THROW(parse("[datasets]\na = a.csv\n[experiment]\nclock = sundial\n"), Error);
  EXPECT_THROW(parse("[grid]\nmethods = lc\n"), Error);  // no datasets
}

TEST(Grid, CellsHaveUniqueFiles) {
  auto cfg = parse(kSmallRun);
  const auto cells = build_grid(cfg);
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(cells[0].file, "toy__rand__clip0.jsonl");
  EXPECT_EQ(cells[1].file, "toy__rand__clip0.05.jsonl");
  EXPECT_EQ(cells[3].file, "toy__lc__clip0.05.jsonl");
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (std::size_t jobs : {1u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, jobs, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(RunGrid, WritesFourFilesAndManifest) {
  const auto dir = fresh("grid4");
  save_csv(generate_blobs(2, 3, 60, 0.0, 4.0, 1).data, (dir / "toy.csv").string());
  std::ofstream(dir / "run.ini") << kSmallRun;
  const auto cfg = parse_config_file((dir / "run.ini").string());
  const auto failures = run_grid(cfg, dir / "out", 2);
  EXPECT_TRUE(failures.empty());
  for (const auto& cell : build_grid(cfg)) EXPECT_TRUE(fs::exists(dir / "out" / cell.file)) << cell.file;
  ASSERT_TRUE(fs::exists(dir / "out" / "manifest.json"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest.at("base_seed"), 3);
  EXPECT_EQ(manifest.at("cells").size(), 4u);

  const auto again = fresh("grid4_again");
  run_grid(cfg, again, 1);
  for (const auto& cell : build_grid(cfg)) EXPECT_EQ(slurp(again / cell.file), slurp(dir / "out" / cell.file));
}

TEST(RunGrid, MissingDatasetFailsBeforeTraining) {
  const auto dir = fresh("missing");
  std::ofstream(dir / "run.ini") << kSmallRun;
  const auto cfg = parse_config_file((dir / "run.ini").string());
  EXPECT_THROW(run_grid(cfg, dir / "out", 1), Error);
  EXPECT_FALSE(fs::exists(dir / "out" / "manifest.json"));
}

TEST(RunGrid, CellFailureIsReported) {
  const auto dir = fresh("cellfail");
  save_csv(generate_blobs(2, 3, 20, 0.0, 4.0, 1).data, (dir / "toy.csv").string());
  std::ofstream(dir / "run.ini") << kSmallRun;  // 10 + 5 * 10 > 32 train samples
  const auto cfg = parse_config_file((dir / "run.ini").string());
  const auto failures = run_grid(cfg, dir / "out", 1);
  EXPECT_EQ(failures.size(), 4u);
}

TEST(AnalyzeDirectory, WritesTablesIdempotently) {
  const auto dir = fresh("analyze");
  save_csv(generate_blobs(2, 3, 60, 0.0, 4.0, 1).data, (dir / "toy.csv").string());
  std::ofstream(dir / "run.ini") << kSmallRun;
  const auto cfg = parse_config_file((dir / "run.ini").string());
  run_grid(cfg, dir / "out", 1);
  analyze_directory(dir / "out", dir / "tables");
  const std::string names[] = {"summary.csv", "jaccard.csv", "jaccard_delta.csv", "class_shift.csv"};
  std::vector<std::string> first;
  for (const auto& n : names) {
    ASSERT_TRUE(fs::exists(dir / "tables" / n)) << n;
    first.push_back(slurp(dir / "tables" / n));
  }
  EXPECT_NE(first[2].find("toy,0.05,lc,rand"), std::string::npos) << first[2];
  EXPECT_NE(first[3].find("toy,rand,0,"), std::string::npos) << first[3];
  analyze_directory(dir / "out", dir / "tables");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(slurp(dir / "tables" / names[i]), first[i]);
}

TEST(Cli, GenDataCountsAndDeterminism) {
  const auto dir = fresh("cli_gen");
  const std::string args = "gen-data --classes 2 --dim 16 --per-class 1000 --outlier-fraction 0.1 --seed 7 --out ";
  ASSERT_EQ(cli(args + (dir / "a.csv").string()), 0);
  ASSERT_EQ(cli(args + (dir / "b.csv").string()), 0);
  const auto ds = load_csv((dir / "a.csv").string());
  EXPECT_EQ(ds.size(), 2000u);
  EXPECT_EQ(ds.dim(), 16u);
  const auto sidecar = slurp(dir / "a.outliers.csv");
  EXPECT_EQ(std::count(sidecar.begin(), sidecar.end(), '\n'), 201);  // header + 200
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(sidecar, slurp(dir / "b.outliers.csv"));
}

TEST(Cli, GenDataRejectsFullOutlierFraction) {
  const auto dir = fresh("cli_bad");
  EXPECT_NE(cli("gen-data --outlier-fraction 1.0 --out " + (dir / "x.csv").string()), 0);
  EXPECT_FALSE(fs::exists(dir / "x.csv"));
  EXPECT_NE(cli("gen-data --classes 1 --out " + (dir / "y.csv").string()), 0);
}

TEST(Cli, RunAndAnalyze) {
  const auto dir = fresh("cli_run");
  save_csv(generate_blobs(2, 3, 60, 0.0, 4.0, 1).data, (dir / "toy.csv").string());
  std::ofstream(dir / "run.ini") << kSmallRun;
  EXPECT_EQ(cli("run " + (dir / "run.ini").string() + " --out " + (dir / "out").string() + " --jobs 2"), 0);
  EXPECT_EQ(cli("analyze " + (dir / "out").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "summary.csv"));
  // a single rand result yields one summary row plus its ALL row
  const auto single = fresh("cli_single");
  fs::copy_file(dir / "out" / "toy__rand__clip0.jsonl", single / "toy__rand__clip0.jsonl");
  EXPECT_EQ(cli("analyze " + single.string()), 0);
  const auto summary = slurp(single / "summary.csv");
  EXPECT_NE(summary.find("\ntoy,rand,0,2,"), std::string::npos) << summary;
}

TEST(Cli, ErrorsExitNonZero) {
  const auto empty = fresh("cli_empty");
  EXPECT_EQ(cli("analyze " + empty.string()), 2);
  std::ofstream(empty / "bad.ini") << "[grid]\nmethodz = lc\n";
  EXPECT_EQ(cli("run " + (empty / "bad.ini").string() + " --out " + (empty / "o").string()), 2);
  const auto dir = fresh("cli_fail");
  save_csv(generate_blobs(2, 3, 20, 0.0, 4.0, 1).data, (dir / "toy.csv").string());
  std::ofstream(dir / "run.ini") << kSmallRun;
  EXPECT_EQ(cli("run " + (dir / "run.ini").string() + " --out " + (dir / "out").string()), 1);
  EXPECT_NE(cli("frobnicate"), 0);
}
