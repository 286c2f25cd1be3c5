#include "alsim/simulator.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_util.hpp"

using namespace alsim;

namespace {

std::shared_ptr<const Dataset> blobs(Index per_class = 400, std::uint64_t seed = 1) {
  return std::make_shared<const Dataset>(split(generate_blobs(2, 4, per_class, 0.0, 4.0, seed).data, 0.2, seed));
}

/// Small, fast learner for loop-level tests.
ExperimentConfig quick_config(Method m) {
  ExperimentConfig cfg;
  cfg.dataset = blobs();
  cfg.method = m;
  cfg.learner.hidden_sizes = {8};
  cfg.learner.epochs = 3;
  cfg.params.mc_passes = 3;
  cfg.params.ensemble_size = 3;
  cfg.repetitions = 1;
  cfg.iterations = 6;
  cfg.clock = ClockKind::Counter;
  return cfg;
}

/// Records each training call while training a tiny model.
struct RecordingTrainer {
  struct Call {
    LearnerConfig config;
    IndexList labeled;
  };
  std::shared_ptr<std::vector<Call>> calls = std::make_shared<std::vector<Call>>();

  Trainer hook() const {
    auto log = calls;
    return [log](const LearnerConfig& c, const Dataset& ds, const IndexList& labeled) {
      log->push_back({c, labeled});
      LearnerConfig small = c;
      small.epochs = 1;
      small.hidden_sizes = {4};
      return train(small, ds, labeled);
    };
  }
};

}  // namespace

TEST(AccLast5, Examples) {
  std::vector<double> flat(20, 0.5);
  for (int i = 15; i < 20; ++i) flat[i] = 0.8;
  EXPECT_DOUBLE_EQ(compute_acc_last5(flat), 0.8);
  std::vector<double> tail(20, 0.0);
  const double t[] = {0.7, 0.8, 0.9, 1.0, 0.6};
  std::copy(std::begin(t), std::end(t), tail.begin() + 15);
  EXPECT_NEAR(compute_acc_last5(tail), 0.8, 1e-15);
  std::vector<double> distinct(20);
  for (int i = 0; i < 20; ++i) distinct[i] = 0.01 * (i + 1) + 0.001 * i * i;
  const double hand = (distinct[15] + distinct[16] + distinct[17] + distinct[18] + distinct[19]) / 5.0;
  EXPECT_DOUBLE_EQ(compute_acc_last5(distinct), hand);
  EXPECT_THROW(compute_acc_last5(std::vector<double>(4, 1.0)), Error);
}

TEST(Methods, IdsAndAliases) {
  for (Method m : kAllMethods) EXPECT_EQ(parse_method(method_id(m)), m);
  EXPECT_EQ(parse_method("softmax-lc"), Method::Lc);
  EXPECT_EQ(parse_method("softmax-ent"), Method::Ent);
  EXPECT_EQ(parse_method("softmax-mm"), Method::Mm);
  EXPECT_EQ(parse_method("passive"), Method::Passive);
  EXPECT_THROW(parse_method("bald"), Error);
}

TEST(Clock, ReportedSecondsArePositiveMilliseconds) {
  EXPECT_EQ(to_reported_seconds(0.0), 0.001);
  EXPECT_EQ(to_reported_seconds(0.0004), 0.001);
  EXPECT_EQ(to_reported_seconds(0.002), 0.002);
  EXPECT_EQ(to_reported_seconds(0.0021), 0.003);
  auto c = counter_clock();
  EXPECT_EQ(c(), 0.0);
  EXPECT_EQ(c(), 0.001);
}

TEST(TwoModelStep, LabelSmoothingTrainsTwoModels) {
  auto cfg = quick_config(Method::Ls);
  RecordingTrainer rec;
  const IndexList labeled(cfg.dataset->train_indices.begin(), cfg.dataset->train_indices.begin() + 30);
  const auto step = two_model_step(cfg, labeled, 11, 22, rec.hook());
  ASSERT_EQ(rec.calls->size(), 2u);
  EXPECT_EQ((*rec.calls)[0].config.loss, LossKind::CrossEntropy);
  EXPECT_EQ((*rec.calls)[0].config.head, HeadKind::Softmax);
  EXPECT_EQ((*rec.calls)[0].config.seed, 11u);
  EXPECT_EQ((*rec.calls)[1].config.loss, LossKind::LabelSmoothing);
  EXPECT_EQ((*rec.calls)[1].config.ls_alpha, 0.2);
  EXPECT_EQ((*rec.calls)[1].config.seed, 22u);
  EXPECT_FALSE(step.shared);
  EXPECT_EQ(step.selection.size(), 1u);
}

TEST(TwoModelStep, SoftmaxLcSharesPredictionModel) {
  auto cfg = quick_config(Method::Lc);
  RecordingTrainer rec;
  const IndexList labeled(cfg.dataset->train_indices.begin(), cfg.dataset->train_indices.begin() + 30);
  const auto step = two_model_step(cfg, labeled, 1, 2, rec.hook());
  EXPECT_EQ(rec.calls->size(), 1u);
  EXPECT_TRUE(step.shared);
  EXPECT_TRUE(step.selection.empty());
  const auto pool = IndexList(cfg.dataset->train_indices.begin() + 30, cfg.dataset->train_indices.end());
  const auto report = score_pool(cfg, step, labeled, pool, 0);
  EXPECT_EQ(report.distribution,
            softmax(forward_logits(step.prediction, gather_rows(cfg.dataset->features, pool))).distribution);
  EXPECT_THROW(two_model_step(cfg, {}, 1, 2, rec.hook()), Error);
}

TEST(TwoModelStep, EnsembleMembersUseConsecutiveSeeds) {
  auto cfg = quick_config(Method::Ve);
  cfg.params.ensemble_size = 5;
  RecordingTrainer rec;
  const IndexList labeled(cfg.dataset->train_indices.begin(), cfg.dataset->train_indices.begin() + 30);
  const auto step = two_model_step(cfg, labeled, 100, 200, rec.hook());
  ASSERT_EQ(rec.calls->size(), 6u);
  for (std::uint64_t e = 0; e < 5; ++e) {
    EXPECT_EQ((*rec.calls)[1 + e].config.seed, 200 + e);
    EXPECT_EQ((*rec.calls)[1 + e].config.loss, LossKind::CrossEntropy);
  }
  EXPECT_EQ(step.selection.size(), 5u);
}

TEST(TwoModelStep, MethodSpecificHeads) {
  const IndexList labeled{0, 1, 2, 3};
  for (auto [m, head, loss] : std::vector<std::tuple<Method, HeadKind, LossKind>>{
           {Method::Is, HeadKind::InhibitedSoftmax, LossKind::InhibitedSoftmax},
           {Method::Evi, HeadKind::Evidential, LossKind::Evidential},
           {Method::Mc, HeadKind::Softmax, LossKind::CrossEntropy},
           {Method::TeSc, HeadKind::Softmax, LossKind::CrossEntropy},
           {Method::TrSc, HeadKind::Softmax, LossKind::CrossEntropy}}) {
    auto cfg = quick_config(m);
    const auto sel = selection_config(cfg, 3);
    EXPECT_EQ(sel.head, head);
    EXPECT_EQ(sel.loss, loss);
    EXPECT_EQ(prediction_config(cfg, 3).loss, LossKind::CrossEntropy);
  }
}

TEST(RunExperiment, DefaultProtocolEndsWith525Labeled) {
  auto cfg = quick_config(Method::Rand);
  cfg.iterations = 20;
  cfg.repetitions = 2;
  const auto result = run_experiment(cfg);
  ASSERT_EQ(result.repetitions.size(), 2u);
  const auto& ds = *cfg.dataset;
  const std::set<Index> train(ds.train_indices.begin(), ds.train_indices.end());
  for (const auto& rep : result.repetitions) {
    ASSERT_EQ(rep.iterations.size(), 20u);
    std::set<Index> labeled(rep.initial.begin(), rep.initial.end());
    EXPECT_EQ(labeled.size(), 25u);
    for (const auto& it : rep.iterations) {
      EXPECT_EQ(it.queried.size(), 25u);
      for (Index i : it.queried) {
        EXPECT_TRUE(train.count(i));
        EXPECT_TRUE(labeled.insert(i).second) << "sample " << i << " queried twice";
      }
      EXPECT_GT(it.query_seconds, 0.0);
      EXPECT_GT(it.train_seconds, 0.0);
    }
    EXPECT_EQ(labeled.size(), 525u);
    ASSERT_TRUE(rep.acc_last5.has_value());
  }
}

TEST(RunExperiment, EveryMethodRuns) {
  for (Method m : kAllMethods) {
    auto cfg = quick_config(m);
    cfg.iterations = 5;
    const auto result = run_experiment(cfg);
    if (m == Method::Passive) {
      EXPECT_TRUE(result.passive_accuracy.has_value());
      continue;
    }
    ASSERT_EQ(result.repetitions.size(), 1u) << method_id(m);
    EXPECT_EQ(result.repetitions[0].iterations.size(), 5u);
    EXPECT_TRUE(result.repetitions[0].acc_last5.has_value());
  }
}

TEST(RunExperiment, PassiveTrainsOnceOnAllTrainData) {
  auto cfg = quick_config(Method::Passive);
  RecordingTrainer rec;
  const auto result = run_experiment(cfg, {.clock = {}, .trainer = rec.hook()});
  ASSERT_EQ(rec.calls->size(), 1u);
  EXPECT_EQ((*rec.calls)[0].labeled, cfg.dataset->train_indices);
  ASSERT_TRUE(result.passive_accuracy.has_value());
  EXPECT_GE(*result.passive_accuracy, 0.0);
  EXPECT_LE(*result.passive_accuracy, 1.0);
  EXPECT_TRUE(result.repetitions.empty());
  const std::set<Index> train(cfg.dataset->train_indices.begin(), cfg.dataset->train_indices.end());
  for (Index i : result.wrong) EXPECT_TRUE(train.count(i));
}

TEST(RunExperiment, DeterministicUnderCounterClock) {
  for (Method m : {Method::Lc, Method::Mc, Method::Kld, Method::Rand}) {
    auto cfg = quick_config(m);
    cfg.repetitions = 2;
    EXPECT_EQ(result_to_string(run_experiment(cfg)), result_to_string(run_experiment(cfg))) << method_id(m);
  }
}

TEST(RunExperiment, WallClockOnlyTimingsDiffer) {
  auto cfg = quick_config(Method::Lc);
  cfg.clock = ClockKind::Wall;
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  for (std::size_t t = 0; t < a.repetitions[0].iterations.size(); ++t) {
    EXPECT_EQ(a.repetitions[0].iterations[t].accuracy, b.repetitions[0].iterations[t].accuracy);
    EXPECT_EQ(a.repetitions[0].iterations[t].queried, b.repetitions[0].iterations[t].queried);
  }
}

TEST(RunExperiment, SeedChangesInitialDraw) {
  auto cfg = quick_config(Method::Rand);
  cfg.iterations = 1;
  const auto a = run_experiment(cfg);
  cfg.base_seed = 7;
  const auto b = run_experiment(cfg);
  EXPECT_NE(a.repetitions[0].initial, b.repetitions[0].initial);
}

TEST(RunExperiment, QueryTimeExcludesTraining) {
  // every training call advances the fake clock by 1000 s
  auto now = std::make_shared<double>(0.0);
  auto cfg = quick_config(Method::Ls);
  RecordingTrainer rec;
  auto inner = rec.hook();
  SimulatorHooks hooks;
  hooks.clock = [now] { return *now += 0.0005; };
  hooks.trainer = [now, inner](const LearnerConfig& c, const Dataset& d, const IndexList& l) {
    *now += 1000.0;
    return inner(c, d, l);
  };
  const auto result = run_experiment(cfg, hooks);
  for (const auto& it : result.repetitions[0].iterations) {
    EXPECT_LT(it.query_seconds, 1.0);
    EXPECT_GT(it.query_seconds, 0.0);
    EXPECT_GE(it.train_seconds, 2000.0);  // prediction + selection model
  }
}

TEST(RunExperiment, PredictionModelSeesOnlyRevealedLabels) {
  auto cfg = quick_config(Method::Lc);
  RecordingTrainer rec;
  const auto result = run_experiment(cfg, {.clock = {}, .trainer = rec.hook()});
  const auto& rep = result.repetitions[0];
  ASSERT_EQ(rec.calls->size(), rep.iterations.size());
  IndexList expected = rep.initial;
  for (std::size_t t = 0; t < rep.iterations.size(); ++t) {
    EXPECT_EQ((*rec.calls)[t].labeled, expected) << "iteration " << t + 1;
    expected.insert(expected.end(), rep.iterations[t].queried.begin(), rep.iterations[t].queried.end());
  }
}

TEST(RunExperiment, RandAndLcGrowAlike) {
  std::vector<std::size_t> sizes[2];
  int k = 0;
  for (Method m : {Method::Rand, Method::Lc}) {
    auto cfg = quick_config(m);
    RecordingTrainer rec;
    run_experiment(cfg, {.clock = {}, .trainer = rec.hook()});
    for (const auto& call : *rec.calls) {
      if (sizes[k].empty() || sizes[k].back() != call.labeled.size())
        sizes[k].push_back(call.labeled.size());
    }
    ++k;
  }
  EXPECT_EQ(sizes[0], sizes[1]);
  EXPECT_EQ(sizes[0].front(), 25u);
  EXPECT_EQ(sizes[0].back(), 25u + 5 * 25u);
}

TEST(RunExperiment, Errors) {
  auto cfg = quick_config(Method::Lc);
  cfg.iterations = 100;
  EXPECT_THROW(run_experiment(cfg), Error);
  cfg = quick_config(Method::Lc);
  cfg.dataset = std::make_shared<const Dataset>(generate_blobs(2, 2, 50, 0.0, 4.0, 0).data);
  EXPECT_THROW(run_experiment(cfg), Error);  // no test split
  cfg.dataset = nullptr;
  EXPECT_THROW(run_experiment(cfg), Error);
}

TEST(ResultFile, RoundTrip) {
  auto cfg = quick_config(Method::Mm);
  cfg.repetitions = 2;
  const auto result = run_experiment(cfg);
  const auto text = result_to_string(result);
  std::istringstream in(text);
  const auto back = read_result(in);
  EXPECT_EQ(result_to_string(back), text);
  EXPECT_EQ(back.repetitions[1].acc_last5, result.repetitions[1].acc_last5);

  auto pcfg = quick_config(Method::Passive);
  const auto passive = run_experiment(pcfg);
  std::istringstream pin(result_to_string(passive));
  const auto pback = read_result(pin);
  EXPECT_EQ(pback.passive_accuracy, passive.passive_accuracy);
  EXPECT_EQ(pback.wrong, passive.wrong);
}

TEST(ResultFile, FieldNames) {
  auto cfg = quick_config(Method::Rand);
  cfg.iterations = 1;
  std::istringstream in(result_to_string(run_experiment(cfg)));
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  for (const char* key : {"dataset", "method", "clip_fraction", "repetition", "iteration", "accuracy",
                          "query_seconds", "queried_indices"})
    EXPECT_TRUE(j.contains(key)) << key;
  std::getline(in, line);
  const auto s = nlohmann::json::parse(line);
  EXPECT_TRUE(s.contains("method"));
  EXPECT_TRUE(s.contains("acc_last5"));
  std::istringstream bad("{\"dataset\":\"x\"\n");
  EXPECT_THROW(read_result(bad), Error);
}
