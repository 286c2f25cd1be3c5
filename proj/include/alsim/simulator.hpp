#pragma once

// Pool-based active-learning simulation. Each iteration trains a vanilla
// prediction model (whose test accuracy is recorded) and a method-specific
// selection scorer (which ranks the pool), queries a batch and reveals its
// ground-truth labels.

#include "alsim/common.hpp"
#include "alsim/confidence.hpp"
#include "alsim/data.hpp"
#include "alsim/learner.hpp"
#include "alsim/strategy.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>

namespace alsim {

enum class Method { Lc, Ent, Mm, Rand, Is, TrSc, Evi, Mc, Ve, Kld, TeSc, Ls, Passive };

inline constexpr Method kAllMethods[] = {Method::Lc,  Method::Ent, Method::Mm,  Method::Rand, Method::Is,
                                         Method::TrSc, Method::Evi, Method::Mc,  Method::Ve,   Method::Kld,
                                         Method::TeSc, Method::Ls,  Method::Passive};

inline std::string_view method_id(Method m) {
  switch (m) {
    case Method::Lc: return "lc";
    case Method::Ent: return "ent";
    case Method::Mm: return "mm";
    case Method::Rand: return "rand";
    case Method::Is: return "is";
    case Method::TrSc: return "trsc";
    case Method::Evi: return "evi";
    case Method::Mc: return "mc";
    case Method::Ve: return "ve";
    case Method::Kld: return "kld";
    case Method::TeSc: return "tesc";
    case Method::Ls: return "ls";
    case Method::Passive: return "pass";
  }
  return "?";
}

/// Accepts the short ids plus the long aliases softmax-lc, softmax-ent,
/// softmax-mm and passive.
inline Method parse_method(std::string_view s) {
  if (s == "softmax-lc") return Method::Lc;
  if (s == "softmax-ent") return Method::Ent;
  if (s == "softmax-mm") return Method::Mm;
  if (s == "passive") return Method::Passive;
  for (Method m : kAllMethods) {
    if (method_id(m) == s) return m;
  }
  throw Error("unknown method id: " + std::string(s));
}

inline bool is_ensemble(Method m) { return m == Method::Ve || m == Method::Kld; }

/// Selection reuses the prediction model for the vanilla softmax strategies.
inline bool shares_prediction_model(Method m) { return m == Method::Lc || m == Method::Ent || m == Method::Mm; }

struct MethodParams {
  double is_alpha = 1.0;
  double is_lambda = 0.01;
  Index trust_k = 10;
  double trust_density = 0.0;
  int mc_passes = 50;
  int ensemble_size = 5;
  double ls_alpha = 0.2;
  int evidential_anneal_epochs = 10;
};

enum class ClockKind { Wall, Counter };

struct ExperimentConfig {
  std::string dataset_name = "dataset";
  std::shared_ptr<const Dataset> dataset;
  Method method = Method::Lc;
  double clip_fraction = 0.05;
  Index initial_labeled = 25;
  Index iterations = 20;
  Index batch_size = 25;
  Index repetitions = 10;
  std::uint64_t base_seed = 0;
  LearnerConfig learner;
  MethodParams params;
  ClockKind clock = ClockKind::Wall;
};

struct IterationRecord {
  Index iteration = 0;  // 1-based
  double accuracy = 0.0;
  double query_seconds = 0.0;
  double train_seconds = 0.0;
  IndexList queried;
};

struct RepetitionResult {
  Index repetition = 0;
  IndexList initial;
  std::vector<IterationRecord> iterations;
  std::optional<double> acc_last5;  // absent with fewer than 5 iterations
};

struct ExperimentResult {
  std::string dataset;
  Method method = Method::Lc;
  double clip_fraction = 0.0;
  std::vector<RepetitionResult> repetitions;
  std::optional<double> passive_accuracy;
  IndexList wrong;  // train samples the passive model misclassifies
};

/// Mean of the last five accuracies.
inline double compute_acc_last5(std::span<const double> accuracies) {
  if (accuracies.size() < 5) throw Error("acc_last5 needs at least 5 iterations");
  double sum = 0.0;
  for (std::size_t i = accuracies.size() - 5; i < accuracies.size(); ++i) sum += accuracies[i];
  return sum / 5.0;
}

// --------------------------------------------------------------------------
// Clocks and injectable hooks
// --------------------------------------------------------------------------

/// Returns seconds from an arbitrary origin.
using Clock = std::function<double()>;
using Trainer = std::function<LearnerModel(const LearnerConfig&, const Dataset&, const IndexList&)>;

inline Clock wall_clock() {
  return [] {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
  };
}

/// Deterministic clock advancing `tick` seconds per reading.
inline Clock counter_clock(double tick = 0.001) {
  auto n = std::make_shared<std::uint64_t>(0);
  return [n, tick] { return static_cast<double>((*n)++) * tick; };
}

/// Seconds rounded up to whole milliseconds, never below one millisecond.
inline double to_reported_seconds(double seconds) {
  return std::max(1.0, std::ceil(seconds * 1000.0 - 1e-6)) / 1000.0;
}

struct SimulatorHooks {
  Clock clock;      // defaults from ExperimentConfig::clock
  Trainer trainer;  // defaults to alsim::train
};

// --------------------------------------------------------------------------
// Two-model setup
// --------------------------------------------------------------------------

/// Learner config of the vanilla prediction model.
inline LearnerConfig prediction_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  LearnerConfig c = cfg.learner;
  c.head = HeadKind::Softmax;
  c.loss = LossKind::CrossEntropy;
  c.seed = seed;
  return c;
}

/// Learner config of the method's selection model.
inline LearnerConfig selection_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  LearnerConfig c = prediction_config(cfg, seed);
  c.ls_alpha = cfg.params.ls_alpha;
  c.is_alpha = cfg.params.is_alpha;
  c.is_lambda = cfg.params.is_lambda;
  c.evidential_anneal_epochs = cfg.params.evidential_anneal_epochs;
  switch (cfg.method) {
    case Method::Is:
      c.head = HeadKind::InhibitedSoftmax;
      c.loss = LossKind::InhibitedSoftmax;
      break;
    case Method::Evi:
      c.head = HeadKind::Evidential;
      c.loss = LossKind::Evidential;
      break;
    case Method::Ls: c.loss = LossKind::LabelSmoothing; break;
    default: break;
  }
  return c;
}

/// Models trained in one AL step.
struct TwoModelStep {
  LearnerModel prediction;
  std::vector<LearnerModel> selection;  // empty when shared or for rand
  bool shared = false;                  // selection scores use `prediction`
};

inline TwoModelStep two_model_step(const ExperimentConfig& cfg, const IndexList& labeled, std::uint64_t prediction_seed,
                                   std::uint64_t selection_seed, const Trainer& trainer) {
  if (labeled.empty()) throw Error("two_model_step: labeled set is empty");
  const Dataset& ds = *cfg.dataset;
  TwoModelStep step;
  step.prediction = trainer(prediction_config(cfg, prediction_seed), ds, labeled);
  if (shares_prediction_model(cfg.method)) {
    step.shared = true;
  } else if (is_ensemble(cfg.method)) {
    if (cfg.params.ensemble_size < 2) throw Error("ensemble methods need at least 2 members");
    for (int e = 0; e < cfg.params.ensemble_size; ++e) {
      step.selection.push_back(
          trainer(selection_config(cfg, selection_seed + static_cast<std::uint64_t>(e)), ds, labeled));
    }
  } else if (cfg.method != Method::Rand && cfg.method != Method::Passive) {
    step.selection.push_back(trainer(selection_config(cfg, selection_seed), ds, labeled));
  }
  return step;
}

/// Confidence report over `pool` from the step's selection scorer.
inline ConfidenceReport score_pool(const ExperimentConfig& cfg, const TwoModelStep& step, const IndexList& labeled,
                                   const IndexList& pool, std::uint64_t dropout_seed) {
  const Dataset& ds = *cfg.dataset;
  const Matrix x = gather_rows(ds.features, pool);
  const LearnerModel& sel = step.shared ? step.prediction : step.selection.front();
  switch (cfg.method) {
    case Method::Lc:
    case Method::Ent:
    case Method::Mm: return softmax(forward_logits(sel, x));
    case Method::Is: return inhibited_softmax(sel, x, cfg.params.is_alpha);
    case Method::Evi: return evidential_confidence(sel, x);
    case Method::Ls: return label_smoothing_confidence(sel, x);
    case Method::Mc: return mc_dropout(sel, x, cfg.params.mc_passes, dropout_seed);
    case Method::TeSc: {
      std::vector<int> y(labeled.size());
      for (std::size_t i = 0; i < labeled.size(); ++i) y[i] = ds.labels[labeled[i]];
      const double t = fit_temperature(forward_logits(sel, gather_rows(ds.features, labeled)), y);
      return temperature_scaled(forward_logits(sel, x), t);
    }
    case Method::TrSc: {
      const auto index = build_trust_index(ds, labeled, cfg.params.trust_k, cfg.params.trust_density);
      return trust_score(index, x, softmax(forward_logits(sel, x)));
    }
    case Method::Ve:
    case Method::Kld: {
      std::vector<Matrix> members;
      for (const auto& m : step.selection) members.push_back(softmax_probabilities(forward_logits(m, x)));
      return cfg.method == Method::Ve ? ensemble_vote_entropy(members) : ensemble_kld(members);
    }
    case Method::Rand:
    case Method::Passive: break;
  }
  throw Error("score_pool: method has no confidence scorer");
}

inline StrategyKind strategy_for(Method m) {
  switch (m) {
    case Method::Ent: return StrategyKind::Entropy;
    case Method::Mm: return StrategyKind::Margin;
    case Method::Rand: return StrategyKind::Random;
    default: return StrategyKind::LeastConfidence;
  }
}

// --------------------------------------------------------------------------
// Experiment loop
// --------------------------------------------------------------------------

/// Uniform draw of the initial labeled set, redrawn with a fresh sub-seed
/// while it holds a single class.
inline IndexList draw_initial(const Dataset& ds, Index count, std::uint64_t seed) {
  if (count > ds.train_indices.size()) throw Error("initial labeled set larger than the train partition");
  IndexList draw;
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    draw = ds.train_indices;
    for (Index i = 0; i < count; ++i) {
      std::uniform_int_distribution<Index> pick(i, draw.size() - 1);
      std::swap(draw[i], draw[pick(rng)]);
    }
    draw.resize(count);
    const auto counts = ds.class_counts(draw);
    if (std::count_if(counts.begin(), counts.end(), [](Index c) { return c > 0; }) >= 2) return draw;
  }
  warn("initial labeled set holds a single class after 100 redraws");
  return draw;
}

inline ExperimentResult run_passive(const ExperimentConfig& cfg, const Trainer& trainer) {
  const Dataset& ds = *cfg.dataset;
  ExperimentResult result;
  result.dataset = cfg.dataset_name;
  result.method = Method::Passive;
  result.clip_fraction = cfg.clip_fraction;
  const auto model = trainer(prediction_config(cfg, derive_seed(cfg.base_seed, tag(Stream::Passive))), ds,
                             ds.train_indices);
  result.passive_accuracy = accuracy(model, ds, ds.test_indices);
  const Matrix logits = forward_logits(model, gather_rows(ds.features, ds.train_indices));
  for (std::size_t i = 0; i < ds.train_indices.size(); ++i) {
    const Index idx = ds.train_indices[i];
    if (static_cast<int>(argmax(logits.row(static_cast<Eigen::Index>(i)))) != ds.labels[idx]) result.wrong.push_back(idx);
  }
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, SimulatorHooks hooks = {}) {
  if (!cfg.dataset) throw Error("experiment: no dataset");
  const Dataset& ds = *cfg.dataset;
  ds.validate();
  if (ds.test_indices.empty()) throw Error("experiment: dataset has no test partition (split it first)");
  if (!hooks.trainer) hooks.trainer = [](const LearnerConfig& c, const Dataset& d, const IndexList& l) { return train(c, d, l); };
  if (!hooks.clock) hooks.clock = cfg.clock == ClockKind::Counter ? counter_clock() : wall_clock();

  if (cfg.method == Method::Passive) return run_passive(cfg, hooks.trainer);

  if (cfg.initial_labeled + cfg.iterations * cfg.batch_size > ds.train_indices.size())
    throw Error("experiment: pool exhausted (initial + iterations * batch exceeds the train partition)");

  ExperimentResult result;
  result.dataset = cfg.dataset_name;
  result.method = cfg.method;
  result.clip_fraction = cfg.clip_fraction;
  const Clock& clock = hooks.clock;

  for (Index r = 0; r < cfg.repetitions; ++r) {
    const std::uint64_t rep_seed = cfg.base_seed + r;
    RepetitionResult rep;
    rep.repetition = r;
    rep.initial = draw_initial(ds, cfg.initial_labeled, derive_seed(rep_seed, tag(Stream::InitialDraw)));
    PoolState pool(ds.train_indices, rep.initial);

    std::vector<double> accuracies;
    for (Index t = 1; t <= cfg.iterations; ++t) {
      IterationRecord rec;
      rec.iteration = t;

      const double train_start = clock();
      const auto step = two_model_step(cfg, pool.labeled(), derive_seed(rep_seed, tag(Stream::Prediction), t),
                                       derive_seed(rep_seed, tag(Stream::Selection), t), hooks.trainer);
      const double train_end = clock();
      rec.accuracy = accuracy(step.prediction, ds, ds.test_indices);

      const double query_start = clock();
      QueryRequest req;
      req.pool = pool.unlabeled();
      req.batch_size = cfg.batch_size;
      req.clip_fraction = cfg.clip_fraction;
      req.seed = derive_seed(rep_seed, tag(Stream::Query), t);
      ConfidenceReport report;
      if (cfg.method != Method::Rand) {
        report = score_pool(cfg, step, pool.labeled(), pool.unlabeled(),
                            derive_seed(rep_seed, tag(Stream::Dropout), t));
        req.reports = &report;
      }
      rec.queried = select(strategy_for(cfg.method), req);
      const double query_end = clock();

      rec.train_seconds = to_reported_seconds(train_end - train_start);
      rec.query_seconds = to_reported_seconds(query_end - query_start);
      pool.label(rec.queried);
      accuracies.push_back(rec.accuracy);
      rep.iterations.push_back(std::move(rec));
    }
    if (accuracies.size() >= 5) rep.acc_last5 = compute_acc_last5(accuracies);
    result.repetitions.push_back(std::move(rep));
  }
  return result;
}

// --------------------------------------------------------------------------
// Result files (JSON lines)
//
// One record per (repetition, iteration):
//   {"dataset","method","clip_fraction","repetition","iteration","accuracy",
//    "query_seconds","train_seconds","queried_indices"}
// followed by one summary record:
//   {"dataset","method","clip_fraction","acc_last5":[...],"initial_indices":[[...],...]}
// The passive baseline writes only a summary record, with "acc_last5" holding
// its single accuracy plus "passive_accuracy" and "wrong_indices".
// --------------------------------------------------------------------------

inline void write_result(const ExperimentResult& result, std::ostream& out) {
  using nlohmann::ordered_json;
  const std::string method(method_id(result.method));
  for (const auto& rep : result.repetitions) {
    for (const auto& it : rep.iterations) {
      ordered_json j;
      j["dataset"] = result.dataset;
      j["method"] = method;
      j["clip_fraction"] = result.clip_fraction;
      j["repetition"] = rep.repetition;
      j["iteration"] = it.iteration;
      j["accuracy"] = it.accuracy;
      j["query_seconds"] = it.query_seconds;
      j["train_seconds"] = it.train_seconds;
      j["queried_indices"] = it.queried;
      out << j.dump() << '\n';
    }
  }
  ordered_json s;
  s["dataset"] = result.dataset;
  s["method"] = method;
  s["clip_fraction"] = result.clip_fraction;
  if (result.passive_accuracy) {
    s["acc_last5"] = ordered_json::array({*result.passive_accuracy});
    s["passive_accuracy"] = *result.passive_accuracy;
    s["wrong_indices"] = result.wrong;
  } else {
    auto acc = ordered_json::array();
    auto init = ordered_json::array();
    for (const auto& rep : result.repetitions) {
      acc.push_back(rep.acc_last5 ? ordered_json(*rep.acc_last5) : ordered_json(nullptr));
      init.push_back(rep.initial);
    }
    s["acc_last5"] = acc;
    s["initial_indices"] = init;
  }
  out << s.dump() << '\n';
}

inline std::string result_to_string(const ExperimentResult& result) {
  std::ostringstream os;
  write_result(result, os);
  return os.str();
}

inline ExperimentResult read_result(std::istream& in) {
  using nlohmann::json;
  ExperimentResult result;
  std::string line;
  bool have_summary = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("result file line " + std::to_string(line_no) + ": " + e.what());
    }
    result.dataset = j.at("dataset").get<std::string>();
    result.method = parse_method(j.at("method").get<std::string>());
    result.clip_fraction = j.at("clip_fraction").get<double>();
    if (j.contains("acc_last5")) {
      have_summary = true;
      if (j.contains("passive_accuracy")) {
        result.passive_accuracy = j.at("passive_accuracy").get<double>();
        result.wrong = j.at("wrong_indices").get<IndexList>();
        continue;
      }
      const auto& acc = j.at("acc_last5");
      const auto& init = j.at("initial_indices");
      for (std::size_t r = 0; r < acc.size() && r < result.repetitions.size(); ++r) {
        if (!acc[r].is_null()) result.repetitions[r].acc_last5 = acc[r].get<double>();
        result.repetitions[r].initial = init.at(r).get<IndexList>();
      }
      continue;
    }
    const auto r = j.at("repetition").get<Index>();
    if (r >= result.repetitions.size()) result.repetitions.resize(r + 1);
    result.repetitions[r].repetition = r;
    IterationRecord rec;
    rec.iteration = j.at("iteration").get<Index>();
    rec.accuracy = j.at("accuracy").get<double>();
    rec.query_seconds = j.at("query_seconds").get<double>();
    rec.train_seconds = j.value("train_seconds", 0.0);
    rec.queried = j.at("queried_indices").get<IndexList>();
    result.repetitions[r].iterations.push_back(std::move(rec));
  }
  if (!have_summary) throw Error("result file has no summary record");
  return result;
}

}  // namespace alsim
