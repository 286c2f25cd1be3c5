#pragma once

// Feedforward ReLU classifier with swappable output head and loss, trained
// by plain mini-batch gradient descent. Everything random flows from
// explicit seeds, so (config, data, seed) determines the parameters.

#include "alsim/common.hpp"
#include "alsim/data.hpp"
#include "alsim/losses.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace alsim {

enum class HeadKind { Softmax, InhibitedSoftmax, Evidential };
enum class LossKind { CrossEntropy, LabelSmoothing, InhibitedSoftmax, Evidential };

inline std::string_view to_string(HeadKind h) {
  switch (h) {
    case HeadKind::Softmax: return "softmax";
    case HeadKind::InhibitedSoftmax: return "inhibited";
    case HeadKind::Evidential: return "evidential";
  }
  return "?";
}

inline HeadKind head_from_string(std::string_view s) {
  if (s == "softmax") return HeadKind::Softmax;
  if (s == "inhibited") return HeadKind::InhibitedSoftmax;
  if (s == "evidential") return HeadKind::Evidential;
  throw Error("unknown head kind: " + std::string(s));
}

/// Loss selection plus its hyperparameters. Only the fields relevant to
/// `kind` are read.
struct LossSpec {
  LossKind kind = LossKind::CrossEntropy;
  double smoothing = 0.2;       // label smoothing alpha
  double inhibition = 1.0;      // inhibited softmax constant alpha
  double evident_reg = 0.01;    // inhibited softmax regularizer weight
  double anneal_coef = 1.0;     // evidential KL weight
};

inline LossResult evaluate_loss(const LossSpec& spec, const Matrix& logits, std::span<const int> labels) {
  switch (spec.kind) {
    case LossKind::CrossEntropy: return loss_cross_entropy(logits, labels);
    case LossKind::LabelSmoothing: return loss_label_smoothing(logits, labels, spec.smoothing);
    case LossKind::InhibitedSoftmax: return loss_inhibited(logits, labels, spec.inhibition, spec.evident_reg);
    case LossKind::Evidential: return loss_evidential(logits, labels, spec.anneal_coef);
  }
  throw Error("unknown loss kind");
}

struct LearnerConfig {
  std::vector<Index> hidden_sizes{128};
  double dropout_rate = 0.1;
  HeadKind head = HeadKind::Softmax;
  LossKind loss = LossKind::CrossEntropy;
  double ls_alpha = 0.2;
  double is_alpha = 1.0;
  double is_lambda = 0.01;
  int evidential_anneal_epochs = 10;
  int epochs = 100;
  double learning_rate = 0.05;
  Index batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("learner: dropout_rate must be in [0,1)");
    if (epochs < 0) throw Error("learner: epochs must be nonnegative");
    if (batch_size < 1) throw Error("learner: batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw Error("learner: learning_rate must be nonnegative");
    for (Index h : hidden_sizes) {
      if (h == 0) throw Error("learner: hidden layer width must be positive");
    }
    const bool ok = (head == HeadKind::Softmax && (loss == LossKind::CrossEntropy || loss == LossKind::LabelSmoothing)) ||
                    (head == HeadKind::InhibitedSoftmax && loss == LossKind::InhibitedSoftmax) ||
                    (head == HeadKind::Evidential && loss == LossKind::Evidential);
    if (!ok) throw Error("learner: head and loss are incompatible");
  }

  /// Loss hyperparameters at a given epoch (the evidential KL weight ramps
  /// linearly from 0 to 1 over `evidential_anneal_epochs`).
  LossSpec loss_spec(int epoch) const {
    LossSpec spec;
    spec.kind = loss;
    spec.smoothing = ls_alpha;
    spec.inhibition = is_alpha;
    spec.evident_reg = is_lambda;
    spec.anneal_coef = evidential_anneal_epochs <= 0
                           ? 1.0
                           : std::min(1.0, static_cast<double>(epoch) / evidential_anneal_epochs);
    return spec;
  }
};

struct Layer {
  Matrix weights;  // fan_in x fan_out
  RowVector bias;  // empty when the layer has no bias
  bool has_bias() const { return bias.size() > 0; }
};

struct LearnerModel {
  std::vector<Layer> layers;
  HeadKind head = HeadKind::Softmax;
  double dropout_rate = 0.0;
  bool trained = false;

  Index input_dim() const { return layers.empty() ? 0 : static_cast<Index>(layers.front().weights.rows()); }
  Index class_count() const { return layers.empty() ? 0 : static_cast<Index>(layers.back().weights.cols()); }
  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<RowVector> bias;  // empty entries for bias-less layers
  double loss = 0.0;
};

/// Glorot-uniform initialization; the final layer drops its bias for the
/// inhibited softmax head.
inline LearnerModel init_model(Index input_dim, Index class_count, const std::vector<Index>& hidden,
                               HeadKind head, double dropout_rate, std::uint64_t seed) {
  LearnerModel model;
  model.head = head;
  model.dropout_rate = dropout_rate;
  Rng rng(seed);
  Index fan_in = input_dim;
  for (std::size_t l = 0; l <= hidden.size(); ++l) {
    const bool last = l == hidden.size();
    const Index fan_out = last ? class_count : hidden[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Layer layer;
    layer.weights.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = u(rng);
    if (!(last && head == HeadKind::InhibitedSoftmax)) layer.bias = RowVector::Zero(static_cast<Eigen::Index>(fan_out));
    model.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return model;
}

/// The untrained model `train` starts from for this config.
inline LearnerModel init_model(const LearnerConfig& config, Index input_dim, Index class_count) {
  return init_model(input_dim, class_count, config.hidden_sizes, config.head, config.dropout_rate,
                    derive_seed(config.seed, 0));
}

namespace detail {

/// Per-layer activations kept for backpropagation.
struct ForwardTrace {
  std::vector<Matrix> inputs;  // input to each layer (post-dropout)
  std::vector<Matrix> masks;   // scaled dropout mask per hidden layer; empty if inactive
  std::vector<Matrix> pre;     // pre-activation of each hidden layer
  Matrix logits;
};

inline ForwardTrace forward(const LearnerModel& model, const Matrix& x, Rng* dropout_rng) {
  if (static_cast<Index>(x.cols()) != model.input_dim())
    throw Error("forward: feature dimension " + std::to_string(x.cols()) + " does not match model input " +
                std::to_string(model.input_dim()));
  ForwardTrace t;
  const double keep = 1.0 - model.dropout_rate;
  const bool drop = dropout_rng != nullptr && model.dropout_rate > 0.0;
  Matrix h = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Matrix a = h * layer.weights;
    if (layer.has_bias()) a.rowwise() += layer.bias;
    t.inputs.push_back(std::move(h));
    if (l + 1 == model.layers.size()) {
      t.logits = std::move(a);
      break;
    }
    h = a.cwiseMax(0.0);
    Matrix mask;
    if (drop) {
      std::bernoulli_distribution survive(keep);
      mask.resize(h.rows(), h.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = survive(*dropout_rng) ? 1.0 / keep : 0.0;
      h = h.cwiseProduct(mask);
    }
    t.masks.push_back(std::move(mask));
    t.pre.push_back(std::move(a));
  }
  return t;
}

inline Gradients backward(const LearnerModel& model, const ForwardTrace& t, const Matrix& d_logits) {
  Gradients g;
  const std::size_t n_layers = model.layers.size();
  g.weights.resize(n_layers);
  g.bias.resize(n_layers);
  Matrix delta = d_logits;
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& layer = model.layers[l];
    g.weights[l] = t.inputs[l].transpose() * delta;
    if (layer.has_bias()) g.bias[l] = delta.colwise().sum();
    if (l == 0) break;
    Matrix dh = delta * layer.weights.transpose();
    const auto& mask = t.masks[l - 1];
    if (mask.size() > 0) dh = dh.cwiseProduct(mask);
    delta = dh.cwiseProduct((t.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return g;
}

}  // namespace detail

/// Logits for every row of `features`. With `dropout_active`, each hidden
/// unit is zeroed with probability dropout_rate and survivors are scaled by
/// 1 / (1 - dropout_rate); the masks are drawn from `rng_seed`.
inline Matrix forward_logits(const LearnerModel& model, const Matrix& features, bool dropout_active = false,
                             std::uint64_t rng_seed = 0) {
  if (!dropout_active) return detail::forward(model, features, nullptr).logits;
  Rng rng(rng_seed);
  return detail::forward(model, features, &rng).logits;
}

/// Exact gradient of `loss` over one mini-batch, dropout inactive.
inline Gradients gradient(const LearnerModel& model, const LossSpec& loss, const Matrix& features,
                          std::span<const int> labels) {
  auto trace = detail::forward(model, features, nullptr);
  auto lr = evaluate_loss(loss, trace.logits, labels);
  auto g = detail::backward(model, trace, lr.grad);
  g.loss = lr.value;
  return g;
}

inline void apply_step(LearnerModel& model, const Gradients& g, double learning_rate) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    model.layers[l].weights -= learning_rate * g.weights[l];
    if (model.layers[l].has_bias()) model.layers[l].bias -= learning_rate * g.bias[l];
  }
}

/// Trains a fresh model on `ds` restricted to `labeled`.
inline LearnerModel train(const LearnerConfig& config, const Dataset& ds, const IndexList& labeled) {
  config.validate();
  if (labeled.size() < 2) throw Error("train: need at least 2 labeled samples");
  {
    const auto counts = ds.class_counts(labeled);
    const auto present = std::count_if(counts.begin(), counts.end(), [](Index c) { return c > 0; });
    if (present < 2) warn("train: labeled set contains a single class");
  }

  LearnerModel model = init_model(config, ds.dim(), static_cast<Index>(ds.class_count));
  Rng rng(derive_seed(config.seed, 1));
  const Matrix x_all = gather_rows(ds.features, labeled);
  std::vector<int> y_all(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) y_all[i] = ds.labels[labeled[i]];

  IndexList order = iota_indices(labeled.size());
  Matrix xb;
  std::vector<int> yb;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const LossSpec spec = config.loss_spec(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      xb.resize(static_cast<Eigen::Index>(end - start), x_all.cols());
      yb.resize(end - start);
      for (std::size_t i = start; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - start)) = x_all.row(static_cast<Eigen::Index>(order[i]));
        yb[i - start] = y_all[order[i]];
      }
      auto trace = detail::forward(model, xb, &rng);
      auto lr = evaluate_loss(spec, trace.logits, yb);
      if (!std::isfinite(lr.value)) {
        throw Error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch) +
                    "; try a smaller learning rate");
      }
      apply_step(model, detail::backward(model, trace, lr.grad), config.learning_rate);
      if (!model.all_finite()) throw Error("train: parameters became non-finite at epoch " + std::to_string(epoch));
    }
  }
  model.trained = true;
  return model;
}

/// Fraction of `indices` whose argmax logit equals the label.
inline double accuracy(const LearnerModel& model, const Dataset& ds, const IndexList& indices) {
  if (indices.empty()) return 0.0;
  const Matrix logits = forward_logits(model, gather_rows(ds.features, indices));
  Index correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (static_cast<int>(argmax(logits.row(static_cast<Eigen::Index>(i)))) == ds.labels[indices[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

// --------------------------------------------------------------------------
// Checkpoints
//
//   alsim-model 1
//   head <softmax|inhibited|evidential>
//   dropout <hexfloat>
//   trained <0|1>
//   layers <L>
//   layer <fan_in> <fan_out> <bias|nobias>
//   <fan_in lines of fan_out hexfloats>        (row-major weights)
//   <one line of fan_out hexfloats>            (bias, when present)
//
// Hexadecimal floats make the round trip exact.
// --------------------------------------------------------------------------

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, ptr);
}

inline double parse_hexfloat(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw Error("checkpoint: bad number '" + s + "'");
  return v;
}

inline void expect_word(std::istream& in, const std::string& word) {
  std::string got;
  if (!(in >> got) || got != word) throw Error("checkpoint: expected '" + word + "', found '" + got + "'");
}

}  // namespace detail

inline void save_model(const LearnerModel& model, std::ostream& out) {
  out << "alsim-model 1\n";
  out << "head " << to_string(model.head) << '\n';
  out << "dropout " << detail::hexfloat(model.dropout_rate) << '\n';
  out << "trained " << (model.trained ? 1 : 0) << '\n';
  out << "layers " << model.layers.size() << '\n';
  for (const auto& l : model.layers) {
    out << "layer " << l.weights.rows() << ' ' << l.weights.cols() << ' ' << (l.has_bias() ? "bias" : "nobias")
        << '\n';
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) out << (j ? " " : "") << detail::hexfloat(l.weights(i, j));
      out << '\n';
    }
    if (l.has_bias()) {
      for (Eigen::Index j = 0; j < l.bias.size(); ++j) out << (j ? " " : "") << detail::hexfloat(l.bias[j]);
      out << '\n';
    }
  }
}

inline LearnerModel load_model(std::istream& in) {
  detail::expect_word(in, "alsim-model");
  int version = 0;
  if (!(in >> version) || version != 1) throw Error("checkpoint: unsupported version");
  LearnerModel model;
  std::string word;
  detail::expect_word(in, "head");
  in >> word;
  model.head = head_from_string(word);
  detail::expect_word(in, "dropout");
  in >> word;
  model.dropout_rate = detail::parse_hexfloat(word);
  detail::expect_word(in, "trained");
  int trained = 0;
  in >> trained;
  model.trained = trained != 0;
  detail::expect_word(in, "layers");
  std::size_t n_layers = 0;
  if (!(in >> n_layers)) throw Error("checkpoint: missing layer count");
  for (std::size_t l = 0; l < n_layers; ++l) {
    detail::expect_word(in, "layer");
    Eigen::Index rows = 0, cols = 0;
    std::string bias;
    if (!(in >> rows >> cols >> bias)) throw Error("checkpoint: bad layer header");
    Layer layer;
    layer.weights.resize(rows, cols);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      in >> word;
      layer.weights.data()[i] = detail::parse_hexfloat(word);
    }
    if (bias == "bias") {
      layer.bias.resize(cols);
      for (Eigen::Index j = 0; j < cols; ++j) {
        in >> word;
        layer.bias[j] = detail::parse_hexfloat(word);
      }
    } else if (bias != "nobias") {
      throw Error("checkpoint: bad bias marker '" + bias + "'");
    }
    model.layers.push_back(std::move(layer));
  }
  if (!in) throw Error("checkpoint: truncated file");
  return model;
}

inline void save_model(const LearnerModel& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write checkpoint: " + path);
  save_model(model, f);
}

inline LearnerModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open checkpoint: " + path);
  return load_model(f);
}

}  // namespace alsim
