#pragma once

// Training objectives over a logit matrix. Every loss returns the mean over
// samples together with its gradient with respect to the logits.

#include "alsim/common.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <span>

namespace alsim {

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d(value)/d(logits), same shape as the logits
};

namespace detail {

inline void check_labels(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw Error("loss: logits rows and label count differ");
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) throw Error("loss: label outside [0, K)");
  }
}

/// Row-wise softmax and log-sum-exp with max subtraction.
inline void softmax_rows(const Matrix& logits, Matrix& probs, Vector& lse) {
  probs.resize(logits.rows(), logits.cols());
  lse.resize(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    probs.row(i) = (logits.row(i).array() - m).exp();
    const double s = probs.row(i).sum();
    probs.row(i) /= s;
    lse[i] = m + std::log(s);
  }
}

}  // namespace detail

/// Mean negative log-likelihood of the softmax probabilities.
inline LossResult loss_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  detail::check_labels(logits, labels);
  const auto n = static_cast<double>(logits.rows());
  Matrix probs;
  Vector lse;
  detail::softmax_rows(logits, probs, lse);
  LossResult r;
  r.grad = probs;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    r.value += lse[i] - logits(i, y);
    r.grad(i, y) -= 1.0;
  }
  r.value /= n;
  r.grad /= n;
  return r;
}

/// Cross-entropy against the smoothed target: 1 - alpha on the true class,
/// alpha / (K - 1) on each other class.
inline LossResult loss_label_smoothing(const Matrix& logits, std::span<const int> labels, double alpha) {
  detail::check_labels(logits, labels);
  const Eigen::Index k = logits.cols();
  if (k < 2) throw Error("label smoothing needs at least 2 classes");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw Error("label smoothing alpha must be in [0,1)");
  const auto n = static_cast<double>(logits.rows());
  const double off = alpha / static_cast<double>(k - 1);
  Matrix probs;
  Vector lse;
  detail::softmax_rows(logits, probs, lse);
  LossResult r;
  r.grad = probs;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < k; ++c) {
      const double t = (c == y) ? 1.0 - alpha : off;
      r.value += t * (lse[i] - logits(i, c));
      r.grad(i, c) -= t;
    }
  }
  r.value /= n;
  r.grad /= n;
  return r;
}

/// Negative log of the inhibited-softmax probability of the true class,
/// exp(z_y) / (sum_j exp(z_j) + exp(alpha_const)), plus lambda_reg times the
/// mean true-class logit.
inline LossResult loss_inhibited(const Matrix& logits, std::span<const int> labels, double alpha_const,
                                 double lambda_reg) {
  detail::check_labels(logits, labels);
  const auto n = static_cast<double>(logits.rows());
  LossResult r;
  r.grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    const double m = std::max(logits.row(i).maxCoeff(), alpha_const);
    const RowVector e = (logits.row(i).array() - m).exp();
    const double denom = e.sum() + std::exp(alpha_const - m);
    r.value += (m + std::log(denom)) - logits(i, y) + lambda_reg * logits(i, y);
    r.grad.row(i) = e / denom;
    r.grad(i, y) += lambda_reg - 1.0;
  }
  r.value /= n;
  r.grad /= n;
  return r;
}

/// KL(Dir(alpha) || Dir(1, ..., 1)).
inline double kl_dirichlet_uniform(const RowVector& alpha) {
  const double s = alpha.sum();
  const auto k = static_cast<double>(alpha.size());
  double kl = std::lgamma(s) - std::lgamma(k);
  const double psi_s = boost::math::digamma(s);
  for (Eigen::Index c = 0; c < alpha.size(); ++c) {
    kl -= std::lgamma(alpha[c]);
    kl += (alpha[c] - 1.0) * (boost::math::digamma(alpha[c]) - psi_s);
  }
  return kl;
}

/// Sum-of-squares evidential loss on Dirichlet parameters alpha = ReLU(z) + 1,
/// plus anneal_coef * KL(Dir(alpha~) || Dir(1)) where alpha~ resets the true
/// class parameter to 1.
inline LossResult loss_evidential(const Matrix& logits, std::span<const int> labels, double anneal_coef) {
  detail::check_labels(logits, labels);
  const Eigen::Index k = logits.cols();
  const auto n = static_cast<double>(logits.rows());
  LossResult r;
  r.grad.setZero(logits.rows(), k);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    const RowVector alpha = logits.row(i).cwiseMax(0.0).array() + 1.0;
    const double s = alpha.sum();
    const RowVector p = alpha / s;
    RowVector t = RowVector::Zero(k);
    t[y] = 1.0;

    const double sum_p2 = p.squaredNorm();
    const double err = (t - p).squaredNorm();
    const double var = (1.0 - sum_p2) / (s + 1.0);
    r.value += err + var;

    // d(err + var)/d(alpha_j)
    const double tp = (t - p).dot(p);
    RowVector d_alpha(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      d_alpha[j] = (-2.0 / s) * ((t[j] - p[j]) - tp) - (2.0 / (s * (s + 1.0))) * (p[j] - sum_p2) -
                   (1.0 - sum_p2) / ((s + 1.0) * (s + 1.0));
    }

    if (anneal_coef != 0.0) {
      RowVector tilde = alpha;
      tilde[y] = 1.0;
      r.value += anneal_coef * kl_dirichlet_uniform(tilde);
      const double s_t = tilde.sum();
      const double excess = s_t - static_cast<double>(k);  // sum(tilde - 1)
      const double tri_s = boost::math::trigamma(s_t);
      for (Eigen::Index j = 0; j < k; ++j) {
        if (j == y) continue;
        d_alpha[j] += anneal_coef * ((tilde[j] - 1.0) * boost::math::trigamma(tilde[j]) - tri_s * excess);
      }
    }

    for (Eigen::Index j = 0; j < k; ++j) r.grad(i, j) = logits(i, j) > 0.0 ? d_alpha[j] : 0.0;
  }
  r.value /= n;
  r.grad /= n;
  return r;
}

}  // namespace alsim
