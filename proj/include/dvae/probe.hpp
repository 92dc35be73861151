#pragma once

// Multinomial logistic-regression probe on fixed features.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/random.hpp"
#include "dvae/types.hpp"

namespace dvae {

struct ProbeOptions {
  std::size_t iterations = 2000;
  double learning_rate = 0.5;
  /// Ridge penalty on the weights (not the biases). Features are used as
  /// given, without standardization, so codes squeezed to a negligible
  /// scale stay unreadable.
  double l2 = 1e-3;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double accuracy = 0.0;        // held-out
  double train_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

namespace detail {

inline Mat softmax_rows(const Mat& logits) {
  Mat p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline double accuracy(const Mat& x, const std::vector<int>& y, const Mat& w, const Vec& b) {
  const Mat logits = (x * w).rowwise() + b.transpose();
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    hits += static_cast<int>(arg) == y[static_cast<std::size_t>(i)];
  }
  return logits.rows() ? double(hits) / double(logits.rows()) : 0.0;
}

}  // namespace detail

/// Trains on a seeded split of the rows by full-batch gradient descent and
/// reports accuracy on the rest. Labels are 0..K-1.
inline ProbeResult linear_probe(const Mat& features, const std::vector<int>& labels,
                                const ProbeOptions& opt = {}) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DomainError("linear_probe: features and labels disagree in length");
  if (labels.empty()) throw DomainError("linear_probe: no data");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  if (*std::min_element(labels.begin(), labels.end()) < 0)
    throw DomainError("linear_probe: labels must be non-negative");
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  const auto present = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) throw DomainError("linear_probe: need at least two classes");
  for (std::size_t c : counts)
    if (c > 0 && c < 10) throw DomainError("linear_probe: need at least 10 examples per class");
  if (!features.allFinite()) throw DomainError("linear_probe: non-finite features");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opt.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(opt.train_fraction * double(labels.size())), 1, labels.size() - 1);

  auto gather = [&](std::size_t from, std::size_t to, Mat& x, std::vector<int>& y) {
    x.resize(static_cast<Eigen::Index>(to - from), features.cols());
    y.resize(to - from);
    for (std::size_t i = from; i < to; ++i) {
      x.row(static_cast<Eigen::Index>(i - from)) = features.row(static_cast<Eigen::Index>(order[i]));
      y[i - from] = labels[order[i]];
    }
  };
  Mat xtr, xte;
  std::vector<int> ytr, yte;
  gather(0, n_train, xtr, ytr);
  gather(n_train, labels.size(), xte, yte);

  Mat onehot = Mat::Zero(xtr.rows(), k);
  for (std::size_t i = 0; i < ytr.size(); ++i) onehot(static_cast<Eigen::Index>(i), ytr[i]) = 1.0;
  Mat w = Mat::Zero(features.cols(), k);
  Vec b = Vec::Zero(k);
  const double inv_n = 1.0 / double(xtr.rows());
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    const Mat p = detail::softmax_rows((xtr * w).rowwise() + b.transpose());
    const Mat err = (p - onehot) * inv_n;
    w -= opt.learning_rate * (xtr.transpose() * err + opt.l2 * w);
    b -= opt.learning_rate * err.colwise().sum().transpose();
  }

  ProbeResult r;
  r.n_train = ytr.size();
  r.n_test = yte.size();
  r.train_accuracy = detail::accuracy(xtr, ytr, w, b);
  r.accuracy = detail::accuracy(xte, yte, w, b);
  return r;
}

}  // namespace dvae
