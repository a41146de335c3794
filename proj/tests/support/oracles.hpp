#pragma once

// Reference implementations written without the library, for cross-checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "wsrank/random.hpp"
#include "wsrank/weakgen.hpp"

namespace wsrank::testing {

/// Label-model feature vector with explicit loops: accuracies, agreements over
/// j < l, then optional propensities.
inline std::vector<double> brute_phi(const std::vector<int>& votes, int y, bool propensity) {
  const std::size_t k = votes.size();
  std::vector<double> phi;
  for (std::size_t j = 0; j < k; ++j) phi.push_back(votes[j] == y ? 1.0 : 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t l = j + 1; l < k; ++l) {
      phi.push_back(votes[j] != 0 && votes[j] == votes[l] ? 1.0 : 0.0);
    }
  }
  if (propensity) {
    for (std::size_t j = 0; j < k; ++j) phi.push_back(votes[j] != 0 ? 1.0 : 0.0);
  }
  return phi;
}

inline double brute_dot(const Eigen::VectorXd& w, const std::vector<double>& phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) s += w[static_cast<Eigen::Index>(i)] * phi[i];
  return s;
}

/// Every vote vector in {-1, 0, 1}^k.
inline std::vector<std::vector<int>> all_vote_vectors(std::size_t k) {
  std::vector<std::vector<int>> out;
  std::size_t total = 1;
  for (std::size_t j = 0; j < k; ++j) total *= 3;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<int> v(k);
    std::size_t c = code;
    for (std::size_t j = 0; j < k; ++j) {
      v[j] = static_cast<int>(c % 3) - 1;
      c /= 3;
    }
    out.push_back(v);
  }
  return out;
}

struct BruteLabelModel {
  double objective = 0.0;
  Eigen::VectorXd gradient;
};

/// sum_i log sum_y exp(w.phi(row_i, y)) - m log Z and its gradient, by
/// enumerating all 2 * 3^k joint configurations.
inline BruteLabelModel brute_label_model(const Eigen::VectorXd& w, const LabelMatrix& votes,
                                         bool propensity) {
  const std::size_t k = votes.cols();
  const auto dim = w.size();
  double z = 0.0;
  Eigen::VectorXd ez = Eigen::VectorXd::Zero(dim);
  for (const auto& v : all_vote_vectors(k)) {
    for (int y : {-1, 1}) {
      const auto phi = brute_phi(v, y, propensity);
      const double e = std::exp(brute_dot(w, phi));
      z += e;
      for (Eigen::Index i = 0; i < dim; ++i) ez[i] += e * phi[static_cast<std::size_t>(i)];
    }
  }
  ez /= z;

  BruteLabelModel out;
  out.gradient = Eigen::VectorXd::Zero(dim);
  for (std::size_t r = 0; r < votes.rows; ++r) {
    std::vector<int> v(k);
    for (std::size_t j = 0; j < k; ++j) v[j] = votes.at(r, j);
    const auto pp = brute_phi(v, 1, propensity);
    const auto pn = brute_phi(v, -1, propensity);
    const double ep = std::exp(brute_dot(w, pp));
    const double en = std::exp(brute_dot(w, pn));
    out.objective += std::log(ep + en) - std::log(z);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const auto s = static_cast<std::size_t>(i);
      out.gradient[i] += (ep * pp[s] + en * pn[s]) / (ep + en) - ez[i];
    }
  }
  return out;
}

struct PlantedVotes {
  LabelMatrix matrix;
  std::vector<int> truth;  // y_i in {-1, +1}
};

/// Conditionally independent voters: each abstains with `abstain`, otherwise
/// votes y with probability accuracy[j].
inline PlantedVotes planted_votes(const std::vector<double>& accuracy, double abstain,
                                  std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  PlantedVotes out;
  for (std::size_t j = 0; j < accuracy.size(); ++j) {
    out.matrix.ranker_tags.push_back("r" + std::to_string(j));
  }
  out.matrix.rows = m;
  for (std::size_t i = 0; i < m; ++i) {
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    out.truth.push_back(y);
    for (double acc : accuracy) {
      int v = 0;
      if (!rng.bernoulli(abstain)) v = rng.bernoulli(acc) ? y : -y;
      out.matrix.values.push_back(static_cast<std::int8_t>(v));
    }
  }
  return out;
}

/// Bayes-optimal decision for planted votes: sign of the log-likelihood ratio.
inline int bayes_vote(std::span<const std::int8_t> row, const std::vector<double>& accuracy) {
  double llr = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] == 0) continue;
    const double lr = std::log(accuracy[j] / (1.0 - accuracy[j]));
    llr += row[j] > 0 ? lr : -lr;
  }
  return llr >= 0.0 ? 1 : -1;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Cross-entropy of a logistic model with target y in [0, 1].
inline double logistic_loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y) {
  const double z = theta.dot(x);
  // softplus(z) - y z, stable for large |z|.
  const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return sp - y * z;
}

/// Newton's method on (1/n_norm) sum_{i kept} loss_i + (lambda / 2) ||theta||^2.
/// `skip` excludes one row (or none when negative).
inline Eigen::VectorXd newton_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                       double lambda, double n_norm, long skip = -1,
                                       int iterations = 50) {
  const auto d = x.cols();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd g = lambda * theta;
    Eigen::MatrixXd h = lambda * Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (i == skip) continue;
      const Eigen::VectorXd xi = x.row(i).transpose();
      const double s = sigmoid(theta.dot(xi));
      g += (s - y[i]) / n_norm * xi;
      h += s * (1.0 - s) / n_norm * xi * xi.transpose();
    }
    const Eigen::VectorXd step = h.ldlt().solve(g);
    theta -= step;
    if (step.norm() < 1e-14) break;
  }
  return theta;
}

/// Linearly separable-ish pairs: rows ~ N(0, I), label 1 when w_true . x plus
/// logistic noise is positive.
struct LogisticProblem {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

inline LogisticProblem logistic_problem(std::size_t n, std::size_t dim, double noise,
                                        std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd w_true(static_cast<Eigen::Index>(dim));
  for (auto& v : w_true) v = rng.normal();
  w_true *= 2.0 / w_true.norm();
  LogisticProblem out{Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim)),
                      Eigen::VectorXd(static_cast<Eigen::Index>(n))};
  for (Eigen::Index i = 0; i < out.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.x.cols(); ++j) out.x(i, j) = rng.normal();
    const double u = std::min(std::max(rng.uniform(), 1e-12), 1.0 - 1e-12);
    out.y[i] = out.x.row(i).dot(w_true) + noise * std::log(u / (1.0 - u)) > 0.0 ? 1.0 : 0.0;
  }
  return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Probability that a random positive scores higher than a random negative
/// (ties count half).
inline double auc(const std::vector<double>& score, const std::vector<bool>& positive) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1.0;
      if (score[i] > score[j]) wins += 1.0;
      else if (score[i] == score[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace wsrank::testing
