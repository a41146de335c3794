#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wsrank/corpus.hpp"
#include "wsrank/rankernet.hpp"
#include "wsrank/rankers.hpp"
#include "wsrank/weakgen.hpp"

namespace wsrank {

/// Pairs seen through the frozen network: each row is the difference of the
/// last hidden activations of (q, d1) and (q, d2), augmented with a bias
/// slot. Over these rows the output layer is a logistic regression.
struct BottleneckDataset {
  Eigen::MatrixXd deltas;  // n x (fan_in + 1)
  Eigen::VectorXd labels;  // targets in [0, 1]

  std::size_t size() const { return static_cast<std::size_t>(deltas.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(deltas.cols()); }
};

/// Requires logit output. Throws for tanh models.
BottleneckDataset extract_bottleneck(const RankerParams& params,
                                     const std::vector<EncodedExample>& examples);

/// Output-layer weights followed by its bias.
Eigen::VectorXd last_layer(const RankerParams& params);

/// Cross-entropy gradient of one pair w.r.t. the output layer:
/// (sigmoid(theta . delta) - y) delta.
Eigen::VectorXd pair_gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& delta,
                              double y);

/// Damped Hessian of the mean pair loss:
/// (1/n) sum_i s_i (1 - s_i) delta_i delta_i^T + damping I.
/// Keeps a reference to `data`, which must outlive it.
class DampedHessian {
 public:
  DampedHessian(const BottleneckDataset& data, const Eigen::VectorXd& theta, double damping);
  DampedHessian(BottleneckDataset&&, const Eigen::VectorXd&, double) = delete;

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;
  std::size_t dim() const { return dim_; }

 private:
  const Eigen::MatrixXd* deltas_;
  Eigen::VectorXd curvature_;  // s_i (1 - s_i) / n
  double damping_;
  std::size_t dim_;
};

Eigen::VectorXd hessian_vec(const BottleneckDataset& data, const Eigen::VectorXd& theta,
                            double damping, const Eigen::VectorXd& v);

using LinearOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct CgResult {
  Eigen::VectorXd x;
  std::size_t iterations = 0;
  /// ||A x - b|| / ||b|| (0 for b = 0).
  double relative_residual = 0.0;
  bool converged = false;
};

/// Conjugate gradients for a symmetric positive-definite operator. Stops when
/// the relative residual drops to `tol` or after `max_iter` iterations.
/// Throws NumericalError on non-finite iterates.
CgResult cg_solve(const LinearOperator& op, const Eigen::VectorXd& b, double tol,
                  std::size_t max_iter);

struct InfluenceOptions {
  double damping = 0.01;
  double cg_tol = 1e-6;
  /// 0 means the problem dimension.
  std::size_t cg_max_iter = 0;
  /// Non-convergence is flagged only when the final residual exceeds
  /// cg_tol * cg_slack.
  double cg_slack = 10.0;
};

struct InfluenceReport {
  /// I_drop per training pair: the predicted change in summed dev loss when
  /// the pair is removed. Negative means the pair hurts the dev set.
  std::vector<double> scores;
  std::vector<bool> dropped;
  /// Row of the original pair file for each score; identity when empty.
  std::vector<std::size_t> pair_index;
  std::vector<CgResult> solves;  // one per dev point (x omitted to save space)
  bool all_converged = true;

  std::size_t dropped_count() const;
  double dropped_fraction() const;
};

InfluenceReport influence_scores(const BottleneckDataset& train, const Eigen::VectorXd& theta,
                                 const BottleneckDataset& dev,
                                 const InfluenceOptions& options = {});

/// Dev influence points: (relevant, non-relevant) document pairs drawn from
/// the candidate lists of judged queries, at most `max_per_query` per query.
std::vector<TrainPair> gold_dev_pairs(const std::vector<Query>& queries,
                                      const std::map<std::string, RankedList>& candidates,
                                      const Qrels& gold, std::size_t max_per_query,
                                      std::uint64_t seed);

struct RetrainSummary {
  std::size_t original = 0;
  std::size_t kept = 0;
  double dropped_fraction = 0.0;
};

/// Drops every example with I_drop < 0 and trains `fresh` on the rest.
RankerParams filter_and_retrain(const RankerParams& fresh,
                                const std::vector<EncodedExample>& examples,
                                const InfluenceReport& report, const DevScorer& dev,
                                const TrainOptions& options,
                                RetrainSummary* summary = nullptr,
                                TrainTrace* trace = nullptr);

void write_influence_report(const std::string& path, const InfluenceReport& report);
InfluenceReport read_influence_report(const std::string& path);

}  // namespace wsrank
