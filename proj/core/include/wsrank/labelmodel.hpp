#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wsrank/weakgen.hpp"

namespace wsrank {

/// Generative model over ranker votes and the latent true pair order y in
/// {-1, +1}. Features per row are k accuracy indicators [vote_j == y], then
/// k(k-1)/2 agreement indicators [vote_j == vote_l != 0] for j < l in
/// lexicographic order, then optionally k labeling-propensity indicators
/// [vote_j != 0]. The length of w tells the two layouts apart.
struct LabelModelParams {
  std::vector<std::string> ranker_tags;
  Eigen::VectorXd w;

  std::size_t k() const { return ranker_tags.size(); }
  bool has_propensity() const;
  double accuracy_weight(std::size_t j) const { return w[static_cast<Eigen::Index>(j)]; }
  double correlation_weight(std::size_t j, std::size_t l) const;
  double propensity_weight(std::size_t j) const;
};

std::size_t label_model_dim(std::size_t k, bool propensity = false);
/// Position of the (j, l) agreement feature, j < l.
std::size_t correlation_index(std::size_t k, std::size_t j, std::size_t l);
std::size_t propensity_index(std::size_t k, std::size_t j);
/// Whether w carries propensity weights; throws if its length fits neither layout.
bool has_propensity(const Eigen::VectorXd& w, std::size_t k);

Eigen::VectorXd feature_vector(std::span<const std::int8_t> row, int y, bool propensity = false);
/// w^T phi(row, y) without materializing phi; the layout follows w.
double feature_dot(const Eigen::VectorXd& w, std::span<const std::int8_t> row, int y);

/// Default cap on k for exact enumeration of the per-row partition function.
inline constexpr std::size_t kMaxExactRankers = 8;

/// log Z1(w): log-sum over all vote vectors in {-1,0,1}^k and y in {-1,+1}.
double log_partition(const Eigen::VectorXd& w, std::size_t k,
                     std::size_t max_k = kMaxExactRankers);

/// E_{(votes, y) ~ P_w}[phi], by enumeration.
Eigen::VectorXd model_expectation(const Eigen::VectorXd& w, std::size_t k,
                                  std::size_t max_k = kMaxExactRankers);

/// Gibbs estimate of E_{P_w}[phi] from a fresh chain.
Eigen::VectorXd gibbs_model_expectation(const Eigen::VectorXd& w, std::size_t k,
                                        std::size_t samples, std::size_t burn_in,
                                        std::uint64_t seed);

/// sum_i log sum_y exp(w^T phi(row_i, y)) - m log Z1(w).
double log_marginal_likelihood(const Eigen::VectorXd& w, const LabelMatrix& votes,
                               std::size_t max_k = kMaxExactRankers);

/// Exact gradient of log_marginal_likelihood.
Eigen::VectorXd log_marginal_likelihood_gradient(const Eigen::VectorXd& w,
                                                 const LabelMatrix& votes,
                                                 std::size_t max_k = kMaxExactRankers);

enum class LabelModelMode { Exact, Gibbs };

struct LabelModelOptions {
  /// Adam step size.
  double lr = 0.1;
  std::size_t epochs = 300;
  double l2 = 1e-4;
  std::uint64_t seed = 1;
  LabelModelMode mode = LabelModelMode::Exact;
  /// Gibbs sweeps per gradient step.
  std::size_t gibbs_samples = 1000;
  std::size_t gibbs_burn_in = 200;
  double init_accuracy = 0.1;
  std::size_t max_exact_k = kMaxExactRankers;
  /// Adds the [vote_j != 0] block. Without it abstaining and disagreeing
  /// are indistinguishable to the model.
  bool propensity = true;
};

struct LabelModelTrace {
  /// Average per-row log marginal likelihood; NaN when k exceeds the cap.
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::size_t epochs = 0;
  /// The fit landed in the mirrored (worse than random) orientation and was flipped.
  bool mirrored = false;
};

/// Adam ascent on the average log marginal likelihood minus
/// (l2 / 2) ||w||^2. With propensity weights the likelihood is invariant
/// under swapping y, (a, b) -> (-a, b + a); the fit returns the orientation
/// whose accuracy weights sum to >= 0. Throws NumericalError if the
/// parameters diverge.
LabelModelParams fit_label_model(const LabelMatrix& votes, const LabelModelOptions& options,
                                 LabelModelTrace* trace = nullptr);

/// P_w(y = +1 | row).
double posterior(const LabelModelParams& params, std::span<const std::int8_t> row);
std::vector<double> posteriors(const LabelModelParams& params, const LabelMatrix& votes);

void write_label_model(const std::string& path, const LabelModelParams& params);
LabelModelParams read_label_model(const std::string& path);
void write_soft_labels(const std::string& path, const std::vector<double>& labels);
std::vector<double> read_soft_labels(const std::string& path);

}  // namespace wsrank
