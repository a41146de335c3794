#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "wsrank/corpus.hpp"
#include "wsrank/weakgen.hpp"

namespace wsrank {

enum class OutputMode { Tanh, Logit };
enum class LossKind { CrossEntropy, Hinge };

std::string_view to_string(OutputMode mode);
std::string_view to_string(LossKind loss);
LossKind parse_loss_kind(std::string_view name);

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_out x fan_in
  Eigen::VectorXd bias;
};

/// Token ids into a RankerParams vocabulary.
using TokenIds = std::vector<std::uint32_t>;

/// Parameters of the pairwise ranker: word vectors E, per-token pooling
/// weights W shared by queries and documents, and a ReLU feed-forward network
/// with scalar output over [v_q, v_d, v_q - v_d, v_q * v_d].
struct RankerParams {
  std::vector<std::string> vocab;
  Eigen::MatrixXd embeddings;     // vocab x l
  Eigen::VectorXd token_weights;  // vocab
  std::vector<DenseLayer> layers;
  OutputMode output_mode = OutputMode::Logit;
  bool embeddings_frozen = true;

  std::size_t embedding_dim() const { return static_cast<std::size_t>(embeddings.cols()); }
  std::size_t input_dim() const { return 4 * embedding_dim(); }
  /// Width of the activation feeding the output layer.
  std::size_t bottleneck_dim() const;

  std::optional<std::uint32_t> token_id(std::string_view term) const;
  /// Drops out-of-vocabulary tokens.
  TokenIds encode(const std::vector<std::string>& tokens) const;
  std::uint64_t vocab_hash() const;

  /// Throws wsrank::Error if layer shapes do not chain.
  void validate() const;

 private:
  mutable std::unordered_map<std::string, std::uint32_t> lookup_;
};

struct InitOptions {
  std::vector<std::size_t> hidden{64};
  /// Used when no pretrained table is supplied.
  std::size_t embedding_dim = 50;
  OutputMode output_mode = OutputMode::Logit;
  bool freeze_embeddings = true;
  std::uint64_t seed = 1;
};

/// Vocabulary is `terms` (restricted to the pretrained table when one is
/// given). Pooling weights start at 0, hidden layers use He initialization.
RankerParams init_ranker(const std::vector<std::string>& terms,
                         const EmbeddingTable* pretrained, const InitOptions& options);

/// Softmax-weighted sum of token vectors. Throws on empty input.
Eigen::VectorXd pool(const RankerParams& params, std::span<const std::uint32_t> ids);
Eigen::VectorXd features(const Eigen::VectorXd& vq, const Eigen::VectorXd& vd);

/// Last hidden activation (the input to the output layer) for (q, d).
Eigen::VectorXd bottleneck(const RankerParams& params, std::span<const std::uint32_t> q,
                           std::span<const std::uint32_t> d);
double forward(const RankerParams& params, std::span<const std::uint32_t> q,
               std::span<const std::uint32_t> d);

/// Cross-entropy of a logit against a target in [0, 1], in softplus form.
double loss_ce(double x, double y);
/// max(0, margin - sign(y) x). Throws when y == 0.
double loss_hinge(double x, double y, double margin);

struct EncodedExample {
  TokenIds query;
  TokenIds d1;
  TokenIds d2;
  double rel = 1.0;  // target in [0, 1]
};

struct LossSpec {
  LossKind kind = LossKind::CrossEntropy;
  double margin = 0.1;
};

/// f(q, d1) - f(q, d2).
double pair_logit(const RankerParams& params, const EncodedExample& ex);
double pair_loss(const RankerParams& params, const EncodedExample& ex, const LossSpec& loss);

/// Gradient buffers shaped like RankerParams.
struct RankerGradient {
  Eigen::MatrixXd embeddings;
  Eigen::VectorXd token_weights;
  std::vector<DenseLayer> layers;

  explicit RankerGradient(const RankerParams& params);
  void set_zero();
};

/// Adds scale * dL/dtheta into `grad` and returns the loss.
double accumulate_pair_gradient(const RankerParams& params, const EncodedExample& ex,
                                const LossSpec& loss, double scale, RankerGradient& grad);

struct EncodeStats {
  std::size_t kept = 0;
  std::size_t skipped = 0;
};

/// Resolves pair text through the index and vocabulary. Pairs whose query or
/// either document has no in-vocabulary token are skipped and counted.
std::vector<EncodedExample> encode_examples(const RankerParams& params,
                                            const InvertedIndex& index,
                                            const std::map<std::string, Query>& queries,
                                            const std::vector<TrainPair>& pairs,
                                            const std::vector<double>& rel,
                                            EncodeStats* stats = nullptr,
                                            std::vector<std::size_t>* kept_rows = nullptr);

struct TrainOptions {
  LossSpec loss;
  double lr = 0.05;
  std::size_t batch = 32;
  std::size_t epochs = 20;
  /// Training stops once this many epochs pass without a dev improvement;
  /// 0 stops after the first epoch.
  std::size_t patience = 3;
  std::uint64_t seed = 1;
};

struct TrainTrace {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;
  std::vector<double> dev_score;
  std::size_t best_epoch = 0;
};

/// Dev metric to maximize (NDCG@10 of reranked dev queries in the pipeline).
using DevScorer = std::function<double(const RankerParams&)>;

/// Mini-batch SGD from `init`; returns the best-dev checkpoint. Throws
/// NumericalError naming the batch if the loss becomes non-finite.
RankerParams train_ranker(RankerParams init, const std::vector<EncodedExample>& examples,
                          const DevScorer& dev, const TrainOptions& options,
                          TrainTrace* trace = nullptr);

/// Mean pair loss over a set of examples.
double mean_loss(const RankerParams& params, const std::vector<EncodedExample>& examples,
                 const LossSpec& loss);

void save_checkpoint(const std::string& path, const RankerParams& params);
RankerParams load_checkpoint(const std::string& path);

}  // namespace wsrank
