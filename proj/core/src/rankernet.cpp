#include "wsrank/rankernet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <spdlog/spdlog.h>

#include "wsrank/error.hpp"
#include "wsrank/random.hpp"

namespace wsrank {
namespace {

using Eigen::Index;
using Eigen::VectorXd;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct PoolTrace {
  VectorXd softmax;
  VectorXd v;
};

VectorXd pool_traced(const RankerParams& params, std::span<const std::uint32_t> ids,
                     PoolTrace* trace) {
  if (ids.empty()) throw Error("cannot pool an empty token sequence");
  const auto n = static_cast<Index>(ids.size());
  VectorXd s(n);
  double top = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < n; ++j) {
    s[j] = params.token_weights[ids[static_cast<std::size_t>(j)]];
    top = std::max(top, s[j]);
  }
  s = (s.array() - top).exp();
  s /= s.sum();
  VectorXd v = VectorXd::Zero(params.embeddings.cols());
  for (Index j = 0; j < n; ++j) {
    v += s[j] * params.embeddings.row(ids[static_cast<std::size_t>(j)]).transpose();
  }
  if (trace) {
    trace->softmax = s;
    trace->v = v;
  }
  return v;
}

void pool_backward(const RankerParams& params, std::span<const std::uint32_t> ids,
                   const PoolTrace& trace, const VectorXd& dv, RankerGradient& grad) {
  const double v_dot = trace.v.dot(dv);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const double s = trace.softmax[static_cast<Index>(j)];
    const auto id = ids[j];
    const double e_dot = params.embeddings.row(id).dot(dv);
    grad.token_weights[id] += s * (e_dot - v_dot);
    if (!params.embeddings_frozen) grad.embeddings.row(id) += s * dv.transpose();
  }
}

struct MlpTrace {
  std::vector<VectorXd> inputs;  // input to each layer
  std::vector<VectorXd> pre;     // pre-activation of each layer
  double out = 0.0;
};

double mlp_forward(const RankerParams& params, const VectorXd& x, MlpTrace* trace) {
  VectorXd h = x;
  const std::size_t n = params.layers.size();
  if (trace) {
    trace->inputs.clear();
    trace->pre.clear();
  }
  for (std::size_t i = 0; i < n; ++i) {
    VectorXd z = params.layers[i].weight * h + params.layers[i].bias;
    if (trace) {
      trace->inputs.push_back(h);
      trace->pre.push_back(z);
    }
    h = (i + 1 < n) ? VectorXd(z.cwiseMax(0.0)) : z;
  }
  double out = h[0];
  if (params.output_mode == OutputMode::Tanh) out = std::tanh(out);
  if (trace) trace->out = out;
  return out;
}

/// Backpropagates d(loss)/d(output) and returns d(loss)/d(input).
VectorXd mlp_backward(const RankerParams& params, const MlpTrace& trace, double d_out,
                      RankerGradient& grad) {
  const std::size_t n = params.layers.size();
  VectorXd delta(1);
  delta[0] = params.output_mode == OutputMode::Tanh ? d_out * (1.0 - trace.out * trace.out)
                                                    : d_out;
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 < n) delta = delta.cwiseProduct((trace.pre[i].array() > 0.0).cast<double>().matrix());
    grad.layers[i].weight.noalias() += delta * trace.inputs[i].transpose();
    grad.layers[i].bias += delta;
    delta = params.layers[i].weight.transpose() * delta;
  }
  return delta;
}

struct TextSide {
  std::span<const std::uint32_t> ids;
  PoolTrace pool;
};

struct PairState {
  TextSide q, d1, d2;
  MlpTrace m1, m2;
  double f1 = 0.0, f2 = 0.0;
};

void run_pair(const RankerParams& params, const EncodedExample& ex, PairState& st) {
  st.q.ids = ex.query;
  st.d1.ids = ex.d1;
  st.d2.ids = ex.d2;
  pool_traced(params, st.q.ids, &st.q.pool);
  pool_traced(params, st.d1.ids, &st.d1.pool);
  pool_traced(params, st.d2.ids, &st.d2.pool);
  st.f1 = mlp_forward(params, features(st.q.pool.v, st.d1.pool.v), &st.m1);
  st.f2 = mlp_forward(params, features(st.q.pool.v, st.d2.pool.v), &st.m2);
}

std::pair<double, double> loss_and_slope(double x, double rel, const LossSpec& loss) {
  if (loss.kind == LossKind::CrossEntropy) return {loss_ce(x, rel), sigmoid(x) - rel};
  const double y = 2.0 * rel - 1.0;
  const double value = loss_hinge(x, y, loss.margin);
  const double sign = y > 0 ? 1.0 : -1.0;
  return {value, value > 0.0 ? -sign : 0.0};
}

void put_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double get_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw Error("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string_view to_string(OutputMode mode) {
  return mode == OutputMode::Tanh ? "tanh" : "logit";
}

std::string_view to_string(LossKind loss) {
  return loss == LossKind::CrossEntropy ? "ce" : "hinge";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "hinge") return LossKind::Hinge;
  throw Error("unknown loss '" + std::string(name) + "'");
}

std::size_t RankerParams::bottleneck_dim() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.cols());
}

std::optional<std::uint32_t> RankerParams::token_id(std::string_view term) const {
  if (lookup_.size() != vocab.size()) {
    lookup_.clear();
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      lookup_.emplace(vocab[i], static_cast<std::uint32_t>(i));
    }
  }
  auto it = lookup_.find(std::string(term));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

TokenIds RankerParams::encode(const std::vector<std::string>& tokens) const {
  TokenIds ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (auto id = token_id(t)) ids.push_back(*id);
  }
  return ids;
}

std::uint64_t RankerParams::vocab_hash() const {
  std::uint64_t h = fnv1a("wsrank-vocab");
  for (const auto& t : vocab) {
    h = fnv1a(t, h);
    h = fnv1a("\n", h);
  }
  return h;
}

void RankerParams::validate() const {
  const auto v = static_cast<Index>(vocab.size());
  if (embeddings.rows() != v || token_weights.size() != v) {
    throw Error("ranker parameters: vocabulary blocks disagree in size");
  }
  if (layers.empty()) throw Error("ranker parameters: no layers");
  Index fan_in = static_cast<Index>(input_dim());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.cols() != fan_in || layers[i].bias.size() != layers[i].weight.rows()) {
      throw Error("ranker parameters: layer " + std::to_string(i) + " does not chain");
    }
    fan_in = layers[i].weight.rows();
  }
  if (fan_in != 1) throw Error("ranker parameters: output layer must be scalar");
}

RankerParams init_ranker(const std::vector<std::string>& terms,
                         const EmbeddingTable* pretrained, const InitOptions& options) {
  if (options.hidden.size() > 5) throw Error("at most 5 hidden layers are supported");
  RankerParams p;
  p.output_mode = options.output_mode;
  p.embeddings_frozen = options.freeze_embeddings;
  std::vector<std::string> vocab = terms;
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

  Rng rng(child_seed(options.seed, "init"));
  if (pretrained) {
    std::vector<std::string> kept;
    for (const auto& t : vocab) {
      if (pretrained->find(t)) kept.push_back(t);
    }
    vocab = std::move(kept);
    p.embeddings.resize(static_cast<Index>(vocab.size()),
                        static_cast<Index>(pretrained->dim));
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      auto row = pretrained->row(*pretrained->find(vocab[i]));
      for (std::size_t k = 0; k < row.size(); ++k) {
        p.embeddings(static_cast<Index>(i), static_cast<Index>(k)) = row[k];
      }
    }
  } else {
    const auto l = static_cast<Index>(options.embedding_dim);
    if (l == 0) throw Error("embedding_dim must be positive");
    const double scale = 1.0 / std::sqrt(static_cast<double>(l));
    p.embeddings.resize(static_cast<Index>(vocab.size()), l);
    for (Index i = 0; i < p.embeddings.rows(); ++i) {
      for (Index k = 0; k < l; ++k) p.embeddings(i, k) = scale * rng.normal();
    }
  }
  p.vocab = std::move(vocab);
  p.token_weights = VectorXd::Zero(static_cast<Index>(p.vocab.size()));

  std::size_t fan_in = p.input_dim();
  std::vector<std::size_t> widths = options.hidden;
  widths.push_back(1);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool output = i + 1 == widths.size();
    const double sd = std::sqrt((output ? 1.0 : 2.0) / static_cast<double>(fan_in));
    DenseLayer layer;
    layer.weight.resize(static_cast<Index>(widths[i]), static_cast<Index>(fan_in));
    for (Index r = 0; r < layer.weight.rows(); ++r) {
      for (Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = sd * rng.normal();
    }
    layer.bias = VectorXd::Zero(static_cast<Index>(widths[i]));
    p.layers.push_back(std::move(layer));
    fan_in = widths[i];
  }
  p.validate();
  return p;
}

Eigen::VectorXd pool(const RankerParams& params, std::span<const std::uint32_t> ids) {
  return pool_traced(params, ids, nullptr);
}

Eigen::VectorXd features(const Eigen::VectorXd& vq, const Eigen::VectorXd& vd) {
  if (vq.size() != vd.size()) throw Error("features: query and document dimensions differ");
  const Index l = vq.size();
  VectorXd x(4 * l);
  x << vq, vd, vq - vd, vq.cwiseProduct(vd);
  return x;
}

Eigen::VectorXd bottleneck(const RankerParams& params, std::span<const std::uint32_t> q,
                           std::span<const std::uint32_t> d) {
  MlpTrace trace;
  mlp_forward(params, features(pool(params, q), pool(params, d)), &trace);
  return trace.inputs.back();
}

double forward(const RankerParams& params, std::span<const std::uint32_t> q,
               std::span<const std::uint32_t> d) {
  return mlp_forward(params, features(pool(params, q), pool(params, d)), nullptr);
}

double loss_ce(double x, double y) {
  // -[y log s(x) + (1 - y) log(1 - s(x))] = softplus(x) - y x
  const double softplus = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  return softplus - y * x;
}

double loss_hinge(double x, double y, double margin) {
  if (y == 0.0) throw Error("hinge loss is undefined for a tied pair");
  const double sign = y > 0 ? 1.0 : -1.0;
  return std::max(0.0, margin - sign * x);
}

double pair_logit(const RankerParams& params, const EncodedExample& ex) {
  const VectorXd vq = pool(params, ex.query);
  return mlp_forward(params, features(vq, pool(params, ex.d1)), nullptr) -
         mlp_forward(params, features(vq, pool(params, ex.d2)), nullptr);
}

double pair_loss(const RankerParams& params, const EncodedExample& ex, const LossSpec& loss) {
  return loss_and_slope(pair_logit(params, ex), ex.rel, loss).first;
}

RankerGradient::RankerGradient(const RankerParams& params) {
  if (!params.embeddings_frozen) {
    embeddings = Eigen::MatrixXd::Zero(params.embeddings.rows(), params.embeddings.cols());
  }
  token_weights = VectorXd::Zero(params.token_weights.size());
  for (const auto& l : params.layers) {
    layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                      VectorXd::Zero(l.bias.size())});
  }
}

void RankerGradient::set_zero() {
  embeddings.setZero();
  token_weights.setZero();
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

double accumulate_pair_gradient(const RankerParams& params, const EncodedExample& ex,
                                const LossSpec& loss, double scale, RankerGradient& grad) {
  PairState st;
  run_pair(params, ex, st);
  const auto [value, slope] = loss_and_slope(st.f1 - st.f2, ex.rel, loss);
  if (slope == 0.0) return value;

  const VectorXd dx1 = mlp_backward(params, st.m1, scale * slope, grad);
  const VectorXd dx2 = mlp_backward(params, st.m2, -scale * slope, grad);
  const Index l = static_cast<Index>(params.embedding_dim());
  const VectorXd& vq = st.q.pool.v;
  const VectorXd& v1 = st.d1.pool.v;
  const VectorXd& v2 = st.d2.pool.v;

  const VectorXd dq = dx1.segment(0, l) + dx1.segment(2 * l, l) +
                      dx1.segment(3 * l, l).cwiseProduct(v1) + dx2.segment(0, l) +
                      dx2.segment(2 * l, l) + dx2.segment(3 * l, l).cwiseProduct(v2);
  const VectorXd dd1 =
      dx1.segment(l, l) - dx1.segment(2 * l, l) + dx1.segment(3 * l, l).cwiseProduct(vq);
  const VectorXd dd2 =
      dx2.segment(l, l) - dx2.segment(2 * l, l) + dx2.segment(3 * l, l).cwiseProduct(vq);

  pool_backward(params, st.q.ids, st.q.pool, dq, grad);
  pool_backward(params, st.d1.ids, st.d1.pool, dd1, grad);
  pool_backward(params, st.d2.ids, st.d2.pool, dd2, grad);
  return value;
}

std::vector<EncodedExample> encode_examples(const RankerParams& params,
                                            const InvertedIndex& index,
                                            const std::map<std::string, Query>& queries,
                                            const std::vector<TrainPair>& pairs,
                                            const std::vector<double>& rel,
                                            EncodeStats* stats,
                                            std::vector<std::size_t>* kept_rows) {
  if (rel.size() != pairs.size()) throw Error("encode_examples: one target per pair required");
  std::map<std::string, TokenIds> query_cache;
  std::vector<std::optional<TokenIds>> doc_cache(index.num_docs());
  auto doc_ids = [&](const std::string& doc_id) -> const TokenIds& {
    auto d = index.doc_index(doc_id);
    if (!d) throw Error("document '" + doc_id + "' not in index");
    auto& slot = doc_cache[*d];
    if (!slot) slot = params.encode(index.doc(*d).tokens);
    return *slot;
  };

  EncodeStats local;
  std::vector<EncodedExample> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (!(rel[i] >= 0.0 && rel[i] <= 1.0)) throw Error("training target outside [0, 1]");
    auto qc = query_cache.find(p.query_id);
    if (qc == query_cache.end()) {
      auto q = queries.find(p.query_id);
      if (q == queries.end()) throw Error("query '" + p.query_id + "' not found");
      qc = query_cache.emplace(p.query_id, params.encode(q->second.tokens)).first;
    }
    EncodedExample ex{qc->second, doc_ids(p.d1), doc_ids(p.d2), rel[i]};
    if (ex.query.empty() || ex.d1.empty() || ex.d2.empty()) {
      ++local.skipped;
      continue;
    }
    out.push_back(std::move(ex));
    if (kept_rows) kept_rows->push_back(i);
    ++local.kept;
  }
  if (local.skipped > 0) {
    spdlog::info("skipped {} pairs with no in-vocabulary tokens", local.skipped);
  }
  if (stats) *stats = local;
  return out;
}

double mean_loss(const RankerParams& params, const std::vector<EncodedExample>& examples,
                 const LossSpec& loss) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) total += pair_loss(params, ex, loss);
  return total / static_cast<double>(examples.size());
}

RankerParams train_ranker(RankerParams init, const std::vector<EncodedExample>& examples,
                          const DevScorer& dev, const TrainOptions& options,
                          TrainTrace* trace) {
  if (examples.empty()) throw Error("train_ranker: empty training set");
  if (options.batch == 0) throw Error("train_ranker: batch size must be positive");
  if (options.epochs == 0) throw Error("train_ranker: epochs must be positive");
  init.validate();

  TrainTrace local;
  RankerParams params = std::move(init);
  local.initial_loss = mean_loss(params, examples, options.loss);
  RankerParams best = params;
  double best_score = -std::numeric_limits<double>::infinity();

  RankerGradient grad(params);
  Rng rng(child_seed(options.seed, "shuffle"));
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t batch_id = 0;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t end = std::min(order.size(), start + options.batch);
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.set_zero();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch_loss += accumulate_pair_gradient(params, examples[order[i]], options.loss, scale,
                                               grad);
      }
      ++batch_id;
      if (!std::isfinite(batch_loss)) {
        throw NumericalError("non-finite training loss in batch " + std::to_string(batch_id) +
                             " (epoch " + std::to_string(epoch) + ")");
      }
      epoch_loss += batch_loss;
      for (std::size_t li = 0; li < params.layers.size(); ++li) {
        params.layers[li].weight -= options.lr * grad.layers[li].weight;
        params.layers[li].bias -= options.lr * grad.layers[li].bias;
      }
      params.token_weights -= options.lr * grad.token_weights;
      if (!params.embeddings_frozen) params.embeddings -= options.lr * grad.embeddings;
    }
    local.epoch_loss.push_back(epoch_loss / static_cast<double>(examples.size()));
    const double score = dev ? dev(params) : -local.epoch_loss.back();
    local.dev_score.push_back(score);
    if (score > best_score) {
      best_score = score;
      best = params;
      local.best_epoch = epoch;
    }
    spdlog::debug("epoch {} loss {:.6f} dev {:.6f}", epoch, local.epoch_loss.back(), score);
    if (epoch - local.best_epoch >= options.patience) break;
  }
  if (trace) *trace = std::move(local);
  return best;
}

void save_checkpoint(const std::string& path, const RankerParams& params) {
  params.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "wsrank-checkpoint 1\n"
      << "output_mode " << to_string(params.output_mode) << '\n'
      << "embeddings_frozen " << (params.embeddings_frozen ? 1 : 0) << '\n'
      << "embedding_dim " << params.embedding_dim() << '\n'
      << "vocab_size " << params.vocab.size() << '\n'
      << "vocab_hash " << std::hex << params.vocab_hash() << std::dec << '\n'
      << "layers " << params.layers.size() << '\n';
  for (const auto& l : params.layers) out << "layer " << l.weight.rows() << ' ' << l.weight.cols() << '\n';
  out << "vocab\n";
  for (const auto& t : params.vocab) out << t << '\n';
  out << "data\n";
  for (Index i = 0; i < params.embeddings.rows(); ++i) {
    for (Index k = 0; k < params.embeddings.cols(); ++k) put_le(out, params.embeddings(i, k));
  }
  for (Index i = 0; i < params.token_weights.size(); ++i) put_le(out, params.token_weights[i]);
  for (const auto& l : params.layers) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      for (Index c = 0; c < l.weight.cols(); ++c) put_le(out, l.weight(r, c));
    }
    for (Index r = 0; r < l.bias.size(); ++r) put_le(out, l.bias[r]);
  }
}

RankerParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  auto expect = [&](const std::string& key) {
    std::string line;
    if (!std::getline(in, line) || line.rfind(key, 0) != 0) {
      throw ParseError(path, 0, "checkpoint header missing '" + key + "'");
    }
    return line.substr(key.size() + (line.size() > key.size() ? 1 : 0));
  };
  try {
    if (expect("wsrank-checkpoint") != "1") throw Error("unsupported checkpoint version");
    RankerParams p;
    const std::string mode = expect("output_mode");
    if (mode != "tanh" && mode != "logit") throw Error("unknown output mode '" + mode + "'");
    p.output_mode = mode == "tanh" ? OutputMode::Tanh : OutputMode::Logit;
    p.embeddings_frozen = expect("embeddings_frozen") == "1";
    const auto dim = std::stoul(expect("embedding_dim"));
    const auto vocab_size = std::stoul(expect("vocab_size"));
    const auto hash = std::stoull(expect("vocab_hash"), nullptr, 16);
    const auto n_layers = std::stoul(expect("layers"));
    std::vector<std::pair<Index, Index>> shapes;
    for (std::size_t i = 0; i < n_layers; ++i) {
      std::istringstream s(expect("layer"));
      Index r = 0, c = 0;
      s >> r >> c;
      shapes.emplace_back(r, c);
    }
    expect("vocab");
    p.vocab.resize(vocab_size);
    for (auto& t : p.vocab) {
      if (!std::getline(in, t)) throw Error("checkpoint vocabulary truncated");
    }
    expect("data");
    if (p.vocab_hash() != hash) throw Error("vocabulary hash mismatch");
    p.embeddings.resize(static_cast<Index>(vocab_size), static_cast<Index>(dim));
    for (Index i = 0; i < p.embeddings.rows(); ++i) {
      for (Index k = 0; k < p.embeddings.cols(); ++k) p.embeddings(i, k) = get_le(in);
    }
    p.token_weights.resize(static_cast<Index>(vocab_size));
    for (Index i = 0; i < p.token_weights.size(); ++i) p.token_weights[i] = get_le(in);
    for (auto [r, c] : shapes) {
      DenseLayer l{Eigen::MatrixXd(r, c), VectorXd(r)};
      for (Index i = 0; i < r; ++i) {
        for (Index j = 0; j < c; ++j) l.weight(i, j) = get_le(in);
      }
      for (Index i = 0; i < r; ++i) l.bias[i] = get_le(in);
      p.layers.push_back(std::move(l));
    }
    p.validate();
    return p;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(path, 0, e.what());
  }
}

}  // namespace wsrank
