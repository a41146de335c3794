#include "wsrank/labelmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "wsrank/error.hpp"
#include "wsrank/random.hpp"

namespace wsrank {
namespace {

using Row = std::vector<std::int8_t>;

double log_add(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_dims(const Eigen::VectorXd& w, std::size_t k) { has_propensity(w, k); }

void check_enumerable(std::size_t k, std::size_t max_k) {
  if (k > max_k) {
    throw Error("exact enumeration over " + std::to_string(k) +
                " rankers exceeds the cap of " + std::to_string(max_k) +
                "; use Gibbs mode");
  }
}

/// Calls f(row) for every vote vector in {-1,0,1}^k.
template <typename F>
void for_each_vote_vector(std::size_t k, F&& f) {
  Row row(k, -1);
  for (;;) {
    f(std::span<const std::int8_t>(row));
    std::size_t j = 0;
    while (j < k && row[j] == 1) row[j++] = -1;
    if (j == k) return;
    ++row[j];
  }
}

/// Distinct rows with multiplicities.
std::map<Row, std::size_t> compress(const LabelMatrix& votes) {
  std::map<Row, std::size_t> out;
  for (std::size_t i = 0; i < votes.rows; ++i) {
    auto r = votes.row(i);
    ++out[Row(r.begin(), r.end())];
  }
  return out;
}

/// Sum over rows of E_{y | row}[phi] and of log sum_y exp(w^T phi).
struct DataTerm {
  Eigen::VectorXd expected_features;
  double log_evidence = 0.0;
};

DataTerm data_term(const Eigen::VectorXd& w, const std::map<Row, std::size_t>& rows,
                   std::size_t k) {
  const bool prop = has_propensity(w, k);
  DataTerm out{Eigen::VectorXd::Zero(w.size()), 0.0};
  for (const auto& [row, count] : rows) {
    const double sp = feature_dot(w, row, +1);
    const double sn = feature_dot(w, row, -1);
    const double p = sigmoid(sp - sn);
    const double c = static_cast<double>(count);
    out.expected_features +=
        c * (p * feature_vector(row, +1, prop) + (1.0 - p) * feature_vector(row, -1, prop));
    out.log_evidence += c * log_add(sp, sn);
  }
  return out;
}

/// Persistent Gibbs chain over (votes, y).
class GibbsChain {
 public:
  GibbsChain(std::size_t k, bool propensity, std::uint64_t seed)
      : rng_(seed), votes_(k), y_(1), propensity_(propensity) {
    for (auto& v : votes_) v = static_cast<std::int8_t>(static_cast<int>(rng_.below(3)) - 1);
    y_ = rng_.bernoulli(0.5) ? 1 : -1;
  }

  void sweep(const Eigen::VectorXd& w) {
    const std::size_t k = votes_.size();
    double plus = 0.0;
    double minus = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (votes_[j] == 1) plus += w[static_cast<Eigen::Index>(j)];
      if (votes_[j] == -1) minus += w[static_cast<Eigen::Index>(j)];
    }
    y_ = rng_.bernoulli(sigmoid(plus - minus)) ? 1 : -1;

    for (std::size_t j = 0; j < k; ++j) {
      double energy[3];
      for (int v = -1; v <= 1; ++v) {
        double e = (v == y_) ? w[static_cast<Eigen::Index>(j)] : 0.0;
        if (v != 0 && propensity_) e += w[static_cast<Eigen::Index>(propensity_index(k, j))];
        if (v != 0) {
          for (std::size_t l = 0; l < k; ++l) {
            if (l == j || votes_[l] != v) continue;
            e += w[static_cast<Eigen::Index>(correlation_index(k, std::min(j, l), std::max(j, l)))];
          }
        }
        energy[v + 1] = e;
      }
      const double top = std::max({energy[0], energy[1], energy[2]});
      std::vector<double> probs{std::exp(energy[0] - top), std::exp(energy[1] - top),
                                std::exp(energy[2] - top)};
      votes_[j] = static_cast<std::int8_t>(static_cast<int>(rng_.categorical(probs)) - 1);
    }
  }

  Eigen::VectorXd features() const { return feature_vector(votes_, y_, propensity_); }

 private:
  Rng rng_;
  Row votes_;
  int y_;
  bool propensity_;
};

Eigen::VectorXd chain_average(GibbsChain& chain, const Eigen::VectorXd& w,
                              std::size_t samples) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(w.size());
  for (std::size_t s = 0; s < samples; ++s) {
    chain.sweep(w);
    acc += chain.features();
  }
  return acc / static_cast<double>(std::max<std::size_t>(samples, 1));
}

}  // namespace

std::size_t label_model_dim(std::size_t k, bool propensity) {
  return k + k * (k - 1) / 2 + (propensity ? k : 0);
}

std::size_t correlation_index(std::size_t k, std::size_t j, std::size_t l) {
  if (!(j < l && l < k)) throw Error("correlation_index requires j < l < k");
  // Pairs (0,1..k-1), (1,2..k-1), ... laid out after the k accuracy slots.
  return k + j * k - j * (j + 1) / 2 + (l - j - 1);
}

std::size_t propensity_index(std::size_t k, std::size_t j) {
  if (j >= k) throw Error("propensity_index requires j < k");
  return label_model_dim(k) + j;
}

bool has_propensity(const Eigen::VectorXd& w, std::size_t k) {
  const auto n = static_cast<std::size_t>(w.size());
  if (n == label_model_dim(k, false)) return false;
  if (n == label_model_dim(k, true)) return true;
  throw Error("label model weight vector has dimension " + std::to_string(n) + ", expected " +
              std::to_string(label_model_dim(k, false)) + " or " +
              std::to_string(label_model_dim(k, true)) + " for k=" + std::to_string(k));
}

bool LabelModelParams::has_propensity() const { return wsrank::has_propensity(w, k()); }

double LabelModelParams::correlation_weight(std::size_t j, std::size_t l) const {
  if (j > l) std::swap(j, l);
  return w[static_cast<Eigen::Index>(correlation_index(k(), j, l))];
}

double LabelModelParams::propensity_weight(std::size_t j) const {
  return has_propensity() ? w[static_cast<Eigen::Index>(propensity_index(k(), j))] : 0.0;
}

Eigen::VectorXd feature_vector(std::span<const std::int8_t> row, int y, bool propensity) {
  const std::size_t k = row.size();
  Eigen::VectorXd phi =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(label_model_dim(k, propensity)));
  std::size_t c = k;
  for (std::size_t j = 0; j < k; ++j) {
    phi[static_cast<Eigen::Index>(j)] = row[j] == y ? 1.0 : 0.0;
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t l = j + 1; l < k; ++l, ++c) {
      phi[static_cast<Eigen::Index>(c)] = (row[j] != 0 && row[j] == row[l]) ? 1.0 : 0.0;
    }
  }
  if (propensity) {
    for (std::size_t j = 0; j < k; ++j, ++c) phi[static_cast<Eigen::Index>(c)] = row[j] != 0;
  }
  return phi;
}

double feature_dot(const Eigen::VectorXd& w, std::span<const std::int8_t> row, int y) {
  const std::size_t k = row.size();
  double s = 0.0;
  std::size_t c = k;
  for (std::size_t j = 0; j < k; ++j) {
    if (row[j] == y) s += w[static_cast<Eigen::Index>(j)];
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t l = j + 1; l < k; ++l, ++c) {
      if (row[j] != 0 && row[j] == row[l]) s += w[static_cast<Eigen::Index>(c)];
    }
  }
  if (static_cast<std::size_t>(w.size()) > c) {
    for (std::size_t j = 0; j < k; ++j, ++c) {
      if (row[j] != 0) s += w[static_cast<Eigen::Index>(c)];
    }
  }
  return s;
}

double log_partition(const Eigen::VectorXd& w, std::size_t k, std::size_t max_k) {
  check_dims(w, k);
  check_enumerable(k, max_k);
  double log_z = -std::numeric_limits<double>::infinity();
  for_each_vote_vector(k, [&](std::span<const std::int8_t> row) {
    log_z = log_add(log_z, log_add(feature_dot(w, row, +1), feature_dot(w, row, -1)));
  });
  return log_z;
}

Eigen::VectorXd model_expectation(const Eigen::VectorXd& w, std::size_t k,
                                  std::size_t max_k) {
  const double log_z = log_partition(w, k, max_k);
  const bool prop = has_propensity(w, k);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(w.size());
  for_each_vote_vector(k, [&](std::span<const std::int8_t> row) {
    for (int y : {+1, -1}) {
      e += std::exp(feature_dot(w, row, y) - log_z) * feature_vector(row, y, prop);
    }
  });
  return e;
}

Eigen::VectorXd gibbs_model_expectation(const Eigen::VectorXd& w, std::size_t k,
                                        std::size_t samples, std::size_t burn_in,
                                        std::uint64_t seed) {
  GibbsChain chain(k, has_propensity(w, k), seed);
  for (std::size_t i = 0; i < burn_in; ++i) chain.sweep(w);
  return chain_average(chain, w, samples);
}

double log_marginal_likelihood(const Eigen::VectorXd& w, const LabelMatrix& votes,
                               std::size_t max_k) {
  check_dims(w, votes.cols());
  const double log_z = log_partition(w, votes.cols(), max_k);
  const auto term = data_term(w, compress(votes), votes.cols());
  return term.log_evidence - static_cast<double>(votes.rows) * log_z;
}

Eigen::VectorXd log_marginal_likelihood_gradient(const Eigen::VectorXd& w,
                                                 const LabelMatrix& votes,
                                                 std::size_t max_k) {
  check_dims(w, votes.cols());
  const auto term = data_term(w, compress(votes), votes.cols());
  return term.expected_features -
         static_cast<double>(votes.rows) * model_expectation(w, votes.cols(), max_k);
}

LabelModelParams fit_label_model(const LabelMatrix& votes, const LabelModelOptions& options,
                                 LabelModelTrace* trace) {
  if (votes.rows == 0) throw Error("fit_label_model requires at least one row");
  const std::size_t k = votes.cols();
  if (k == 0) throw Error("fit_label_model requires at least one ranker");
  const bool exact = options.mode == LabelModelMode::Exact;
  if (exact) check_enumerable(k, options.max_exact_k);

  LabelModelParams params;
  params.ranker_tags = votes.ranker_tags;
  params.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(label_model_dim(k, options.propensity)));
  params.w.head(static_cast<Eigen::Index>(k)).setConstant(options.init_accuracy);

  const auto rows = compress(votes);
  const double m = static_cast<double>(votes.rows);
  const bool can_score = k <= options.max_exact_k;
  auto objective = [&](const Eigen::VectorXd& w) {
    if (!can_score) return std::numeric_limits<double>::quiet_NaN();
    return (data_term(w, rows, k).log_evidence - m * log_partition(w, k, options.max_exact_k)) / m;
  };

  LabelModelTrace local;
  local.initial_objective = objective(params.w);

  GibbsChain chain(k, options.propensity, child_seed(options.seed, "gibbs"));
  if (!exact) {
    for (std::size_t i = 0; i < options.gibbs_burn_in; ++i) chain.sweep(params.w);
  }

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  Eigen::VectorXd moment1 = Eigen::VectorXd::Zero(params.w.size());
  Eigen::VectorXd moment2 = Eigen::VectorXd::Zero(params.w.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const Eigen::VectorXd data = data_term(params.w, rows, k).expected_features / m;
    const Eigen::VectorXd model = exact ? model_expectation(params.w, k, options.max_exact_k)
                                        : chain_average(chain, params.w, options.gibbs_samples);
    const Eigen::VectorXd grad = data - model - options.l2 * params.w;
    // Adam: the accuracy and agreement directions are badly conditioned
    // against each other, and a fixed step crawls along them.
    const double t = static_cast<double>(epoch + 1);
    moment1 = kBeta1 * moment1 + (1.0 - kBeta1) * grad;
    moment2 = kBeta2 * moment2 + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const Eigen::ArrayXd m_hat = moment1.array() / (1.0 - std::pow(kBeta1, t));
    const Eigen::ArrayXd v_hat = moment2.array() / (1.0 - std::pow(kBeta2, t));
    params.w += (options.lr * m_hat / (v_hat.sqrt() + 1e-8)).matrix();
    if (!params.w.allFinite()) {
      std::ostringstream msg;
      msg << "label model diverged at epoch " << epoch + 1 << " (lr=" << options.lr
          << ", |grad|=" << grad.norm() << ")";
      throw NumericalError(msg.str());
    }
    local.epochs = epoch + 1;
  }
  if (options.propensity && params.w.head(static_cast<Eigen::Index>(k)).sum() < 0.0) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto a = static_cast<Eigen::Index>(j);
      params.w[static_cast<Eigen::Index>(propensity_index(k, j))] += params.w[a];
      params.w[a] = -params.w[a];
    }
    local.mirrored = true;
  }
  local.final_objective = objective(params.w);
  if (can_score && !std::isfinite(local.final_objective)) {
    throw NumericalError("label model objective is not finite after fitting");
  }
  if (trace) *trace = local;
  return params;
}

double posterior(const LabelModelParams& params, std::span<const std::int8_t> row) {
  if (row.size() != params.k()) throw Error("posterior: row width differs from ranker count");
  return sigmoid(feature_dot(params.w, row, +1) - feature_dot(params.w, row, -1));
}

std::vector<double> posteriors(const LabelModelParams& params, const LabelMatrix& votes) {
  std::vector<double> out(votes.rows);
  for (std::size_t i = 0; i < votes.rows; ++i) out[i] = posterior(params, votes.row(i));
  return out;
}

void write_label_model(const std::string& path, const LabelModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "ranker_tags";
  for (const auto& t : params.ranker_tags) out << ' ' << t;
  out << '\n' << std::setprecision(17);
  const std::size_t k = params.k();
  for (std::size_t j = 0; j < k; ++j) {
    out << "accuracy " << params.ranker_tags[j] << ' ' << params.accuracy_weight(j) << '\n';
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t l = j + 1; l < k; ++l) {
      out << "correlation " << params.ranker_tags[j] << ' ' << params.ranker_tags[l] << ' '
          << params.correlation_weight(j, l) << '\n';
    }
  }
  if (params.has_propensity()) {
    for (std::size_t j = 0; j < k; ++j) {
      out << "propensity " << params.ranker_tags[j] << ' ' << params.propensity_weight(j) << '\n';
    }
  }
}

LabelModelParams read_label_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  LabelModelParams params;
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (lineno == 1) {
      if (kind != "ranker_tags") throw ParseError(path, lineno, "missing ranker_tags header");
      for (std::string t; fields >> t;) params.ranker_tags.push_back(t);
      continue;
    }
    std::string a, b;
    double v = 0.0;
    const bool ok = kind == "accuracy" || kind == "propensity"
                        ? static_cast<bool>(fields >> a >> v)
                    : kind == "correlation" ? static_cast<bool>(fields >> a >> b >> v)
                                            : false;
    if (!ok) throw ParseError(path, lineno, "malformed weight line");
    values.push_back(v);
  }
  if (values.size() != label_model_dim(params.k(), false) &&
      values.size() != label_model_dim(params.k(), true)) {
    throw ParseError(path, 0, "weight count does not match the ranker count");
  }
  params.w = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return params;
}

void write_soft_labels(const std::string& path, const std::vector<double>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << nlohmann::json{{"pair", i}, {"p", labels[i]}}.dump() << '\n';
  }
}

std::vector<double> read_soft_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("pair").get<std::size_t>() != out.size()) throw Error("pair index out of order");
      out.push_back(j.at("p").get<double>());
    } catch (const std::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  return out;
}

}  // namespace wsrank
