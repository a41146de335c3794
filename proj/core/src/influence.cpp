#include "wsrank/influence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>
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

}  // namespace

BottleneckDataset extract_bottleneck(const RankerParams& params,
                                     const std::vector<EncodedExample>& examples) {
  if (params.output_mode != OutputMode::Logit) {
    throw Error("influence analysis requires a logit-output model");
  }
  const Index h = static_cast<Index>(params.bottleneck_dim());
  BottleneckDataset out;
  out.deltas.resize(static_cast<Index>(examples.size()), h + 1);
  out.labels.resize(static_cast<Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const auto r = static_cast<Index>(i);
    out.deltas.row(r).head(h) =
        (bottleneck(params, ex.query, ex.d1) - bottleneck(params, ex.query, ex.d2)).transpose();
    // The bias slot is 1 - 1.
    out.deltas(r, h) = 0.0;
    out.labels[r] = ex.rel;
  }
  return out;
}

Eigen::VectorXd last_layer(const RankerParams& params) {
  const auto& out = params.layers.back();
  VectorXd theta(out.weight.cols() + 1);
  theta << out.weight.row(0).transpose(), out.bias[0];
  return theta;
}

Eigen::VectorXd pair_gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& delta,
                              double y) {
  return (sigmoid(theta.dot(delta)) - y) * delta;
}

DampedHessian::DampedHessian(const BottleneckDataset& data, const Eigen::VectorXd& theta,
                             double damping)
    : deltas_(&data.deltas), damping_(damping), dim_(static_cast<std::size_t>(theta.size())) {
  if (damping < 0.0) throw Error("damping must be non-negative");
  if (data.size() > 0 && data.dim() != dim_) {
    throw Error("bottleneck dimension does not match the parameter vector");
  }
  const auto n = static_cast<Index>(data.size());
  curvature_.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double s = sigmoid(data.deltas.row(i).dot(theta));
    curvature_[i] = s * (1.0 - s) / static_cast<double>(n);
  }
}

Eigen::VectorXd DampedHessian::apply(const Eigen::VectorXd& v) const {
  VectorXd out = damping_ * v;
  if (curvature_.size() > 0) {
    const VectorXd proj = (*deltas_) * v;
    out.noalias() += deltas_->transpose() * curvature_.cwiseProduct(proj);
  }
  return out;
}

Eigen::VectorXd hessian_vec(const BottleneckDataset& data, const Eigen::VectorXd& theta,
                            double damping, const Eigen::VectorXd& v) {
  return DampedHessian(data, theta, damping).apply(v);
}

CgResult cg_solve(const LinearOperator& op, const Eigen::VectorXd& b, double tol,
                  std::size_t max_iter) {
  CgResult res;
  res.x = VectorXd::Zero(b.size());
  const double b_norm = b.norm();
  if (!std::isfinite(b_norm)) throw NumericalError("conjugate gradients: non-finite right-hand side");
  if (b_norm == 0.0) {
    res.converged = true;
    return res;
  }
  VectorXd r = b;
  VectorXd p = r;
  double rr = r.squaredNorm();
  while (res.iterations < max_iter) {
    const VectorXd ap = op(p);
    const double pap = p.dot(ap);
    if (!std::isfinite(pap)) throw NumericalError("conjugate gradients: non-finite curvature");
    if (pap <= 0.0) throw NumericalError("conjugate gradients: operator is not positive definite");
    const double alpha = rr / pap;
    res.x += alpha * p;
    r -= alpha * ap;
    ++res.iterations;
    const double rr_next = r.squaredNorm();
    if (!std::isfinite(rr_next)) throw NumericalError("conjugate gradients: non-finite residual");
    if (std::sqrt(rr_next) <= tol * b_norm) {
      rr = rr_next;
      break;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  // Report the true residual rather than the recurrence estimate.
  res.relative_residual = (op(res.x) - b).norm() / b_norm;
  res.converged = std::sqrt(rr) <= tol * b_norm;
  return res;
}

std::size_t InfluenceReport::dropped_count() const {
  return static_cast<std::size_t>(std::count(dropped.begin(), dropped.end(), true));
}

double InfluenceReport::dropped_fraction() const {
  return scores.empty() ? 0.0
                        : static_cast<double>(dropped_count()) /
                              static_cast<double>(scores.size());
}

InfluenceReport influence_scores(const BottleneckDataset& train, const Eigen::VectorXd& theta,
                                 const BottleneckDataset& dev,
                                 const InfluenceOptions& options) {
  if (train.size() == 0) throw Error("influence_scores: empty training set");
  const DampedHessian hessian(train, theta, options.damping);
  const std::size_t max_iter =
      options.cg_max_iter > 0 ? options.cg_max_iter : static_cast<std::size_t>(theta.size());
  const LinearOperator op = [&](const VectorXd& v) { return hessian.apply(v); };

  InfluenceReport report;
  VectorXd solved_sum = VectorXd::Zero(theta.size());
  for (std::size_t t = 0; t < dev.size(); ++t) {
    const auto r = static_cast<Index>(t);
    const VectorXd g = pair_gradient(theta, dev.deltas.row(r).transpose(), dev.labels[r]);
    CgResult res = cg_solve(op, g, options.cg_tol, max_iter);
    if (!res.converged && res.relative_residual > options.cg_tol * options.cg_slack) {
      report.all_converged = false;
      spdlog::warn("CG for dev point {} stopped at relative residual {:.3e} after {} iterations",
                   t, res.relative_residual, res.iterations);
    }
    solved_sum += res.x;
    res.x.resize(0);
    report.solves.push_back(std::move(res));
  }

  const double inv_n = 1.0 / static_cast<double>(train.size());
  report.scores.resize(train.size());
  report.dropped.resize(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto r = static_cast<Index>(i);
    const VectorXd g = pair_gradient(theta, train.deltas.row(r).transpose(), train.labels[r]);
    report.scores[i] = inv_n * solved_sum.dot(g);
    report.dropped[i] = report.scores[i] < 0.0;
  }
  return report;
}

std::vector<TrainPair> gold_dev_pairs(const std::vector<Query>& queries,
                                      const std::map<std::string, RankedList>& candidates,
                                      const Qrels& gold, std::size_t max_per_query,
                                      std::uint64_t seed) {
  std::vector<TrainPair> out;
  for (const auto& q : queries) {
    auto c = candidates.find(q.query_id);
    auto g = gold.find(q.query_id);
    if (c == candidates.end() || g == gold.end()) continue;
    std::vector<const RankedEntry*> rel, nonrel;
    for (const auto& e : c->second.entries) {
      auto it = g->second.find(e.doc_id);
      (it != g->second.end() && it->second > 0 ? rel : nonrel).push_back(&e);
    }
    std::vector<TrainPair> pairs;
    for (const auto* r : rel) {
      for (const auto* n : nonrel) {
        pairs.push_back({q.query_id, r->doc_id, n->doc_id, r->score, n->score,
                         Provenance::BothTop10});
      }
    }
    if (pairs.size() > max_per_query) {
      Rng rng(child_seed(seed, q.query_id));
      rng.shuffle(pairs);
      pairs.resize(max_per_query);
    }
    out.insert(out.end(), pairs.begin(), pairs.end());
  }
  return out;
}

RankerParams filter_and_retrain(const RankerParams& fresh,
                                const std::vector<EncodedExample>& examples,
                                const InfluenceReport& report, const DevScorer& dev,
                                const TrainOptions& options, RetrainSummary* summary,
                                TrainTrace* trace) {
  if (report.scores.size() != examples.size()) {
    throw Error("influence report is not aligned with the training set");
  }
  std::vector<EncodedExample> kept;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!(report.scores[i] < 0.0)) kept.push_back(examples[i]);
  }
  if (kept.empty()) throw Error("every training pair was dropped; nothing to retrain on");
  RetrainSummary s{examples.size(), kept.size(),
                   1.0 - static_cast<double>(kept.size()) / static_cast<double>(examples.size())};
  spdlog::info("influence filter dropped {:.3f} of {} training pairs", s.dropped_fraction,
               s.original);
  if (summary) *summary = s;
  return train_ranker(fresh, kept, dev, options, trace);
}

void write_influence_report(const std::string& path, const InfluenceReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  for (std::size_t i = 0; i < report.scores.size(); ++i) {
    const std::size_t idx = report.pair_index.empty() ? i : report.pair_index[i];
    out << nlohmann::json{{"pair", idx}, {"i_drop", report.scores[i]},
                          {"dropped", static_cast<bool>(report.dropped[i])}}
               .dump()
        << '\n';
  }
}

InfluenceReport read_influence_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file for reading");
  InfluenceReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      report.pair_index.push_back(j.at("pair").get<std::size_t>());
      report.scores.push_back(j.at("i_drop").get<double>());
      report.dropped.push_back(j.at("dropped").get<bool>());
      if (report.dropped.back() != (report.scores.back() < 0.0)) {
        throw Error("dropped flag disagrees with the sign of i_drop");
      }
    } catch (const std::exception& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
  return report;
}

}  // namespace wsrank
