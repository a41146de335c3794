#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "scratch.hpp"
#include "wsrank/error.hpp"
#include "wsrank/labelmodel.hpp"

using namespace wsrank;
using namespace wsrank::testing;
using doctest::Approx;

namespace {

using Row = std::vector<std::int8_t>;

LabelMatrix matrix_of(std::size_t k, const std::vector<Row>& rows) {
  LabelMatrix m;
  for (std::size_t j = 0; j < k; ++j) m.ranker_tags.push_back("r" + std::to_string(j));
  for (const auto& r : rows) m.values.insert(m.values.end(), r.begin(), r.end());
  m.rows = rows.size();
  return m;
}

LabelMatrix random_matrix(std::size_t k, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Row> rows(m, Row(k));
  for (auto& r : rows) {
    for (auto& v : r) v = static_cast<std::int8_t>(static_cast<int>(rng.below(3)) - 1);
  }
  return matrix_of(k, rows);
}

Eigen::VectorXd random_w(Eigen::Index dim, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  Eigen::VectorXd w(dim);
  for (Eigen::Index i = 0; i < dim; ++i) w[i] = scale * rng.normal();
  return w;
}

double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("feature vectors") {
  CHECK(as_vector(feature_vector(Row{1, 1}, 1)) == std::vector<double>{1, 1, 1});
  CHECK(as_vector(feature_vector(Row{0, 0}, 1)) == std::vector<double>{0, 0, 0});
  CHECK(as_vector(feature_vector(Row{0, 0}, -1)) == std::vector<double>{0, 0, 0});
  CHECK(as_vector(feature_vector(Row{1, -1, 0}, -1)) == std::vector<double>{0, 1, 0, 0, 0, 0});
  CHECK(as_vector(feature_vector(Row{1, -1, 0}, -1, true)) ==
        std::vector<double>{0, 1, 0, 0, 0, 0, 1, 1, 0});

  CHECK(label_model_dim(4) == 10);
  CHECK(label_model_dim(4, true) == 14);
  CHECK(correlation_index(3, 0, 1) == 3);
  CHECK(correlation_index(3, 0, 2) == 4);
  CHECK(correlation_index(3, 1, 2) == 5);
  CHECK(propensity_index(3, 2) == 8);
  CHECK_FALSE(has_propensity(Eigen::VectorXd::Zero(6), 3));
  CHECK(has_propensity(Eigen::VectorXd::Zero(9), 3));
  CHECK_THROWS_AS(has_propensity(Eigen::VectorXd::Zero(7), 3), Error);
}

TEST_CASE("feature vectors match the reference for every configuration") {
  for (std::size_t k : {1u, 2u, 3u, 4u}) {
    for (bool prop : {false, true}) {
      const auto w = random_w(static_cast<Eigen::Index>(label_model_dim(k, prop)), 17 + k);
      for (const auto& v : all_vote_vectors(k)) {
        Row row(v.begin(), v.end());
        for (int y : {-1, 1}) {
          const auto ref = brute_phi(v, y, prop);
          CHECK(as_vector(feature_vector(row, y, prop)) == ref);
          CHECK(feature_dot(w, row, y) == Approx(brute_dot(w, ref)).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("log marginal likelihood") {
  SUBCASE("uniform weights") {
    for (std::size_t k : {1u, 3u}) {
      auto votes = random_matrix(k, 25, 3);
      const double expected = -25.0 * static_cast<double>(k) * std::log(3.0);
      CHECK(log_marginal_likelihood(Eigen::VectorXd::Zero(label_model_dim(k)), votes) ==
            Approx(expected));
      CHECK(log_marginal_likelihood(Eigen::VectorXd::Zero(label_model_dim(k, true)), votes) ==
            Approx(expected));
    }
  }
  SUBCASE("single voter, six configurations") {
    const double a = 0.7;
    Eigen::VectorXd w(1);
    w << a;
    auto votes = matrix_of(1, {{1}});
    // (+1,+1) and (-1,-1) carry e^a; (+1,-1), (-1,+1), (0,+1), (0,-1) carry 1.
    const double expected = std::log(std::exp(a) + 1.0) - std::log(2.0 * std::exp(a) + 4.0);
    CHECK(log_marginal_likelihood(w, votes) == Approx(expected).epsilon(1e-12));
  }
  SUBCASE("row order does not matter") {
    auto votes = random_matrix(3, 40, 8);
    auto shuffled = votes;
    std::vector<std::size_t> order(votes.rows);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(2);
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i) {
      for (std::size_t j = 0; j < 3; ++j) shuffled.values[i * 3 + j] = votes.at(order[i], j);
    }
    const auto w = random_w(6, 5);
    CHECK(log_marginal_likelihood(w, shuffled) == Approx(log_marginal_likelihood(w, votes)));
  }
  SUBCASE("enumeration cap") {
    auto votes = random_matrix(3, 5, 1);
    CHECK_THROWS_AS(log_marginal_likelihood(Eigen::VectorXd::Zero(6), votes, 2), Error);
  }
}

TEST_CASE("objective and gradient agree with brute-force enumeration") {
  for (std::size_t k : {1u, 2u, 3u, 4u}) {
    for (bool prop : {false, true}) {
      auto votes = random_matrix(k, 60, 100 + k);
      const auto w = random_w(static_cast<Eigen::Index>(label_model_dim(k, prop)), 200 + k);
      const auto ref = brute_label_model(w, votes, prop);
      CHECK(log_marginal_likelihood(w, votes) == Approx(ref.objective).epsilon(1e-10));
      CHECK(max_rel_error(log_marginal_likelihood_gradient(w, votes), ref.gradient) < 1e-8);
    }
  }
}

TEST_CASE("gradient matches central differences") {
  for (std::size_t k : {2u, 3u, 4u}) {
    for (bool prop : {false, true}) {
      auto votes = random_matrix(k, 50, 300 + k);
      auto w = random_w(static_cast<Eigen::Index>(label_model_dim(k, prop)), 400 + k);
      const auto g = log_marginal_likelihood_gradient(w, votes);
      Eigen::VectorXd fd(w.size());
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        auto wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        fd[i] = (log_marginal_likelihood(wp, votes) - log_marginal_likelihood(wm, votes)) / (2 * h);
      }
      CHECK(max_rel_error(g, fd) <= 1e-5);
    }
  }
}

TEST_CASE("model expectation: exact and Gibbs") {
  for (bool prop : {false, true}) {
    const std::size_t k = 3;
    const auto w = random_w(static_cast<Eigen::Index>(label_model_dim(k, prop)), 77, 0.6);
    // The exact expectation is the gradient of log Z1, checked against enumeration.
    Eigen::VectorXd ref = Eigen::VectorXd::Zero(w.size());
    double z = 0.0;
    for (const auto& v : all_vote_vectors(k)) {
      for (int y : {-1, 1}) {
        const auto phi = brute_phi(v, y, prop);
        const double e = std::exp(brute_dot(w, phi));
        z += e;
        for (Eigen::Index i = 0; i < w.size(); ++i) ref[i] += e * phi[static_cast<std::size_t>(i)];
      }
    }
    ref /= z;
    const auto exact = model_expectation(w, k);
    CHECK((exact - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(log_partition(w, k) == Approx(std::log(z)).epsilon(1e-12));

    const auto small = gibbs_model_expectation(w, k, 300, 100, 9);
    const auto large = gibbs_model_expectation(w, k, 60000, 100, 9);
    const double err_small = (small - exact).cwiseAbs().mean();
    const double err_large = (large - exact).cwiseAbs().mean();
    CHECK(err_large < err_small);
    CHECK(err_large < 0.01);
  }
}

TEST_CASE("posterior") {
  LabelModelParams zero{{"a", "b"}, Eigen::VectorXd::Zero(3)};
  CHECK(posterior(zero, Row{1, -1}) == 0.5);

  LabelModelParams p{{"a", "b"}, Eigen::VectorXd::Zero(3)};
  p.w << 1, 1, 0;
  CHECK(posterior(p, Row{1, 1}) == Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)));
  CHECK(posterior(p, Row{1, 1}) == Approx(0.8808).epsilon(1e-4));
  CHECK(posterior(p, Row{0, 0}) == 0.5);
  CHECK_THROWS_AS(posterior(p, Row{1}), Error);

  for (bool prop : {false, true}) {
    LabelModelParams r{{"a", "b", "c"}, random_w(static_cast<Eigen::Index>(label_model_dim(3, prop)), 5)};
    CHECK(posterior(r, Row{0, 0, 0}) == Approx(0.5));
    for (const auto& v : all_vote_vectors(3)) {
      Row row(v.begin(), v.end());
      Row neg(row);
      for (auto& x : neg) x = static_cast<std::int8_t>(-x);
      CHECK(posterior(r, neg) == Approx(1.0 - posterior(r, row)).epsilon(1e-12));
    }
  }
}

TEST_CASE("mirror symmetry of the propensity layout") {
  auto votes = random_matrix(3, 80, 12);
  auto w = random_w(9, 13);
  Eigen::VectorXd mirrored = w;
  for (Eigen::Index j = 0; j < 3; ++j) {
    mirrored[j] = -w[j];
    mirrored[static_cast<Eigen::Index>(propensity_index(3, static_cast<std::size_t>(j)))] += w[j];
  }
  CHECK(log_marginal_likelihood(mirrored, votes) ==
        Approx(log_marginal_likelihood(w, votes)).epsilon(1e-12));
  LabelModelParams a{votes.ranker_tags, w}, b{votes.ranker_tags, mirrored};
  for (std::size_t i = 0; i < votes.rows; ++i) {
    CHECK(posterior(b, votes.row(i)) == Approx(1.0 - posterior(a, votes.row(i))).epsilon(1e-12));
  }
}

TEST_CASE("fitting") {
  SUBCASE("a reliable voter outweighs a coin flip") {
    // With only these two voters the vote distribution is uniform whatever the
    // first accuracy is; a third voter makes the accuracies identifiable.
    for (double abstain : {0.0, 0.2}) {
      auto planted = planted_votes({0.9, 0.5, 0.75}, abstain, 2000, 31);
      auto fit = fit_label_model(planted.matrix, {});
      CHECK(fit.accuracy_weight(0) > fit.accuracy_weight(1) + 0.5);
    }
  }
  SUBCASE("a single always-positive voter") {
    for (bool prop : {false, true}) {
      auto votes = matrix_of(1, std::vector<Row>(50, Row{1}));
      LabelModelOptions opts;
      opts.propensity = prop;
      auto fit = fit_label_model(votes, opts);
      CHECK(posterior(fit, Row{1}) > 0.5);
    }
  }
  SUBCASE("the fit never lowers the objective and keeps a positive orientation") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto planted = planted_votes({0.8, 0.7, 0.65}, 0.3, 500, seed);
      for (bool prop : {false, true}) {
        LabelModelOptions opts;
        opts.propensity = prop;
        LabelModelTrace trace;
        auto fit = fit_label_model(planted.matrix, opts, &trace);
        CHECK(trace.final_objective >= trace.initial_objective);
        CHECK(trace.epochs == opts.epochs);
        if (prop) CHECK(fit.w.head(3).sum() >= 0.0);
      }
    }
  }
  SUBCASE("propensity recovers labels when abstentions are common") {
    auto planted = planted_votes({0.9, 0.7, 0.6}, 0.3, 3000, 4);
    auto fit = fit_label_model(planted.matrix, {});
    CHECK(fit.has_propensity());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < planted.matrix.rows; ++i) {
      const int guess = posterior(fit, planted.matrix.row(i)) >= 0.5 ? 1 : -1;
      hits += guess == planted.truth[i];
    }
    CHECK(static_cast<double>(hits) / 3000.0 > 0.8);
  }
  SUBCASE("Gibbs and exact fits agree") {
    auto planted = planted_votes({0.8, 0.7, 0.6}, 0.3, 200, 5);
    LabelModelOptions exact;
    LabelModelOptions gibbs;
    gibbs.mode = LabelModelMode::Gibbs;
    gibbs.gibbs_samples = 5000;
    auto pe = posteriors(fit_label_model(planted.matrix, exact), planted.matrix);
    auto pg = posteriors(fit_label_model(planted.matrix, gibbs), planted.matrix);
    double mad = 0.0;
    for (std::size_t i = 0; i < pe.size(); ++i) mad += std::abs(pe[i] - pg[i]);
    CHECK(mad / static_cast<double>(pe.size()) < 0.05);
  }
  SUBCASE("errors") {
    LabelMatrix empty;
    empty.ranker_tags = {"a"};
    CHECK_THROWS_AS(fit_label_model(empty, {}), Error);
    auto votes = random_matrix(2, 30, 3);
    LabelModelOptions wild;
    wild.lr = 1e300;
    wild.l2 = 1e10;
    CHECK_THROWS_AS(fit_label_model(votes, wild), NumericalError);
    LabelModelOptions capped;
    capped.max_exact_k = 1;
    CHECK_THROWS_AS(fit_label_model(votes, capped), Error);
  }
}

TEST_CASE("model and soft-label files") {
  ScratchDir dir("lm");
  for (bool prop : {false, true}) {
    LabelModelParams p{{"bm25", "ql", "tfidf"},
                       random_w(static_cast<Eigen::Index>(label_model_dim(3, prop)), 3)};
    write_label_model(dir.file("m.txt"), p);
    auto back = read_label_model(dir.file("m.txt"));
    CHECK(back.ranker_tags == p.ranker_tags);
    CHECK(back.w == p.w);
  }
  std::vector<double> soft{0.25, 0.5, 1.0 / 3.0};
  write_soft_labels(dir.file("s.jsonl"), soft);
  CHECK(read_soft_labels(dir.file("s.jsonl")) == soft);
  CHECK_THROWS_AS(read_label_model(dir.write("bad.txt", "ranker_tags a b\naccuracy a x\n")),
                  ParseError);
}
