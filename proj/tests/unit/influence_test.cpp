#include <doctest.h>

#include <cmath>

#include <Eigen/Cholesky>

#include "oracles.hpp"
#include "scratch.hpp"
#include "wsrank/error.hpp"
#include "wsrank/influence.hpp"

using namespace wsrank;
using namespace wsrank::testing;
using doctest::Approx;

namespace {

BottleneckDataset dataset(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  return {x, y};
}

Eigen::VectorXd random_vec(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

RankerParams small_logit_model(std::size_t hidden, std::uint64_t seed) {
  InitOptions opts;
  opts.hidden = {hidden};
  opts.embedding_dim = 4;
  opts.seed = seed;
  std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
  return init_ranker(vocab, nullptr, opts);
}

}  // namespace

TEST_CASE("bottleneck extraction") {
  auto p = small_logit_model(64, 1);
  std::vector<EncodedExample> ex{{{0}, {1, 2}, {1, 2}, 1.0}, {{0, 3}, {1}, {4}, 0.2}};
  auto data = extract_bottleneck(p, ex);
  CHECK(data.dim() == 65);
  CHECK(data.size() == 2);
  CHECK(data.deltas.row(0).isZero());
  CHECK(data.labels[1] == 0.2);
  const Eigen::VectorXd expected = bottleneck(p, ex[1].query, ex[1].d1) - bottleneck(p, ex[1].query, ex[1].d2);
  CHECK((data.deltas.row(1).head(64).transpose() - expected).norm() < 1e-15);
  CHECK(data.deltas(1, 64) == 0.0);

  auto flat = p;
  flat.layers[0].weight.setZero();
  CHECK(extract_bottleneck(flat, ex).deltas.isZero());

  // The pair logit is the last layer applied to the bottleneck difference.
  CHECK(last_layer(p).dot(data.deltas.row(1)) == Approx(pair_logit(p, ex[1])).epsilon(1e-12));

  auto tanh_model = p;
  tanh_model.output_mode = OutputMode::Tanh;
  CHECK_THROWS_AS(extract_bottleneck(tanh_model, ex), Error);
}

TEST_CASE("pair gradient") {
  Eigen::VectorXd delta(3);
  delta << 0.5, -1.0, 2.0;
  Eigen::VectorXd zero_theta = Eigen::VectorXd::Zero(3);
  CHECK((pair_gradient(zero_theta, delta, 1.0) + 0.5 * delta).norm() < 1e-15);
  CHECK(pair_gradient(zero_theta, delta, 0.5).isZero());

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto theta = random_vec(3, rng);
    const auto d = random_vec(3, rng);
    const double y = rng.uniform();
    const auto g = pair_gradient(theta, d, y);
    for (Eigen::Index i = 0; i < 3; ++i) {
      const double h = 1e-6;
      auto tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      const double fd = (logistic_loss(tp, d, y) - logistic_loss(tm, d, y)) / (2 * h);
      CHECK(g[i] == Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("hessian-vector products") {
  Eigen::MatrixXd e1 = Eigen::MatrixXd::Zero(1, 3);
  e1(0, 0) = 1.0;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
  auto single = dataset(e1, Eigen::VectorXd::Ones(1));
  Eigen::VectorXd unit = Eigen::VectorXd::Unit(3, 0);
  CHECK((hessian_vec(single, theta, 0.0, unit) - 0.25 * unit).norm() < 1e-15);
  CHECK(hessian_vec(single, theta, 0.3, Eigen::VectorXd::Zero(3)).isZero());

  BottleneckDataset empty{Eigen::MatrixXd(0, 3), Eigen::VectorXd(0)};
  Eigen::VectorXd v(3);
  v << 1, -2, 3;
  CHECK((hessian_vec(empty, theta, 0.7, v) - 0.7 * v).norm() < 1e-15);

  auto prob = logistic_problem(50, 6, 0.5, 4);
  auto data = dataset(prob.x, prob.y);
  Rng rng(5);
  const auto th = random_vec(6, rng);
  DampedHessian h(data, th, 0.01);
  // Dense reference.
  Eigen::MatrixXd dense = 0.01 * Eigen::MatrixXd::Identity(6, 6);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const double s = sigmoid(prob.x.row(i).dot(th));
    dense += s * (1 - s) / 50.0 * prob.x.row(i).transpose() * prob.x.row(i);
  }
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_vec(6, rng);
    const auto b = random_vec(6, rng);
    CHECK((h.apply(a) - dense * a).norm() < 1e-12);
    CHECK(std::abs(a.dot(h.apply(b)) - b.dot(h.apply(a))) < 1e-10);
    const auto lin = h.apply(2.0 * a - 3.0 * b);
    CHECK((lin - (2.0 * h.apply(a) - 3.0 * h.apply(b))).norm() < 1e-12);
  }
  CHECK_THROWS_AS(DampedHessian(data, th, -1.0), Error);
  CHECK_THROWS_AS(DampedHessian(data, Eigen::VectorXd::Zero(4), 0.1), Error);
}

TEST_CASE("conjugate gradients") {
  SUBCASE("identity") {
    Eigen::VectorXd b(4);
    b << 1, 2, 3, 4;
    auto res = cg_solve([](const Eigen::VectorXd& v) { return v; }, b, 1e-10, 10);
    CHECK(res.iterations == 1);
    CHECK(res.converged);
    CHECK((res.x - b).norm() < 1e-15);
  }
  SUBCASE("diagonal") {
    Eigen::VectorXd b(2);
    b << 2, 4;
    auto res = cg_solve(
        [](const Eigen::VectorXd& v) {
          Eigen::VectorXd out(2);
          out << 2 * v[0], 4 * v[1];
          return out;
        },
        b, 1e-12, 10);
    CHECK(res.x[0] == Approx(1.0));
    CHECK(res.x[1] == Approx(1.0));
  }
  SUBCASE("random SPD against a dense solve") {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::MatrixXd a(20, 20);
      for (auto& x : a.reshaped()) x = rng.normal();
      const Eigen::MatrixXd spd = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(20, 20);
      const auto b = random_vec(20, rng);
      auto res = cg_solve([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(spd * v); }, b,
                          1e-14, 200);
      const Eigen::VectorXd direct = spd.ldlt().solve(b);
      CHECK((res.x - direct).norm() <= 1e-8);
    }
  }
  SUBCASE("zero right-hand side and failures") {
    auto res = cg_solve([](const Eigen::VectorXd& v) { return v; }, Eigen::VectorXd::Zero(3), 1e-8, 5);
    CHECK(res.converged);
    CHECK(res.iterations == 0);
    Eigen::VectorXd bad(2);
    bad << 1, std::nan("");
    CHECK_THROWS_AS(cg_solve([](const Eigen::VectorXd& v) { return v; }, bad, 1e-8, 5),
                    NumericalError);
    CHECK_THROWS_AS(cg_solve([](const Eigen::VectorXd& v) { return Eigen::VectorXd(-v); },
                             Eigen::VectorXd::Ones(2), 1e-8, 5),
                    NumericalError);
    auto capped = cg_solve([](const Eigen::VectorXd& v) {
      Eigen::VectorXd out = v;
      for (Eigen::Index i = 0; i < v.size(); ++i) out[i] *= static_cast<double>(i + 1);
      return out;
    }, Eigen::VectorXd::Ones(5), 1e-12, 2);
    CHECK_FALSE(capped.converged);
    CHECK(capped.iterations == 2);
    CHECK(capped.relative_residual > 1e-12);
  }
}

TEST_CASE("influence scores") {
  auto prob = logistic_problem(80, 5, 0.5, 7);
  auto train = dataset(prob.x, prob.y);
  auto devp = logistic_problem(10, 5, 0.5, 8);
  auto dev = dataset(devp.x, devp.y);
  const double lambda = 0.05;
  const auto theta = newton_logistic(prob.x, prob.y, lambda, 80.0);

  SUBCASE("closed form") {
    InfluenceOptions opts;
    opts.damping = lambda;
    opts.cg_tol = 1e-12;
    auto report = influence_scores(train, theta, dev, opts);
    REQUIRE(report.scores.size() == 80);
    CHECK(report.all_converged);
    CHECK(report.solves.size() == 10);
    Eigen::MatrixXd dense = lambda * Eigen::MatrixXd::Identity(5, 5);
    for (Eigen::Index i = 0; i < 80; ++i) {
      const double s = sigmoid(prob.x.row(i).dot(theta));
      dense += s * (1 - s) / 80.0 * prob.x.row(i).transpose() * prob.x.row(i);
    }
    Eigen::VectorXd g_dev = Eigen::VectorXd::Zero(5);
    for (Eigen::Index t = 0; t < 10; ++t) {
      g_dev += pair_gradient(theta, devp.x.row(t).transpose(), devp.y[t]);
    }
    const Eigen::VectorXd solved = dense.ldlt().solve(g_dev);
    for (std::size_t i = 0; i < 80; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double expected = solved.dot(pair_gradient(theta, prob.x.row(r).transpose(), prob.y[r])) / 80.0;
      CHECK(report.scores[i] == Approx(expected).epsilon(1e-8).scale(1e-6));
      CHECK(report.dropped[i] == (report.scores[i] < 0.0));
    }
    CHECK(report.dropped_fraction() == Approx(static_cast<double>(report.dropped_count()) / 80.0));
  }

  SUBCASE("zero-gradient pairs score zero; self-influence is non-negative") {
    auto t2 = train;
    t2.deltas.row(0).setZero();
    auto self_dev = dataset(prob.x.topRows(1), prob.y.head(1));
    auto report = influence_scores(t2, theta, self_dev, {});
    CHECK(report.scores[0] == 0.0);
    auto self = influence_scores(train, theta, self_dev, {});
    CHECK(self.scores[0] >= 0.0);
  }

  SUBCASE("large damping approaches gradient dot products") {
    const double big = 1e6;
    InfluenceOptions opts;
    opts.damping = big;
    auto report = influence_scores(train, theta, dev, opts);
    Eigen::VectorXd g_dev = Eigen::VectorXd::Zero(5);
    for (Eigen::Index t = 0; t < 10; ++t) {
      g_dev += pair_gradient(theta, devp.x.row(t).transpose(), devp.y[t]);
    }
    for (std::size_t i = 0; i < 80; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double expected =
          g_dev.dot(pair_gradient(theta, prob.x.row(r).transpose(), prob.y[r])) / (80.0 * big);
      CHECK(report.scores[i] == Approx(expected).epsilon(1e-4).scale(1e-12));
    }
  }

  SUBCASE("scores track leave-one-out retraining") {
    InfluenceOptions opts;
    opts.damping = lambda;
    opts.cg_tol = 1e-12;
    auto report = influence_scores(train, theta, dev, opts);
    auto dev_loss = [&](const Eigen::VectorXd& th) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < 10; ++t) s += logistic_loss(th, devp.x.row(t).transpose(), devp.y[t]);
      return s;
    };
    const double base = dev_loss(theta);
    std::vector<double> actual;
    for (long i = 0; i < 80; ++i) {
      actual.push_back(dev_loss(newton_logistic(prob.x, prob.y, lambda, 80.0, i)) - base);
    }
    CHECK(pearson(report.scores, actual) >= 0.95);
  }

  SUBCASE("empty training set") {
    BottleneckDataset empty{Eigen::MatrixXd(0, 5), Eigen::VectorXd(0)};
    CHECK_THROWS_AS(influence_scores(empty, theta, dev, {}), Error);
  }
}

TEST_CASE("filtering and retraining") {
  auto fresh = small_logit_model(8, 2);
  std::vector<EncodedExample> ex{{{0}, {1}, {2}, 1.0}, {{0}, {3}, {4}, 1.0}, {{1}, {2}, {0}, 0.0}};
  TrainOptions opts;
  opts.epochs = 2;
  InfluenceReport keep_all;
  keep_all.scores = {0.1, 0.0, 2.0};
  keep_all.dropped = {false, false, false};
  RetrainSummary summary;
  filter_and_retrain(fresh, ex, keep_all, nullptr, opts, &summary);
  CHECK(summary.kept == 3);
  CHECK(summary.dropped_fraction == 0.0);

  InfluenceReport some = keep_all;
  some.scores = {-0.1, 0.3, -2.0};
  filter_and_retrain(fresh, ex, some, nullptr, opts, &summary);
  CHECK(summary.kept == 1);
  CHECK(summary.dropped_fraction == Approx(2.0 / 3.0));

  InfluenceReport none = keep_all;
  none.scores = {-1, -1, -1};
  CHECK_THROWS_AS(filter_and_retrain(fresh, ex, none, nullptr, opts), Error);
  InfluenceReport short_report;
  short_report.scores = {1.0};
  CHECK_THROWS_AS(filter_and_retrain(fresh, ex, short_report, nullptr, opts), Error);
}

TEST_CASE("gold dev pairs") {
  std::vector<Query> queries{make_query("q", "x"), make_query("unjudged", "x")};
  std::map<std::string, RankedList> cands{
      {"q", {"q", "ql", {{"a", 3}, {"b", 2}, {"c", 1}, {"d", 0}}}},
      {"unjudged", {"unjudged", "ql", {{"a", 1}}}}};
  Qrels gold{{"q", {{"a", 0}, {"b", 2}, {"c", 1}}}};
  auto pairs = gold_dev_pairs(queries, cands, gold, 100, 1);
  CHECK(pairs.size() == 4);
  for (const auto& p : pairs) {
    CHECK(gold.at("q").at(p.d1) > 0);
    CHECK((!gold.at("q").contains(p.d2) || gold.at("q").at(p.d2) == 0));
  }
  CHECK(gold_dev_pairs(queries, cands, gold, 3, 1).size() == 3);
  CHECK(gold_dev_pairs(queries, cands, gold, 3, 1) == gold_dev_pairs(queries, cands, gold, 3, 1));
}

TEST_CASE("influence report file") {
  ScratchDir dir("inf");
  InfluenceReport r;
  r.scores = {0.5, -0.25, 0.0};
  r.dropped = {false, true, false};
  r.pair_index = {3, 7, 9};
  write_influence_report(dir.file("r.jsonl"), r);
  auto back = read_influence_report(dir.file("r.jsonl"));
  CHECK(back.scores == r.scores);
  CHECK(back.dropped == r.dropped);
  CHECK(back.pair_index == r.pair_index);
  CHECK_THROWS_AS(read_influence_report(dir.write("bad.jsonl",
                                                  "{\"pair\":0,\"i_drop\":-1,\"dropped\":false}\n")),
                  ParseError);
}
