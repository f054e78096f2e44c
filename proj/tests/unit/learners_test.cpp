#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "helpers.hpp"
#include "raudit/error.hpp"
#include "raudit/learners.hpp"
#include "raudit/rng.hpp"

using namespace raudit;

namespace {

// Plain gradient ascent on the penalized log-likelihood; slow but independent of Newton.
std::vector<double> gradient_ascent(const Eigen::MatrixXd& x, const Labels& y, double lambda) {
  const auto n = x.rows(), d = x.cols();
  std::vector<double> w(static_cast<std::size_t>(d + 1), 0.0);
  for (int it = 0; it < 200000; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      double eta = w[0];
      for (Eigen::Index j = 0; j < d; ++j) eta += w[static_cast<std::size_t>(j + 1)] * x(i, j);
      const double r = y[static_cast<std::size_t>(i)] - 1.0 / (1.0 + std::exp(-eta));
      g[0] += r;
      for (Eigen::Index j = 0; j < d; ++j) g[static_cast<std::size_t>(j + 1)] += r * x(i, j);
    }
    for (std::size_t j = 1; j < w.size(); ++j) g[j] -= lambda * w[j];
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += 0.05 * g[j];
  }
  return w;
}

LearnerSpec logistic(double l2) { return LearnerSpec{LogisticSpec{l2, 100, 1e-10}}; }
LearnerSpec stumps(std::size_t rounds, double lr, std::size_t min_leaf) {
  return LearnerSpec{StumpsSpec{rounds, lr, min_leaf}};
}

}  // namespace

TEST_CASE("penalized logistic agrees with an independent gradient-ascent oracle") {
  Eigen::MatrixXd x(6, 2);
  x << 0.5, 1.0, -1.0, 0.3, 2.0, -0.5, 0.1, 0.1, -0.7, -1.2, 1.3, 0.8;
  const Labels y{1, 0, 1, 0, 0, 1};
  for (double lambda : {0.5, 1.0, 4.0}) {
    const auto m = std::get<LogisticModel>(fit(logistic(lambda), x, y));
    const auto w = gradient_ascent(x, y, lambda);
    CHECK(m.converged);
    CHECK(m.intercept == doctest::Approx(w[0]).epsilon(1e-7));
    CHECK(m.coefficients(0) == doctest::Approx(w[1]).epsilon(1e-7));
    CHECK(m.coefficients(1) == doctest::Approx(w[2]).epsilon(1e-7));
  }
}

TEST_CASE("heavy penalty shrinks to the intercept-only fit") {
  Eigen::MatrixXd x(4, 1);
  x << 1, 2, 3, 4;
  const Labels y{0, 1, 1, 1};
  const auto m = std::get<LogisticModel>(fit(logistic(1e12), x, y));
  CHECK(m.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  CHECK(std::abs(m.coefficients(0)) < 1e-9);
  const auto p = predict(m, x);
  CHECK(p(0) == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("separable data stays finite under the ridge penalty") {
  Eigen::MatrixXd x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  const Labels y{0, 0, 0, 1, 1, 1};
  const auto m = std::get<LogisticModel>(fit(logistic(1.0), x, y));
  CHECK(m.converged);
  CHECK(std::isfinite(m.coefficients(0)));
  CHECK(m.coefficients(0) > 0.5);
}

TEST_CASE("one-class training data gives a clipped constant") {
  Eigen::MatrixXd x(3, 1);
  x << 1, 2, 3;
  CHECK(std::get<ConstantModel>(fit(logistic(1), x, Labels{0, 0, 0}, 1e-6)).probability == 1e-6);
  CHECK(std::get<ConstantModel>(fit(stumps(5, 0.1, 1), x, Labels{1, 1, 1}, 1e-6)).probability == 1.0 - 1e-6);
  CHECK_THROWS_AS(fit(logistic(1), Eigen::MatrixXd(0, 1), Labels{}), InputError);
  CHECK_THROWS_AS(fit(logistic(1), x, Labels{0, 1}), InputError);
}

TEST_CASE("first stump splits a step function at the midpoint with Newton leaves") {
  Eigen::MatrixXd x(10, 1);
  for (int i = 0; i < 10; ++i) x(i, 0) = i + 1;
  const Labels y{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const auto m = std::get<StumpModel>(fit(stumps(1, 0.1, 1), x, y));
  REQUIRE(m.stumps.size() == 1);
  CHECK(m.base_score == 0.0);
  CHECK(m.stumps[0].feature == 0);
  CHECK(m.stumps[0].threshold == 5.5);
  // g = -0.5 and h = 0.25 on the left: 0.1 * (-2.5 / 1.25)
  CHECK(m.stumps[0].left == doctest::Approx(-0.2));
  CHECK(m.stumps[0].right == doctest::Approx(0.2));
}

TEST_CASE("stump ties go to the lowest feature and min_leaf is honoured") {
  Eigen::MatrixXd x(10, 2);
  for (int i = 0; i < 10; ++i) x(i, 0) = x(i, 1) = i;
  const Labels y{0, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  const auto m = std::get<StumpModel>(fit(stumps(3, 0.5, 3), x, y));
  REQUIRE_FALSE(m.stumps.empty());
  for (const auto& s : m.stumps) {
    CHECK(s.feature == 0);
    CHECK(s.threshold >= 2.5);  // leaves of at least 3
  }
}

TEST_CASE("boosting never increases the training loss") {
  CounterRng rng(5);
  Eigen::MatrixXd x(80, 3);
  Labels y(80);
  for (int i = 0; i < 80; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
    y[static_cast<std::size_t>(i)] = rng.bernoulli(x(i, 0) > 0 ? 0.8 : 0.3) ? 1 : 0;
  }
  const auto m = std::get<StumpModel>(fit(stumps(60, 1.0, 2), x, y));
  for (std::size_t r = 1; r < m.training_loss.size(); ++r) CHECK(m.training_loss[r] <= m.training_loss[r - 1]);
  CHECK(m.training_loss.back() < m.training_loss.front());
}

TEST_CASE("folds are balanced, stratified and reproducible") {
  auto u = testing::table(23);
  const auto plan = make_folds(u, 5, 9, false);
  auto sizes = plan.sizes();
  CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
  CHECK(make_folds(u, 5, 9, false) == plan);
  CHECK(make_folds(u, 5, 10, false).fold != plan.fold);

  std::vector<std::string> blocks;
  for (int i = 0; i < 23; ++i) blocks.push_back(i < 7 ? "a" : "b");
  u.blocks = blocks;
  const auto strat = make_folds(u, 3, 1, true);
  CHECK(strat.stratified);
  for (const std::string b : {"a", "b"}) {
    std::map<std::size_t, int> count;
    for (std::size_t i = 0; i < 23; ++i)
      if (blocks[i] == b) ++count[strat.fold[i]];
    int lo = 1000, hi = 0;
    for (std::size_t f = 0; f < 3; ++f) {
      lo = std::min(lo, count[f]);
      hi = std::max(hi, count[f]);
    }
    CHECK(hi - lo <= 1);
  }
  CHECK_THROWS_AS(make_folds(u, 1, 0, false), InputError);
  CHECK_THROWS_AS(make_folds(u, 24, 0, false), InputError);
  CHECK(fold_plan_from_json(fold_plan_to_json(strat)) == strat);
}

TEST_CASE("group folds keep clusters intact") {
  const std::vector<std::vector<std::size_t>> groups{{0, 1}, {2, 3, 4}, {5}, {6, 7}, {8, 9}};
  const auto plan = make_group_folds(groups, 10, 2, 4);
  CHECK(plan.grouped_by_cluster);
  for (const auto& g : groups)
    for (auto i : g) CHECK(plan.fold[i] == plan.fold[g[0]]);
}

TEST_CASE("cross-fitting never sees the held-out labels") {
  const auto u = testing::table(12, 1, [](std::size_t i, std::size_t) { return std::sin(1.0 + i); });
  const auto plan = make_folds(u, 3, 2, false);
  Labels y{1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1};
  const std::vector<double> q(12, 0.5);
  const auto p = cross_fit_predictions(u, y, plan, logistic(1.0), q);
  // Flipping labels inside fold 0 leaves fold 0's own predictions unchanged.
  auto flipped = y;
  for (std::size_t i = 0; i < 12; ++i)
    if (plan.fold[i] == 0) flipped[i] = 1 - flipped[i];
  const auto p2 = cross_fit_predictions(u, flipped, plan, logistic(1.0), q);
  for (std::size_t i = 0; i < 12; ++i)
    if (plan.fold[i] == 0) CHECK(p(static_cast<Eigen::Index>(i)) == p2(static_cast<Eigen::Index>(i)));
}

TEST_CASE("folds with too few of a class fall back to the baseline") {
  const auto u = testing::table(8);
  FoldPlan plan;
  plan.k = 2;
  plan.fold = {0, 0, 0, 0, 1, 1, 1, 1};
  const Labels y{1, 1, 0, 0, 0, 0, 0, 1};  // fold 0 trains on {0,0,0,1}: one treated unit
  std::vector<double> q{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  std::size_t degraded = 0;
  const auto p = CrossFitter(u.features, plan).predict(y, logistic(1.0), q, 1e-6, &degraded);
  CHECK(degraded == 1);
  CHECK(p(0) == 0.1);
  CHECK(p(3) == 0.4);
  CHECK(p(4) != 0.5);
}

TEST_CASE("learner specs validate and round trip") {
  CHECK_THROWS_AS(check_spec(logistic(-1)), InputError);
  CHECK_THROWS_AS(check_spec(stumps(0, 0.1, 1)), InputError);
  CHECK_THROWS_AS(check_spec(stumps(5, 1.5, 1)), InputError);
  auto s = stumps(20, 0.3, 4);
  s.train_seed = 77;
  // serialization pins the generated label as the id
  auto back = learner_from_json(learner_to_json(s));
  CHECK(back.id == learner_label(s));
  back.id.clear();
  CHECK(back == s);
  auto l = logistic(0.25);
  l.id = "ridge-a";
  CHECK(learner_from_json(learner_to_json(l)) == l);
  CHECK(learner_label(stumps(50, 0.1, 5)) == "boosted_stumps(rounds=50,lr=0.1,min_leaf=5)");
  CHECK(learner_label(l) == "ridge-a");
  CHECK_THROWS_AS(learner_from_json({{"kind", "forest"}}), InputError);
}
