#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "raudit/crt.hpp"
#include "raudit/error.hpp"
#include "raudit/rng.hpp"

using namespace raudit;

namespace {

UnitTable noise_units(std::size_t n, std::size_t d, std::size_t m, std::uint64_t seed) {
  SyntheticScenario s;
  s.n = n;
  s.d = d;
  s.design = Design{CompleteDesign{static_cast<std::int64_t>(m)}};
  s.seed = seed;
  return standardize_features(generate_synthetic(s)).units;
}

CrtOptions options(std::size_t b, std::uint64_t seed) {
  CrtOptions o;
  o.resamples = b;
  o.master_seed = seed;
  return o;
}

}  // namespace

TEST_CASE("p-value counts ties and adds one to both sides") {
  std::vector<double> nulls(1000, -1.0);
  for (int k = 0; k < 4; ++k) nulls[static_cast<std::size_t>(k * 100)] = 2.0;
  CHECK(p_value(2.0, nulls) == 5.0 / 1001.0);
  CHECK(p_value(10.0, nulls) == 1.0 / 1001.0);
  CHECK(p_value(-1.0, nulls) == 1.0);
  CHECK(p_value(-0.5, std::vector<double>{-0.5, -0.5, 0.0, -2.0}) == 4.0 / 5.0);
}

TEST_CASE("max-T against a hand computation") {
  const std::vector<double> observed{2.0, 1.0};
  const std::vector<std::vector<double>> nulls{{1.0, 0.5}, {3.0, 0.2}, {0.5, 1.5}, {1.9, 2.1}};
  // row maxima 1, 3, 1.5, 2.1
  const auto adj = max_t_adjust(observed, nulls);
  CHECK(adj[0] == doctest::Approx(3.0 / 5.0));
  CHECK(adj[1] == doctest::Approx(5.0 / 5.0));
  CHECK_THROWS_AS(max_t_adjust(observed, {{1.0}}), EngineError);
}

TEST_CASE("Bonferroni and BH adjustments") {
  const std::vector<double> raw{0.01, 0.02, 0.03};
  CHECK(bonferroni_adjust(raw) == std::vector<double>{0.03, 0.06, 0.09});
  const auto bh = bh_adjust(raw);
  for (double p : bh) CHECK(p == doctest::Approx(0.03));
  // step-up minimum enforces monotonicity in the raw order
  const auto bh2 = bh_adjust(std::vector<double>{0.01, 0.04, 0.03, 0.2});
  CHECK(bh2[0] == doctest::Approx(0.04));
  CHECK(bh2[1] == doctest::Approx(0.16 / 3.0));
  CHECK(bh2[2] == doctest::Approx(0.16 / 3.0));
  CHECK(bh2[3] == doctest::Approx(0.2));
  CHECK(bonferroni_adjust(std::vector<double>{0.6, 0.1}) == std::vector<double>{1.0, 0.2});
}

TEST_CASE("Freedman-Diaconis histogram matches numpy's bin edges") {
  std::vector<double> x;
  for (int i = 1; i <= 50; ++i) x.push_back(std::sin(i) * i);
  const auto h = null_histogram(x, 3.0);
  CHECK(h.rule == "freedman-diaconis");
  REQUIRE(h.counts.size() == 7);
  CHECK(h.edges.front() == doctest::Approx(-46.733879985214124));
  CHECK(h.edges.back() == doctest::Approx(41.48226399184522));
  CHECK(h.counts == std::vector<std::size_t>{5, 3, 8, 14, 9, 6, 5});
  CHECK(h.observed == 3.0);

  std::vector<double> flat(20, 0.0);
  flat.push_back(5.0);
  const auto s = null_histogram(flat, 0.0);
  CHECK(s.rule == "sturges (zero IQR)");
  CHECK(s.counts.size() == 6);
  CHECK(std::accumulate(s.counts.begin(), s.counts.end(), std::size_t{0}) == 21);

  const auto one = null_histogram(std::vector<double>(5, 1.0), 1.0);
  CHECK(one.counts == std::vector<std::size_t>{5});
}

TEST_CASE("run_crt is deterministic and independent of the worker count") {
  const auto u = noise_units(40, 3, 20, 1);
  const auto plan = make_folds(u, 4, 2, false);
  const std::vector<LearnerSpec> specs{LearnerSpec{}, LearnerSpec{StumpsSpec{10, 0.3, 3}}};
  auto o = options(39, 77);
  const auto a = run_crt(u, Design{CompleteDesign{20}}, specs, plan, o);
  o.workers = 3;
  const auto b = run_crt(u, Design{CompleteDesign{20}}, specs, plan, o);
  CHECK(a == b);
  CHECK(report_to_json(a).dump() == report_to_json(b).dump());
  o.master_seed = 78;
  CHECK_FALSE(run_crt(u, Design{CompleteDesign{20}}, specs, plan, o).models[0].null == a.models[0].null);

  REQUIRE(a.models.size() == 2);
  CHECK(a.resample_seeds.size() == 39);
  CHECK(a.resample_seeds[5] == stable_hash(77, 5));
  for (const auto& m : a.models) {
    CHECK(m.null.statistics.size() == 39);
    CHECK(m.p_max_t >= m.raw_p);
    CHECK(m.p_bonferroni >= m.raw_p);
    CHECK(std::accumulate(m.histogram.counts.begin(), m.histogram.counts.end(), std::size_t{0}) == 39);
  }
  CHECK(a.models[1].spec.id == "boosted_stumps(rounds=10,lr=0.3,min_leaf=3)");
}

TEST_CASE("report json round trips and the null csv is flat") {
  const auto u = noise_units(30, 2, 15, 3);
  const auto plan = make_folds(u, 3, 1, false);
  auto rep = run_crt(u, Design{CompleteDesign{15}}, {LearnerSpec{}}, plan, options(19, 5));
  rep.config_hash = "abc";
  rep.provenance = {{"pre_treatment_window", "2007"}};
  rep.overrides = {{"resampling.master_seed", {{"from", 1}, {"to", 5}}}};
  const auto back = report_from_json(nlohmann::json::parse(report_to_json(rep).dump()));
  CHECK(back == rep);
  CHECK(report_to_json(back).dump() == report_to_json(rep).dump());
  const auto j = report_to_json(rep);
  CHECK(j.at("schema") == kReportSchema);
  CHECK(j.at("engine_version") == kEngineVersion);
  CHECK(j.contains("feature_hash"));
  CHECK(j.contains("master_seed"));
  const auto csv = null_statistics_csv(rep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 20);
  CHECK(csv.rfind("resample,seed,complement,\"logistic(l2=1)\"", 0) == 0);
}

TEST_CASE("antithetic resamples come in complement pairs") {
  const auto u = noise_units(20, 2, 10, 4);
  const auto plan = make_folds(u, 4, 1, false);
  auto o = options(40, 9);
  o.antithetic = true;
  const auto r = run_crt(u, Design{CompleteDesign{10}}, {LearnerSpec{}}, plan, o);
  for (std::size_t b = 0; b < 40; ++b) CHECK(r.resample_is_complement[b] == (b % 2 == 1));
  CHECK(r.antithetic);

  o.resamples = 41;
  CHECK_THROWS_AS(run_crt(u, Design{CompleteDesign{10}}, {LearnerSpec{}}, plan, o), EngineError);
  o.resamples = 40;
  try {
    run_crt(u, Design{CompleteDesign{7}}, {LearnerSpec{}}, plan, o);
    FAIL("expected an error");
  } catch (const EngineError& e) {
    CHECK(std::string(e.what()).find("antithetic resampling not applicable") != std::string::npos);
  }
}

TEST_CASE("run_crt input errors") {
  auto u = noise_units(20, 2, 10, 4);
  const auto plan = make_folds(u, 4, 1, false);
  CHECK_THROWS_AS(run_crt(u, Design{CompleteDesign{10}}, {LearnerSpec{}}, plan, options(18, 1)), EngineError);
  CHECK_THROWS_AS(run_crt(u, Design{CompleteDesign{10}}, {}, plan, options(19, 1)), InputError);
  CHECK_THROWS_AS(run_crt(u, Design{CompleteDesign{25}}, {LearnerSpec{}}, plan, options(19, 1)), DesignError);
  auto other = make_folds(testing::table(10), 2, 1, false);
  CHECK_THROWS_AS(run_crt(u, Design{CompleteDesign{10}}, {LearnerSpec{}}, other, options(19, 1)), InputError);
  u.treated.reset();
  CHECK_THROWS_AS(run_crt(u, Design{CompleteDesign{10}}, {LearnerSpec{}}, plan, options(19, 1)), InputError);
}

TEST_CASE("observed assignment outside the design is reported, not fatal") {
  auto u = noise_units(20, 2, 10, 4);
  (*u.treated)[0] = 1 - (*u.treated)[0];
  const auto plan = make_folds(u, 4, 1, false);
  const auto r = run_crt(u, Design{CompleteDesign{10}}, {LearnerSpec{}}, plan, options(19, 1));
  REQUIRE_FALSE(r.notes.empty());
  CHECK(r.notes[0].find("observed assignment") != std::string::npos);
}

TEST_CASE("unsafe reuse mode is flagged in the report") {
  const auto u = noise_units(20, 2, 10, 4);
  const auto plan = make_folds(u, 4, 1, false);
  auto o = options(19, 1);
  o.unsafe_reuse_observed_model = true;
  const auto r = run_crt(u, Design{CompleteDesign{10}}, {LearnerSpec{}}, plan, o);
  CHECK(r.unsafe_reuse_observed_model);
  CHECK(report_to_json(r).dump().find("UNSAFE") != std::string::npos);
}

TEST_CASE("degenerate blocks are excluded and listed") {
  auto u = noise_units(12, 2, 6, 8);
  u.blocks = std::vector<std::string>{"a", "a", "a", "a", "b", "b", "b", "b", "c", "c", "c", "c"};
  u.treated = Labels{1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 0, 0};
  const Design d{StratifiedDesign{{{"a", 2}, {"b", 4}, {"c", 1}}}};
  const auto plan = make_folds(u, 2, 1, true);
  const auto r = run_crt(u, d, {LearnerSpec{}}, plan, options(19, 1));
  CHECK(r.degenerate_units == std::vector<std::string>{u.ids[4], u.ids[5], u.ids[6], u.ids[7]});
}

TEST_CASE("exact enumeration tail") {
  const auto u = noise_units(8, 1, 4, 12);
  const auto plan = make_folds(u, 4, 3, false);
  const auto exact = enumerated_crt(u, Design{CompleteDesign{4}}, LearnerSpec{}, plan);
  CHECK(exact.total == 70.0);
  CHECK(exact.p >= 1.0 / 70.0);
  double tail = 0;
  for (std::size_t k = 0; k < exact.statistics.size(); ++k)
    if (exact.statistics[k] >= exact.observed) tail += 1;
  CHECK(exact.p == doctest::Approx(tail / 70.0));
  CHECK_THROWS_AS(enumerated_crt(u, Design{CompleteDesign{4}}, LearnerSpec{}, plan, {}, 10), EngineError);
}

TEST_CASE("cluster designs are analysed per cluster by default") {
  SyntheticScenario s;
  s.n = 60;
  s.d = 2;
  s.clusters = 12;
  s.design = make_cluster_design(Design{CompleteDesign{6}});
  s.seed = 5;
  const auto u = generate_synthetic(s);
  auto frame = prepare_analysis(u, s.design, false);
  CHECK(frame.analysis_unit == "cluster");
  CHECK(frame.table.n() == 12);
  CHECK(std::holds_alternative<CompleteDesign>(frame.design.variant));

  frame = prepare_analysis(u, s.design, true);
  CHECK(frame.table.n() == 60);
  const auto plan = plan_for_frame(frame, 3, 1, true);
  CHECK(plan.grouped_by_cluster);
  const auto r = run_crt(frame.table, frame.design, {LearnerSpec{}}, plan, options(19, 2));
  CHECK(r.models[0].null.statistics.size() == 19);
}
