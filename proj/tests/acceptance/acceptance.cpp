// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion names (e.g. AC3 AC9)
// as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "raudit/commands.hpp"
#include "raudit/crt.hpp"
#include "raudit/diagnostics.hpp"
#include "raudit/rng.hpp"
#include "raudit/synthetic.hpp"

using namespace raudit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 99% two-sided normal band for a binomial proportion.
std::pair<double, double> band99(double p, std::size_t n) {
  const double half = 2.5758293035489 * std::sqrt(p * (1 - p) / static_cast<double>(n));
  return {p - half, p + half};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Null-mean anchor bookkeeping shared by every validity run.
struct AnchorLog {
  std::size_t runs = 0;
  std::size_t violations = 0;
  double worst = -std::numeric_limits<double>::infinity();  // max of mean / se
  void add(double mean, double se) {
    ++runs;
    if (mean > 3 * se) ++violations;
    if (se > 0) worst = std::max(worst, mean / se);
  }
};
AnchorLog anchor;

Outcome ac1() {
  std::vector<double> nulls(1000);
  for (std::size_t b = 0; b < nulls.size(); ++b) nulls[b] = -1.0 - static_cast<double>(b);
  const double observed = 2.5;
  nulls[10] = 3.0;
  nulls[200] = 2.5;  // a tie counts as an exceedance
  nulls[500] = 7.0;
  nulls[999] = 100.0;
  const double p = p_value(observed, nulls);
  const bool exact = p == 5.0 / 1001.0;
  const auto printed = fmt("%.4f", p);
  return {exact && printed == "0.0050", fmt("p = %.17g (5/1001 bit-exact: %s), rounded %s", p, exact ? "yes" : "no",
                                            printed.c_str())};
}

AuditSettings logistic_settings(std::size_t b) {
  AuditSettings s;
  s.specs = {LearnerSpec{}};
  s.folds = 5;
  s.crt.resamples = b;
  return s;
}

Outcome ac2() {
  SyntheticScenario s;
  s.n = 100;
  s.d = 10;
  s.design = Design{CompleteDesign{50}};
  const auto curve = simulate_power(s, logistic_settings(199), {0.0}, 500, 0.05, 2024);
  const auto& point = curve.points[0];
  std::size_t rejections = 0;
  for (const auto& r : point.records) {
    rejections += r.raw_p <= 0.05;
    anchor.add(r.null_mean, r.null_se);
  }
  const double rate = static_cast<double>(rejections) / 500.0;
  return {rate >= 0.02 && rate <= 0.08, fmt("rejection rate %.3f over 500 placebo runs (band [0.02, 0.08])", rate)};
}

Outcome ac3() {
  CounterRng rng(88);
  auto units = UnitTable{};
  units.feature_names = {"x"};
  units.features.resize(8, 1);
  for (int i = 0; i < 8; ++i) {
    units.ids.push_back("u" + std::to_string(i));
    units.features(i, 0) = rng.normal();
  }
  const Design design{CompleteDesign{4}};
  const BoundDesign bound(design, units);
  const auto plan = make_folds(units, 4, 5, false);
  LearnerSpec spec;
  spec.kind = LogisticSpec{1.0, 100, 1e-8};
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    units.treated = bound.draw(stable_hash(777, t)).values;
    CrtOptions o;
    o.resamples = 500;
    o.master_seed = stable_hash(999, t);
    const auto mc = run_crt(units, design, {spec}, plan, o);
    const auto exact = enumerated_crt(units, design, spec, plan, o);
    if (exact.total != 70.0) return {false, fmt("enumeration found %g assignments, expected 70", exact.total)};
    worst = std::max(worst, std::abs(mc.models[0].raw_p - exact.p));
  }
  return {worst <= 0.10, fmt("max |MC p - exact p| = %.4f over 20 observed assignments (tolerance 0.10)", worst)};
}

Outcome ac4() {
  if (anchor.runs == 0) return {false, "no validity runs recorded (run AC2, AC7 or AC10 in the same invocation)"};
  return {anchor.violations == 0, fmt("%zu of %zu validity runs exceed 0 + 3 SE; largest mean/SE = %.2f",
                                      anchor.violations, anchor.runs, anchor.worst)};
}

Outcome ac5() {
  CounterRng rng(55);
  std::size_t failures = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.uniform_index(200);
    std::vector<double> q(n);
    Labels a(n);
    std::vector<std::size_t> folds(n);
    for (std::size_t i = 0; i < n; ++i) {
      q[i] = rng.bernoulli(0.05) ? static_cast<double>(rng.uniform_index(2)) : 0.001 + 0.998 * rng.uniform01();
      a[i] = q[i] == 0.0 ? 0 : q[i] == 1.0 ? 1 : rng.bernoulli(0.5);
      folds[i] = rng.uniform_index(3);
    }
    const double abar = 0.001 + 0.998 * rng.uniform01();
    const std::vector<double> constant(n, abar);
    const bool ok = delta_loglik_q(a, q, q, folds, 3).statistic == 0.0 &&
                    brier_improvement(a, q, q, folds, 3).statistic == 0.0 &&
                    delta_loglik(a, constant, abar).statistic == 0.0 &&
                    brier_improvement(a, constant, constant).statistic == 0.0;
    failures += !ok;
  }
  return {failures == 0, fmt("%zu of 100 fuzz cases gave a nonzero statistic at p = q", failures)};
}

Outcome ac6() {
  SyntheticScenario s;
  s.n = 200;
  s.d = 2;
  s.signal = LinearSignal{{2.0}};
  s.design = Design{CompleteDesign{100}};
  const auto curve = simulate_power(s, logistic_settings(199), {1.0}, 100, 0.05, 6);
  const double rate = curve.points[0].rejection_rate;
  return {rate >= 0.80, fmt("power %.2f over 100 planted replications (need >= 0.80)", rate)};
}

Outcome ac7() {
  std::vector<LearnerSpec> specs;
  for (double l2 : {0.1, 0.3, 1.0, 3.0, 10.0}) specs.push_back(LearnerSpec{LogisticSpec{l2, 100, 1e-8}});
  specs.push_back(LearnerSpec{StumpsSpec{10, 0.1, 5}});
  specs.push_back(LearnerSpec{StumpsSpec{20, 0.1, 5}});
  specs.push_back(LearnerSpec{StumpsSpec{20, 0.3, 5}});
  specs.push_back(LearnerSpec{StumpsSpec{20, 0.1, 10}});
  specs.push_back(LearnerSpec{StumpsSpec{40, 0.05, 3}});
  const std::size_t reps = 200;
  std::size_t family_max_t = 0, family_bonf = 0, rejections_max_t = 0, rejections_bonf = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    SyntheticScenario s;
    s.n = 60;
    s.d = 5;
    s.design = Design{CompleteDesign{30}};
    s.seed = stable_hash(7007, r);
    AuditSettings settings;
    settings.specs = specs;
    settings.fold_seed = stable_hash(s.seed, 1);
    settings.crt.resamples = 199;
    settings.crt.master_seed = stable_hash(s.seed, 2);
    const auto report = run_synthetic_audit(s, settings);
    std::size_t mt = 0, bf = 0;
    for (const auto& m : report.models) {
      mt += m.p_max_t <= 0.05;
      bf += m.p_bonferroni <= 0.05;
      anchor.add(m.null_mean, m.null_se);
    }
    family_max_t += mt > 0;
    family_bonf += bf > 0;
    rejections_max_t += mt;
    rejections_bonf += bf;
  }
  const double fwer = static_cast<double>(family_max_t) / reps;
  const double mean_mt = static_cast<double>(rejections_max_t) / reps;
  const double mean_bf = static_cast<double>(rejections_bonf) / reps;
  return {fwer >= 0.01 && fwer <= 0.09 && mean_bf <= mean_mt,
          fmt("max-T FWER %.3f (band [0.01, 0.09]); Bonferroni FWER %.3f; mean rejections max-T %.3f vs "
              "Bonferroni %.3f",
              fwer, static_cast<double>(family_bonf) / reps, mean_mt, mean_bf)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome ac8() {
  const fs::path dir = fs::temp_directory_path() / "raudit_acceptance_ac8";
  fs::remove_all(dir);
  fs::create_directories(dir);
  cmd_synth("planted", 11, dir);
  const auto config = dir / "planted_config.json";
  Overrides o;
  o.output_dir = dir / "out";
  cmd_audit(config, o);
  const auto first = slurp(dir / "out" / "audit_report.json");
  cmd_audit(config, o);
  const auto second = slurp(dir / "out" / "audit_report.json");
  const auto nulls_first = slurp(dir / "out" / "audit_nulls.csv");

  Overrides w = o;
  w.workers = 4;
  const auto parallel = cmd_audit(config, w).report;
  const auto serial = report_from_json(nlohmann::json::parse(first));
  bool same_stats = parallel.models.size() == serial.models.size();
  for (std::size_t m = 0; same_stats && m < serial.models.size(); ++m)
    same_stats = parallel.models[m].observed == serial.models[m].observed &&
                 parallel.models[m].null.statistics == serial.models[m].null.statistics &&
                 parallel.models[m].raw_p == serial.models[m].raw_p;
  same_stats = same_stats && slurp(dir / "out" / "audit_nulls.csv") == nulls_first;
  fs::remove_all(dir);
  const bool bytes = !first.empty() && first == second;
  return {bytes && same_stats, fmt("report bytes identical across runs: %s (%zu bytes); 1 vs 4 workers identical "
                                   "statistics: %s",
                                   bytes ? "yes" : "no", first.size(), same_stats ? "yes" : "no")};
}

Outcome ac9() {
  struct Case {
    std::string name;
    Design design;
    UnitTable units;
  };
  std::vector<Case> cases;
  SyntheticScenario s;
  s.n = 40;
  s.d = 2;
  s.seed = 9;
  s.design = Design{CompleteDesign{20}};
  cases.push_back({"complete", s.design, generate_synthetic(s)});
  auto blocked = s;
  blocked.design = Design{StratifiedDesign{{{"A", 10}, {"B", 10}}}};
  auto ub = synthetic_features(blocked);
  ub.blocks = std::vector<std::string>(40, "A");
  for (std::size_t i = 20; i < 40; ++i) (*ub.blocks)[i] = "B";
  ub.treated = BoundDesign(blocked.design, ub).draw(1).values;
  cases.push_back({"stratified", blocked.design, ub});

  std::string detail;
  bool pass = true;
  for (const auto& c : cases) {
    CrtOptions o;
    o.resamples = 200;
    o.antithetic = true;
    o.master_seed = 31;
    const auto plan = make_folds(c.units, 5, 1, false);
    const auto report = run_crt(c.units, c.design, {LearnerSpec{}}, plan, o);
    const BoundDesign bound(c.design, c.units);
    std::multiset<Labels> draws;
    std::vector<std::size_t> treated(c.units.n(), 0);
    for (std::size_t b = 0; b < report.resamples; b += 2) {
      const auto a = bound.draw(report.resample_seeds[b]);
      const auto comp = bound.complement(a);
      if (!comp || report.resample_is_complement[b] || !report.resample_is_complement[b + 1]) pass = false;
      for (const auto* x : {&a.values, &comp->values}) {
        draws.insert(*x);
        for (std::size_t i = 0; i < x->size(); ++i) treated[i] += (*x)[i];
      }
    }
    bool closed = true;
    for (const auto& a : draws) {
      Labels flipped(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) flipped[i] = 1 - a[i];
      closed = closed && draws.count(flipped) == draws.count(a);
    }
    bool half = true;
    for (auto t : treated) half = half && static_cast<double>(t) / static_cast<double>(report.resamples) == 0.5;
    pass = pass && closed && half;
    detail += fmt("%s: complement-closed %s, every unit frequency 0.5 %s; ", c.name.c_str(), closed ? "yes" : "no",
                  half ? "yes" : "no");
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

UnitTable missingness_units(std::uint64_t seed, double coefficient) {
  SyntheticScenario s;
  s.n = 300;
  s.d = 3;
  s.seed = seed;
  auto u = synthetic_features(s);
  CounterRng rng(stable_hash(seed, 3));
  Labels r(u.n());
  for (std::size_t i = 0; i < u.n(); ++i)
    r[i] = rng.bernoulli(sigmoid(0.3 + coefficient * u.features(static_cast<Eigen::Index>(i), 0)));
  u.responses.push_back({"r_x", r});
  return u;
}

Outcome ac10() {
  const LearnerSpec spec;
  std::size_t flagged = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto u = missingness_units(stable_hash(1010, seed), 2.0);
    const auto report = missingness_audit(u, spec, make_folds(u, 5, seed, false), 199, stable_hash(seed, 5));
    flagged += report.variables[0].adjusted_p <= 0.05;
  }
  std::size_t rejected = 0;
  const std::size_t placebo_reps = 200;
  for (std::uint64_t seed = 0; seed < placebo_reps; ++seed) {
    const auto u = missingness_units(stable_hash(2020, seed), 0.0);
    const auto report = missingness_audit(u, spec, make_folds(u, 5, seed, false), 199, stable_hash(seed, 6));
    rejected += report.variables[0].adjusted_p <= 0.05;
    anchor.add(report.variables[0].null_mean, report.variables[0].null_se);
  }
  const double rate = static_cast<double>(rejected) / placebo_reps;
  const auto [lo, hi] = band99(0.05, placebo_reps);
  return {flagged >= 90 && rate >= lo && rate <= hi,
          fmt("planted flagged in %zu of 100 seeds (need >= 90); placebo rejection %.3f (band [%.3f, %.3f])", flagged,
              rate, lo, hi)};
}

Outcome ac11() {
  const std::size_t reps = 200;
  std::vector<double> diffs, naive;
  for (std::uint64_t seed = 0; seed < reps; ++seed) {
    SyntheticScenario s;
    s.n = 300;
    s.d = 3;
    s.seed = stable_hash(1111, seed);
    const auto u = synthetic_features(s);
    CounterRng rng(stable_hash(s.seed, 4));
    const std::size_t n = u.n();
    std::vector<double> rho(n);
    ResponseColumn col{"r_x", Labels(n)};
    for (std::size_t i = 0; i < n; ++i) {
      rho[i] = sigmoid(0.3 + 1.0 * u.features(static_cast<Eigen::Index>(i), 0));
      col.observed[i] = rng.bernoulli(rho[i]);
    }
    const auto table = ipw_weights({col}, {rho}, 1e-3);
    double full = 0.0, weighted = 0.0, cc = 0.0;
    std::size_t respondents = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double x = u.features(static_cast<Eigen::Index>(i), 0);
      full += x;
      weighted += table.weights[0][i] * x;
      if (col.observed[i]) {
        cc += x;
        ++respondents;
      }
    }
    diffs.push_back(weighted / static_cast<double>(n) - full / static_cast<double>(n));
    naive.push_back(cc / static_cast<double>(respondents) - full / static_cast<double>(n));
  }
  auto mean_se = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
  };
  const auto [m, se] = mean_se(diffs);
  const auto [nm, nse] = mean_se(naive);
  return {std::abs(m) <= 3 * se, fmt("weighted minus full mean %.5f (3 SE = %.5f); unweighted respondent mean is off "
                                     "by %.4f (SE %.4f)",
                                     m, 3 * se, nm, nse)};
}

}  // namespace

int main(int argc, char** argv) {
  // AC4 reads the null means collected by the validity runs, so it runs last.
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC5", ac5}, {"AC6", ac6}, {"AC7", ac7},
      {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}, {"AC11", ac11}, {"AC4", ac4}};
  std::set<std::string> wanted(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%-5s %s  %s  [%.1fs]\n", name.c_str(), out.pass ? "PASS" : "FAIL", out.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !out.pass;
  }
  return failed == 0 ? 0 : 1;
}
