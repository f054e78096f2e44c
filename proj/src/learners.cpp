#include "raudit/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>

#include "raudit/error.hpp"
#include "raudit/rng.hpp"

namespace raudit {
namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// log(1 + exp(x)) without overflow.
double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

std::size_t count_ones(const Labels& y) { return static_cast<std::size_t>(std::count(y.begin(), y.end(), 1)); }

// ---------------------------------------------------------------------------
// Penalized logistic regression by damped Newton.

double penalized_loglik(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                        double lambda) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - log1pexp(eta(i));
  return ll - 0.5 * lambda * beta.squaredNorm();
}

LogisticModel fit_logistic(const LogisticSpec& spec, const Eigen::MatrixXd& x, const Labels& labels) {
  const auto n = x.rows();
  const auto d = x.cols();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)];
  const double mean = y.mean();

  LogisticModel model;
  model.intercept = std::log(mean / (1.0 - mean));
  model.coefficients = Eigen::VectorXd::Zero(d);
  const double lambda = spec.l2_penalty;

  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, model.intercept);
  double objective = penalized_loglik(eta, y, model.coefficients, lambda);
  Eigen::VectorXd p(n), w(n), grad(d + 1), step(d + 1);
  Eigen::MatrixXd info(d + 1, d + 1);

  for (std::size_t iter = 0;; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(eta(i));
      w(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd resid = y - p;
    grad(0) = resid.sum();
    grad.tail(d) = x.transpose() * resid - lambda * model.coefficients;
    model.gradient_norm = grad.norm();
    if (model.gradient_norm < spec.tolerance) {
      model.converged = true;
      break;
    }
    if (iter >= spec.max_iterations) break;

    // Negative Hessian of the penalized log-likelihood.
    info(0, 0) = w.sum();
    info.block(1, 0, d, 1) = x.transpose() * w;
    info.block(0, 1, 1, d) = info.block(1, 0, d, 1).transpose();
    info.block(1, 1, d, d) = x.transpose() * w.asDiagonal() * x;
    info.block(1, 1, d, d).diagonal().array() += lambda;
    Eigen::LDLT<Eigen::MatrixXd> solver(info);
    step = solver.solve(grad);
    if (solver.info() != Eigen::Success || !step.allFinite()) {
      info.diagonal().array() += 1e-8 * (1.0 + info.diagonal().maxCoeff());
      step = info.ldlt().solve(grad);
      if (!step.allFinite()) break;
    }

    // Newton decrement below rounding level: the quadratic model promises no further gain.
    if (grad.dot(step) < 1e-13 * (1.0 + std::abs(objective))) {
      model.intercept += step(0);
      model.coefficients += step.tail(d);
      model.iterations = iter + 1;
      model.converged = true;
      break;
    }

    // Halve until the penalized log-likelihood does not decrease.
    double scale = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving, scale *= 0.5) {
      const double b = model.intercept + scale * step(0);
      const Eigen::VectorXd beta = model.coefficients + scale * step.tail(d);
      Eigen::VectorXd trial_eta = (x * beta).array() + b;
      const double trial = penalized_loglik(trial_eta, y, beta, lambda);
      if (trial >= objective) {
        model.intercept = b;
        model.coefficients = beta;
        eta = std::move(trial_eta);
        objective = trial;
        accepted = true;
        break;
      }
    }
    model.iterations = iter + 1;
    if (!accepted) break;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Gradient-boosted depth-1 trees on the log-odds scale.

double mean_log_loss(const Eigen::VectorXd& score, const Labels& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < score.size(); ++i)
    s += log1pexp(score(i)) - y[static_cast<std::size_t>(i)] * score(i);
  return s / static_cast<double>(score.size());
}

StumpModel fit_stumps(const StumpsSpec& spec, const Eigen::MatrixXd& x, const Labels& y) {
  const auto n = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  const double mean = static_cast<double>(count_ones(y)) / static_cast<double>(n);
  StumpModel model;
  model.base_score = std::log(mean / (1.0 - mean));

  std::vector<std::vector<std::size_t>> order(d, std::vector<std::size_t>(n));
  for (std::size_t j = 0; j < d; ++j) {
    auto& o = order[j];
    std::iota(o.begin(), o.end(), std::size_t{0});
    const auto col = static_cast<Eigen::Index>(j);
    std::stable_sort(o.begin(), o.end(), [&](std::size_t a, std::size_t b) {
      return x(static_cast<Eigen::Index>(a), col) < x(static_cast<Eigen::Index>(b), col);
    });
  }

  Eigen::VectorXd score = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), model.base_score);
  double loss = mean_log_loss(score, y);
  model.training_loss.push_back(loss);
  std::vector<double> g(n), h(n);

  for (std::size_t round = 0; round < spec.rounds; ++round) {
    double total_g = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(score(static_cast<Eigen::Index>(i)));
      g[i] = y[i] - p;
      h[i] = p * (1.0 - p);
      total_g += g[i];
    }
    const double base_term = total_g * total_g / static_cast<double>(n);

    bool found = false;
    double best_gain = -std::numeric_limits<double>::infinity();
    Stump best;
    double best_gl = 0, best_hl = 0, best_gr = 0, best_hr = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const auto& o = order[j];
      double gl = 0.0, hl = 0.0, htot = 0.0;
      for (auto i : o) htot += h[i];
      for (std::size_t k = 0; k + 1 < n; ++k) {
        gl += g[o[k]];
        hl += h[o[k]];
        const std::size_t nl = k + 1;
        const std::size_t nr = n - nl;
        const double here = x(static_cast<Eigen::Index>(o[k]), col);
        const double next = x(static_cast<Eigen::Index>(o[k + 1]), col);
        if (!(next > here) || nl < spec.min_leaf || nr < spec.min_leaf) continue;
        const double gr = total_g - gl;
        const double gain = gl * gl / static_cast<double>(nl) + gr * gr / static_cast<double>(nr) - base_term;
        if (gain > best_gain) {
          best_gain = gain;
          double mid = here + 0.5 * (next - here);
          if (!(mid < next)) mid = here;
          best = {j, mid, 0.0, 0.0};
          best_gl = gl;
          best_hl = hl;
          best_gr = gr;
          best_hr = htot - hl;
          found = true;
        }
      }
    }
    if (!found) break;

    constexpr double kHessianFloor = 1e-12;
    best.left = spec.learning_rate * best_gl / (best_hl + kHessianFloor);
    best.right = spec.learning_rate * best_gr / (best_hr + kHessianFloor);
    const auto col = static_cast<Eigen::Index>(best.feature);

    // Shrink the step until the training loss does not increase.
    bool accepted = false;
    Eigen::VectorXd trial(static_cast<Eigen::Index>(n));
    for (int halving = 0; halving < 40; ++halving) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        trial(r) = score(r) + (x(r, col) <= best.threshold ? best.left : best.right);
      }
      const double trial_loss = mean_log_loss(trial, y);
      if (trial_loss <= loss) {
        score = trial;
        loss = trial_loss;
        accepted = true;
        break;
      }
      best.left *= 0.5;
      best.right *= 0.5;
    }
    if (!accepted) break;
    model.stumps.push_back(best);
    model.training_loss.push_back(loss);
  }
  return model;
}

}  // namespace

// ---------------------------------------------------------------------------
// Folds

std::vector<std::size_t> FoldPlan::sizes() const {
  std::vector<std::size_t> out(k, 0);
  for (auto f : fold) ++out[f];
  return out;
}

FoldPlan make_folds(const UnitTable& units, std::size_t k, std::uint64_t seed, bool stratify) {
  const std::size_t n = units.n();
  if (k < 2 || k > n)
    throw InputError("make_folds: need 2 <= K <= n (K=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  std::vector<std::vector<std::size_t>> strata;
  const bool by_block = stratify && units.blocks.has_value();
  if (by_block) {
    std::map<std::string, std::vector<std::size_t>> by;
    for (std::size_t i = 0; i < n; ++i) by[(*units.blocks)[i]].push_back(i);
    for (auto& [name, rows] : by) strata.push_back(std::move(rows));
  } else {
    strata.emplace_back(n);
    std::iota(strata.back().begin(), strata.back().end(), std::size_t{0});
  }
  CounterRng rng(seed);
  FoldPlan plan{k, std::vector<std::size_t>(n, 0), seed, by_block, false};
  std::size_t position = 0;
  for (auto& rows : strata) {
    rng.shuffle(std::span<std::size_t>(rows));
    for (auto i : rows) plan.fold[i] = position++ % k;
  }
  return plan;
}

FoldPlan make_group_folds(const std::vector<std::vector<std::size_t>>& groups, std::size_t n, std::size_t k,
                          std::uint64_t seed) {
  if (k < 2 || k > groups.size())
    throw InputError("make_group_folds: need 2 <= K <= number of clusters (K=" + std::to_string(k) +
                     ", clusters=" + std::to_string(groups.size()) + ")");
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  FoldPlan plan{k, std::vector<std::size_t>(n, 0), seed, false, true};
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    for (auto i : groups[order[pos]]) plan.fold[i] = pos % k;
  return plan;
}

nlohmann::json fold_plan_to_json(const FoldPlan& plan) {
  return {{"k", plan.k},
          {"seed", plan.seed},
          {"stratified", plan.stratified},
          {"grouped_by_cluster", plan.grouped_by_cluster},
          {"fold", plan.fold}};
}

FoldPlan fold_plan_from_json(const nlohmann::json& doc) {
  FoldPlan plan;
  plan.k = doc.at("k").get<std::size_t>();
  plan.seed = doc.at("seed").get<std::uint64_t>();
  plan.stratified = doc.at("stratified").get<bool>();
  plan.grouped_by_cluster = doc.at("grouped_by_cluster").get<bool>();
  plan.fold = doc.at("fold").get<std::vector<std::size_t>>();
  return plan;
}

// ---------------------------------------------------------------------------
// Specs

void check_spec(const LearnerSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LogisticSpec>) {
          if (!(s.l2_penalty >= 0.0)) throw InputError("logistic: l2_penalty must be >= 0");
          if (!(s.tolerance > 0.0)) throw InputError("logistic: tolerance must be > 0");
        } else {
          if (s.rounds < 1) throw InputError("boosted_stumps: rounds must be >= 1");
          if (!(s.learning_rate > 0.0 && s.learning_rate <= 1.0))
            throw InputError("boosted_stumps: learning_rate must lie in (0,1]");
          if (s.min_leaf < 1) throw InputError("boosted_stumps: min_leaf must be >= 1");
        }
      },
      spec.kind);
}

std::string learner_label(const LearnerSpec& spec) {
  if (!spec.id.empty()) return spec.id;
  std::ostringstream os;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LogisticSpec>) os << "logistic(l2=" << s.l2_penalty << ")";
        else
          os << "boosted_stumps(rounds=" << s.rounds << ",lr=" << s.learning_rate << ",min_leaf=" << s.min_leaf
             << ")";
      },
      spec.kind);
  return os.str();
}

nlohmann::json learner_to_json(const LearnerSpec& spec) {
  nlohmann::json j;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LogisticSpec>) {
          j = {{"kind", "logistic"},
               {"l2_penalty", s.l2_penalty},
               {"max_iterations", s.max_iterations},
               {"tolerance", s.tolerance}};
        } else {
          j = {{"kind", "boosted_stumps"},
               {"rounds", s.rounds},
               {"learning_rate", s.learning_rate},
               {"min_leaf", s.min_leaf}};
        }
      },
      spec.kind);
  j["train_seed"] = spec.train_seed;
  j["id"] = learner_label(spec);
  return j;
}

LearnerSpec learner_from_json(const nlohmann::json& doc) {
  LearnerSpec spec;
  try {
    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "logistic") {
      LogisticSpec s;
      s.l2_penalty = doc.value("l2_penalty", s.l2_penalty);
      s.max_iterations = doc.value("max_iterations", s.max_iterations);
      s.tolerance = doc.value("tolerance", s.tolerance);
      spec.kind = s;
    } else if (kind == "boosted_stumps") {
      StumpsSpec s;
      s.rounds = doc.value("rounds", s.rounds);
      s.learning_rate = doc.value("learning_rate", s.learning_rate);
      s.min_leaf = doc.value("min_leaf", s.min_leaf);
      spec.kind = s;
    } else {
      throw InputError("learner: unknown kind '" + kind + "'");
    }
    spec.train_seed = doc.value("train_seed", std::uint64_t{0});
    spec.id = doc.value("id", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("learner: malformed spec: ") + e.what());
  }
  check_spec(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Fitting

FittedModel fit(const LearnerSpec& spec, const Eigen::MatrixXd& features, const Labels& labels, double epsilon) {
  if (labels.empty() || features.rows() == 0) throw InputError("fit: empty training set");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw InputError("fit: feature rows and label count differ");
  const std::size_t ones = count_ones(labels);
  if (ones == 0) return ConstantModel{epsilon};
  if (ones == labels.size()) return ConstantModel{1.0 - epsilon};
  return std::visit(
      [&](const auto& s) -> FittedModel {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, LogisticSpec>) return fit_logistic(s, features, labels);
        else return fit_stumps(s, features, labels);
      },
      spec.kind);
}

Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  Eigen::VectorXd out(n);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogisticModel>) {
          const Eigen::VectorXd eta = (features * m.coefficients).array() + m.intercept;
          for (Eigen::Index i = 0; i < n; ++i) out(i) = sigmoid(eta(i));
        } else if constexpr (std::is_same_v<T, StumpModel>) {
          for (Eigen::Index i = 0; i < n; ++i) {
            double score = m.base_score;
            for (const auto& s : m.stumps)
              score += features(i, static_cast<Eigen::Index>(s.feature)) <= s.threshold ? s.left : s.right;
            out(i) = sigmoid(score);
          }
        } else {
          out.setConstant(m.probability);
        }
      },
      model);
  return out;
}

nlohmann::json model_to_json(const FittedModel& model) {
  return std::visit(
      [](const auto& m) -> nlohmann::json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogisticModel>) {
          return {{"kind", "logistic"},
                  {"intercept", m.intercept},
                  {"coefficients", std::vector<double>(m.coefficients.data(), m.coefficients.data() + m.coefficients.size())},
                  {"converged", m.converged},
                  {"iterations", m.iterations},
                  {"gradient_norm", m.gradient_norm}};
        } else if constexpr (std::is_same_v<T, StumpModel>) {
          nlohmann::json stumps = nlohmann::json::array();
          for (const auto& s : m.stumps)
            stumps.push_back({{"feature", s.feature}, {"threshold", s.threshold}, {"left", s.left}, {"right", s.right}});
          return {{"kind", "boosted_stumps"}, {"base_score", m.base_score}, {"stumps", stumps}};
        } else {
          return {{"kind", "constant"}, {"probability", m.probability}};
        }
      },
      model);
}

// ---------------------------------------------------------------------------
// Cross-fitting

CrossFitter::CrossFitter(const Eigen::MatrixXd& features, const FoldPlan& plan) : plan_(plan) {
  if (static_cast<std::size_t>(features.rows()) != plan.n())
    throw InputError("cross-fitting: fold plan size does not match feature rows");
  folds_.resize(plan.k);
  for (std::size_t i = 0; i < plan.n(); ++i) {
    if (plan.fold[i] >= plan.k) throw InputError("cross-fitting: fold index out of range");
    for (std::size_t f = 0; f < plan.k; ++f) (f == plan.fold[i] ? folds_[f].test : folds_[f].train).push_back(i);
  }
  for (auto& f : folds_) {
    if (f.test.empty()) throw InputError("cross-fitting: empty fold");
    f.train_x.resize(static_cast<Eigen::Index>(f.train.size()), features.cols());
    f.test_x.resize(static_cast<Eigen::Index>(f.test.size()), features.cols());
    for (std::size_t r = 0; r < f.train.size(); ++r)
      f.train_x.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(f.train[r]));
    for (std::size_t r = 0; r < f.test.size(); ++r)
      f.test_x.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(f.test[r]));
  }
}

Eigen::VectorXd CrossFitter::predict(const Labels& labels, const LearnerSpec& spec, std::span<const double> baseline,
                                     double epsilon, std::size_t* degraded_folds) const {
  if (labels.size() != n()) throw InputError("cross-fitting: label count does not match fold plan");
  if (baseline.size() != n()) throw InputError("cross-fitting: baseline length does not match fold plan");
  Eigen::VectorXd out(static_cast<Eigen::Index>(n()));
  std::size_t degraded = 0;
  Labels train_y;
  for (const auto& f : folds_) {
    train_y.resize(f.train.size());
    std::size_t ones = 0;
    for (std::size_t r = 0; r < f.train.size(); ++r) ones += (train_y[r] = labels[f.train[r]]);
    if (ones < 2 || f.train.size() - ones < 2) {
      ++degraded;
      for (auto i : f.test) out(static_cast<Eigen::Index>(i)) = baseline[i];
      continue;
    }
    const auto model = fit(spec, f.train_x, train_y, epsilon);
    const Eigen::VectorXd p = raudit::predict(model, f.test_x);
    for (std::size_t r = 0; r < f.test.size(); ++r) out(static_cast<Eigen::Index>(f.test[r])) = p(static_cast<Eigen::Index>(r));
  }
  if (degraded_folds) *degraded_folds = degraded;
  return out;
}

std::vector<FittedModel> CrossFitter::fit_folds(const Labels& labels, const LearnerSpec& spec, double epsilon) const {
  std::vector<FittedModel> models;
  Labels train_y;
  for (const auto& f : folds_) {
    train_y.clear();
    for (auto i : f.train) train_y.push_back(labels[i]);
    models.push_back(fit(spec, f.train_x, train_y, epsilon));
  }
  return models;
}

Eigen::VectorXd cross_fit_predictions(const UnitTable& units, const Labels& labels, const FoldPlan& plan,
                                      const LearnerSpec& spec, std::span<const double> baseline, double epsilon) {
  return CrossFitter(units.features, plan).predict(labels, spec, baseline, epsilon);
}

}  // namespace raudit
