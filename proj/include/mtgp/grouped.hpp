#ifndef MTGP_GROUPED_HPP
#define MTGP_GROUPED_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtgp/common.hpp"
#include "mtgp/data.hpp"
#include "mtgp/kernels.hpp"
#include "mtgp/model.hpp"
#include "mtgp/optimize.hpp"
#include "mtgp/sparse.hpp"

namespace mtgp {

struct GroupedModelConfig {
  int num_centers = 1;             // K
  int m_per_center = 10;
  double alpha0 = 0.0;             // Dirichlet prior concentration; 0 means 1/K
  int em_max_iters = 30;
  int mstep_max_iters = 50;
  int restarts = 5;
  std::uint64_t seed = 0;
  bool shared_fixed_kernel = true;
  bool optimize_inducing = true;
  bool include_trace_term = true;  // false gives the projected-process variant
  enum class InducingInit { EquallySpaced, RandomSubset };
  InducingInit inducing_init = InducingInit::EquallySpaced;
  double em_rel_tol = 1e-7;
  bool warm_start = true;
  double cd_step = 0.05;
  int cd_max_halvings = 8;

  double effective_alpha0() const {
    return alpha0 > 0.0 ? alpha0 : 1.0 / static_cast<double>(num_centers);
  }
};

struct GroupedModel {
  static constexpr int kSchemaVersion = 1;

  GroupedModelConfig config;
  std::vector<Task> tasks;            // retained for predictive conditioning
  Hyper hyper;
  std::vector<InducingSet> inducing;  // one per center
  Eigen::MatrixXd R;                  // M x K responsibilities
  Eigen::VectorXd alpha;              // Dirichlet posterior parameters
  std::vector<InducingPosterior> posteriors;
  double bound = 0.0;                 // final M-step objective value
  std::vector<double> bound_trace;    // per EM iteration of the winning restart
  std::vector<std::string> warnings;
  std::string method = "mtvar";

  int num_centers() const { return static_cast<int>(inducing.size()); }
};

// ---- E-step pieces --------------------------------------------------------

inline Eigen::VectorXd estep_dirichlet(const Eigen::MatrixXd& R, double alpha0) {
  return Eigen::VectorXd::Constant(R.cols(), alpha0) + R.colwise().sum().transpose();
}

// E_q[log pi_k] under Dirichlet(alpha).
inline Eigen::VectorXd expected_log_pi(const Eigen::VectorXd& alpha) {
  const double total = alpha.sum();
  Eigen::VectorXd out(alpha.size());
  for (Eigen::Index k = 0; k < alpha.size(); ++k)
    out[k] = digamma(alpha[k]) - digamma(total);
  return out;
}

inline std::vector<InducingPosterior> estep_center_posteriors(
    const std::vector<Task>& tasks, const TaskCache& cache, const Hyper& hyper,
    const std::vector<InducingSet>& inducing, const Eigen::MatrixXd& R) {
  std::vector<InducingPosterior> posts;
  for (std::size_t k = 0; k < inducing.size(); ++k)
    posts.push_back(
        center_posterior(tasks, cache, inducing[k].X, hyper.fixed_for(k), R.col(k)));
  return posts;
}

// Matrix of E_phi[log G(eta_k, y^j)].
inline Eigen::MatrixXd expected_log_g_matrix(const std::vector<Task>& tasks,
                                             const TaskCache& cache, const Hyper& hyper,
                                             const std::vector<InducingSet>& inducing,
                                             const std::vector<InducingPosterior>& posts) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(tasks.size()),
                      static_cast<Eigen::Index>(inducing.size()));
  for (std::size_t k = 0; k < inducing.size(); ++k)
    for (std::size_t j = 0; j < tasks.size(); ++j)
      out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
          expected_log_g(tasks[j], cache.khat_chol[j], cache.logdet_khat[j],
                         cache.khat_inv[j], inducing[k].X, hyper.fixed_for(k), posts[k]);
  return out;
}

inline Eigen::MatrixXd estep_responsibilities(const Eigen::MatrixXd& log_g,
                                              const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd log_pi = expected_log_pi(alpha);
  Eigen::MatrixXd R(log_g.rows(), log_g.cols());
  for (Eigen::Index j = 0; j < log_g.rows(); ++j) {
    std::vector<double> l(static_cast<std::size_t>(log_g.cols()));
    for (Eigen::Index k = 0; k < log_g.cols(); ++k)
      l[static_cast<std::size_t>(k)] = log_g(j, k) + log_pi[k];
    const double lse = log_sum_exp(l);
    for (Eigen::Index k = 0; k < log_g.cols(); ++k)
      R(j, k) = std::exp(l[static_cast<std::size_t>(k)] - lse);
  }
  return R;
}

// ---- full evidence lower bound -------------------------------------------

// Complete ELBO of the grouped model: Dirichlet prior/entropy terms, the
// assignment entropy, the inducing-posterior KL terms and the expected
// model-fit term. Used to verify that every coordinate-ascent update is
// monotone.
inline double grouped_elbo(const std::vector<Task>& tasks, const TaskCache& cache,
                           const Hyper& hyper, const std::vector<InducingSet>& inducing,
                           const Eigen::MatrixXd& R, const Eigen::VectorXd& alpha,
                           const std::vector<InducingPosterior>& posts, double alpha0) {
  const int K = static_cast<int>(inducing.size());
  const Eigen::VectorXd log_pi = expected_log_pi(alpha);

  // Dirichlet: E[log p(pi)] - E[log q(pi)]
  double t1 = std::lgamma(K * alpha0) - K * std::lgamma(alpha0);
  for (int k = 0; k < K; ++k) t1 += (alpha0 - 1.0) * log_pi[k];
  double lq = std::lgamma(alpha.sum());
  for (int k = 0; k < K; ++k)
    lq += -std::lgamma(alpha[k]) + (alpha[k] - 1.0) * log_pi[k];
  t1 -= lq;

  // assignments: E[log p(z|pi)] - E[log q(z)]
  double t2 = 0.0;
  for (Eigen::Index j = 0; j < R.rows(); ++j)
    for (int k = 0; k < K; ++k) {
      const double r = R(j, k);
      if (r > 0.0) t2 += r * (log_pi[k] - std::log(r));
    }

  // inducing posteriors: -KL(q(eta_k) || p(eta_k))
  double t3 = 0.0;
  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd kmm = inducing_gram(hyper.fixed_for(k), inducing[k].X);
    CholFactor kc = chol(kmm);
    CholFactor sc = chol(posts[k].cov);
    const Eigen::VectorXd km_solved = kc.solve(posts[k].mean);
    const double quad = posts[k].mean.dot(km_solved);
    const double tr = kc.solve(posts[k].cov).trace();
    t3 += 0.5 * (sc.logdet() - kc.logdet() - quad - tr +
                 static_cast<double>(inducing[k].X.rows()));
  }

  // expected model fit
  const Eigen::MatrixXd log_g = expected_log_g_matrix(tasks, cache, hyper, inducing, posts);
  const double t4 = R.cwiseProduct(log_g).sum();
  return t1 + t2 + t3 + t4;
}

// ---- M-step ---------------------------------------------------------------

inline double mstep_bound(const std::vector<Task>& tasks,
                          const std::vector<InducingSet>& inducing, const Hyper& hyper,
                          const Eigen::MatrixXd& R, bool include_trace = true) {
  return grouped_bound(tasks, inducing, hyper, R, include_trace).value;
}

inline Eigen::VectorXd mstep_grad(const std::vector<Task>& tasks,
                                  const std::vector<InducingSet>& inducing,
                                  const Hyper& hyper, const Eigen::MatrixXd& R,
                                  bool include_trace, const ParamLayout& layout) {
  return grouped_bound(tasks, inducing, hyper, R, include_trace, &layout).grad;
}

// One M-step: stochastic coordinate ascent on hyperparameters (and inducing
// locations when enabled) with responsibilities held fixed.
inline double run_mstep(const std::vector<Task>& tasks, std::vector<InducingSet>& inducing,
                        Hyper& hyper, const Eigen::MatrixXd& R,
                        const GroupedModelConfig& cfg, int max_iters,
                        std::mt19937_64& rng) {
  ParamLayout layout = ParamLayout::build(hyper, inducing, cfg.optimize_inducing);
  Eigen::VectorXd x = layout.pack(hyper, inducing);
  Hyper h = hyper;
  std::vector<InducingSet> ind = inducing;
  CdObjective obj = [&](const Eigen::VectorXd& v, bool need_grad) {
    layout.unpack(v, h, ind);
    if (need_grad) {
      BoundResult b = grouped_bound(tasks, ind, h, R, cfg.include_trace_term, &layout);
      return std::make_pair(b.value, b.grad);
    }
    return std::make_pair(mstep_bound(tasks, ind, h, R, cfg.include_trace_term),
                          Eigen::VectorXd());
  };
  CdOptions opts;
  opts.max_iters = max_iters;
  opts.step = cfg.cd_step;
  opts.max_halvings = cfg.cd_max_halvings;
  CdResult r = coordinate_descent(x, obj, build_step_scale(layout, tasks, cfg.cd_step),
                                  opts, rng);
  layout.unpack(x, hyper, inducing);
  return r.value;
}

// ---- initialization -------------------------------------------------------

namespace detail {

inline Hyper init_hyper(const std::vector<Task>& tasks, const GroupedModelConfig& cfg,
                        std::mt19937_64& rng, bool jitter) {
  const int d = static_cast<int>(tasks.front().X.cols());
  double var = 0.0, mean = 0.0;
  Eigen::Index n = 0;
  for (const auto& t : tasks) { mean += t.y.sum(); n += t.y.size(); }
  mean /= static_cast<double>(n);
  for (const auto& t : tasks) var += (t.y.array() - mean).square().sum();
  var = std::max(var / static_cast<double>(n), 1e-8);
  Eigen::VectorXd span(d);
  for (int q = 0; q < d; ++q) {
    double lo = tasks.front().X(0, q), hi = lo;
    for (const auto& t : tasks) {
      lo = std::min(lo, t.X.col(q).minCoeff());
      hi = std::max(hi, t.X.col(q).maxCoeff());
    }
    span[q] = std::max(hi - lo, 1e-6);
  }
  Hyper h;
  const int fixed_sets = cfg.shared_fixed_kernel ? 1 : cfg.num_centers;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int k = 0; k < fixed_sets; ++k) {
    SeKernelParams p;
    p.log_signal_variance = std::log(0.5 * var);
    p.log_lengthscale = (span / 4.0).array().log();
    if (jitter) {
      p.log_signal_variance += u(rng);
      for (int q = 0; q < d; ++q) p.log_lengthscale[q] += u(rng);
    }
    h.fixed.push_back(p);
  }
  h.random_effect.log_signal_variance = std::log(0.25 * var) + (jitter ? u(rng) : 0.0);
  h.random_effect.log_lengthscale = (span / 8.0).array().log();
  if (jitter)
    for (int q = 0; q < d; ++q) h.random_effect.log_lengthscale[q] += u(rng);
  h.noise.log_noise_variance = std::log(0.1 * var) + (jitter ? u(rng) : 0.0);
  return h;
}

inline std::vector<InducingSet> init_inducing(const std::vector<Task>& tasks,
                                              const GroupedModelConfig& cfg,
                                              std::mt19937_64& rng) {
  const int d = static_cast<int>(tasks.front().X.cols());
  std::vector<Eigen::RowVectorXd> pool;
  for (const auto& t : tasks)
    for (Eigen::Index i = 0; i < t.X.rows(); ++i) pool.push_back(t.X.row(i));

  std::vector<InducingSet> out;
  for (int k = 0; k < cfg.num_centers; ++k) {
    Eigen::MatrixXd Z(cfg.m_per_center, d);
    if (cfg.inducing_init == GroupedModelConfig::InducingInit::EquallySpaced && d == 1) {
      double lo = pool.front()[0], hi = lo;
      for (const auto& p : pool) { lo = std::min(lo, p[0]); hi = std::max(hi, p[0]); }
      for (int p = 0; p < cfg.m_per_center; ++p)
        Z(p, 0) = cfg.m_per_center == 1
                      ? 0.5 * (lo + hi)
                      : lo + (hi - lo) * static_cast<double>(p) /
                                static_cast<double>(cfg.m_per_center - 1);
    } else {
      // random distinct training inputs
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      int taken = 0;
      for (std::size_t i = 0; i < idx.size() && taken < cfg.m_per_center; ++i) {
        bool dup = false;
        for (int p = 0; p < taken; ++p)
          if ((Z.row(p) - pool[idx[i]]).cwiseAbs().maxCoeff() < 1e-9) { dup = true; break; }
        if (!dup) Z.row(taken++) = pool[idx[i]];
      }
      if (taken < cfg.m_per_center)
        throw InsufficientPoints("init_inducing: fewer distinct inputs than inducing points");
    }
    InducingSet s;
    s.X = Z;
    s.learnable = cfg.optimize_inducing;
    out.push_back(std::move(s));
  }
  return out;
}

inline Eigen::MatrixXd init_responsibilities(std::size_t M, int K, std::mt19937_64& rng) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), K);
  std::uniform_int_distribution<int> pick(0, K - 1);
  for (std::size_t j = 0; j < M; ++j) R(static_cast<Eigen::Index>(j), pick(rng)) = 1.0;
  // guarantee every center owns at least one task when possible
  for (int k = 0; k < K && static_cast<std::size_t>(K) <= M; ++k) {
    if (R.col(k).sum() > 0.0) continue;
    for (Eigen::Index j = 0; j < R.rows(); ++j) {
      int owner = 0;
      for (int kk = 0; kk < K; ++kk)
        if (R(j, kk) == 1.0) owner = kk;
      if (R.col(owner).sum() > 1.0) {
        R(j, owner) = 0.0;
        R(j, k) = 1.0;
        break;
      }
    }
  }
  return R;
}

}  // namespace detail

// ---- fitting --------------------------------------------------------------

inline GroupedModel fit_grouped(const std::vector<Task>& tasks,
                                const GroupedModelConfig& cfg) {
  if (tasks.empty()) throw EmptyTask("fit_grouped: no tasks");
  for (const auto& t : tasks) t.validate();
  const std::size_t M = tasks.size();
  const int K = cfg.num_centers;
  const double alpha0 = cfg.effective_alpha0();

  GroupedModel best;
  bool have_best = false;

  for (int restart = 0; restart < std::max(1, cfg.restarts); ++restart) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(restart)));
    Hyper hyper = detail::init_hyper(tasks, cfg, rng, restart > 0);
    std::vector<InducingSet> inducing = detail::init_inducing(tasks, cfg, rng);

    if (cfg.warm_start) {
      // Cheap single-center pass on the hyperparameters over a task subsample.
      std::vector<Task> sub = tasks;
      if (sub.size() > 100) {
        std::shuffle(sub.begin(), sub.end(), rng);
        sub.resize(100);
      }
      GroupedModelConfig warm = cfg;
      warm.num_centers = 1;
      warm.optimize_inducing = false;
      warm.include_trace_term = cfg.include_trace_term;
      Hyper wh = hyper;
      if (!cfg.shared_fixed_kernel) wh.fixed.resize(1);
      std::vector<InducingSet> wi{inducing[0]};
      Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(sub.size()), 1);
      run_mstep(sub, wi, wh, ones, warm, 60, rng);
      hyper.random_effect = wh.random_effect;
      hyper.noise = wh.noise;
      for (auto& f : hyper.fixed) f = wh.fixed[0];
    }

    GroupedModel model;
    model.config = cfg;
    model.tasks = tasks;
    model.method = cfg.include_trace_term ? "mtvar" : "mtpp";
    if (!cfg.optimize_inducing) model.method = "mtsd";

    if (K == 1) {
      Eigen::MatrixXd R = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(M), 1);
      const int budget = cfg.em_max_iters * cfg.mstep_max_iters;
      double b = run_mstep(tasks, inducing, hyper, R, cfg, budget, rng);
      model.hyper = hyper;
      model.inducing = inducing;
      model.R = R;
      model.alpha = Eigen::VectorXd::Constant(1, alpha0 + static_cast<double>(M));
      model.bound = b;
      model.bound_trace.push_back(b);
    } else {
      Eigen::MatrixXd R = detail::init_responsibilities(M, K, rng);
      Eigen::VectorXd alpha = estep_dirichlet(R, alpha0);
      double prev = -std::numeric_limits<double>::infinity();
      std::vector<double> trace;
      for (int it = 0; it < cfg.em_max_iters; ++it) {
        TaskCache cache = build_task_cache(tasks, hyper);
        auto posts = estep_center_posteriors(tasks, cache, hyper, inducing, R);
        Eigen::MatrixXd log_g = expected_log_g_matrix(tasks, cache, hyper, inducing, posts);
        R = estep_responsibilities(log_g, alpha);
        alpha = estep_dirichlet(R, alpha0);
        double b = run_mstep(tasks, inducing, hyper, R, cfg, cfg.mstep_max_iters, rng);
        trace.push_back(b);
        if (std::isfinite(prev) &&
            std::abs(b - prev) < cfg.em_rel_tol * std::max(1.0, std::abs(prev)))
          break;
        prev = b;
      }
      {
        // Final E-step at the converged hyperparameters: R and alpha would
        // otherwise be one M-step stale.
        TaskCache cache = build_task_cache(tasks, hyper);
        auto posts = estep_center_posteriors(tasks, cache, hyper, inducing, R);
        Eigen::MatrixXd log_g = expected_log_g_matrix(tasks, cache, hyper, inducing, posts);
        R = estep_responsibilities(log_g, alpha);
        alpha = estep_dirichlet(R, alpha0);
      }
      model.hyper = hyper;
      model.inducing = inducing;
      model.R = R;
      model.alpha = alpha;
      model.bound = mstep_bound(tasks, inducing, hyper, R, cfg.include_trace_term);
      model.bound_trace = std::move(trace);
    }

    TaskCache cache = build_task_cache(tasks, model.hyper);
    model.posteriors =
        estep_center_posteriors(tasks, cache, model.hyper, model.inducing, model.R);

    if (!have_best || model.bound > best.bound) {
      best = std::move(model);
      have_best = true;
    }
  }
  return best;
}

// ---- prediction -----------------------------------------------------------

// Mixture predictive for a training task: center predictives mixed by that
// task's responsibilities.
inline PredictiveDistribution predict_mixture(const Task& task, const Eigen::MatrixXd& x_star,
                                              const GroupedModel& model,
                                              const Eigen::VectorXd& resp,
                                              bool add_noise = false) {
  const int K = model.num_centers();
  const double s2 = model.hyper.task_noise(task);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(x_star.rows());
  Eigen::VectorXd second = Eigen::VectorXd::Zero(x_star.rows());
  for (int k = 0; k < K; ++k) {
    if (resp[k] < 1e-14 && K > 1) continue;
    PredictiveDistribution p =
        predict_center(task, x_star, model.inducing[k].X, model.hyper.fixed_for(k),
                       model.hyper.random_effect, s2, model.posteriors[k]);
    const double r = K == 1 ? 1.0 : resp[k];
    mean += r * p.mean;
    second += r * (p.var + p.mean.cwiseAbs2());
  }
  PredictiveDistribution out;
  out.mean = mean;
  out.var = (second - mean.cwiseAbs2()).cwiseMax(1e-12);
  if (add_noise) out.var.array() += s2;
  return out;
}

inline PredictiveDistribution predict_existing(const GroupedModel& model, std::size_t task_id,
                                               const Eigen::MatrixXd& x_star,
                                               bool add_noise = false) {
  if (task_id >= model.tasks.size())
    throw UnknownTask("predict_existing: unknown task id");
  return predict_mixture(model.tasks[task_id], x_star, model,
                         model.R.row(static_cast<Eigen::Index>(task_id)).transpose(),
                         add_noise);
}

// Responsibilities for a task that was not part of training: the Dirichlet
// posterior and the center posteriors stay fixed, so the update is closed
// form.
inline Eigen::VectorXd new_task_responsibilities(const GroupedModel& model, const Task& task) {
  task.validate();
  std::vector<Task> one{task};
  TaskCache cache = build_task_cache(one, model.hyper);
  const int K = model.num_centers();
  const Eigen::VectorXd log_pi = expected_log_pi(model.alpha);
  std::vector<double> l(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    l[static_cast<std::size_t>(k)] =
        log_pi[k] + expected_log_g(task, cache.khat_chol[0], cache.logdet_khat[0],
                                   cache.khat_inv[0], model.inducing[k].X,
                                   model.hyper.fixed_for(k), model.posteriors[k]);
  const double lse = log_sum_exp(l);
  Eigen::VectorXd r(K);
  for (int k = 0; k < K; ++k) r[k] = std::exp(l[static_cast<std::size_t>(k)] - lse);
  return r;
}

inline PredictiveDistribution predict_new_task(const GroupedModel& model, const Task& task,
                                               const Eigen::MatrixXd& x_star,
                                               bool add_noise = false) {
  Eigen::VectorXd resp = new_task_responsibilities(model, task);
  return predict_mixture(task, x_star, model, resp, add_noise);
}

// Hard assignments; ties resolve to the lowest center index and are flagged.
inline std::vector<int> map_assignments(const Eigen::MatrixXd& R,
                                        std::vector<bool>* tie_flags = nullptr) {
  std::vector<int> out;
  if (tie_flags) tie_flags->clear();
  for (Eigen::Index j = 0; j < R.rows(); ++j) {
    int arg = 0;
    for (Eigen::Index k = 1; k < R.cols(); ++k)
      if (R(j, k) > R(j, arg)) arg = static_cast<int>(k);
    bool tie = false;
    for (Eigen::Index k = 0; k < R.cols(); ++k)
      if (k != arg && R(j, k) == R(j, arg)) tie = true;
    out.push_back(arg);
    if (tie_flags) tie_flags->push_back(tie);
  }
  return out;
}

// ---- serialization --------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index q = 0; q < m.cols(); ++q) row.push_back(m(i, q));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index q = 0; q < cols; ++q) m(i, q) = j.at(i).at(q).get<double>();
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

}  // namespace detail

inline nlohmann::json model_to_json(const GroupedModel& m) {
  nlohmann::json j;
  j["schema_version"] = GroupedModel::kSchemaVersion;
  j["method"] = m.method;
  j["bound"] = m.bound;
  j["bound_trace"] = m.bound_trace;
  j["warnings"] = m.warnings;
  j["alpha"] = detail::vector_to_json(m.alpha);
  j["R"] = detail::matrix_to_json(m.R);
  nlohmann::json hy;
  hy["noise_log_variance"] = m.hyper.noise.log_noise_variance;
  hy["random_log_signal_variance"] = m.hyper.random_effect.log_signal_variance;
  hy["random_log_lengthscale"] = detail::vector_to_json(m.hyper.random_effect.log_lengthscale);
  hy["fixed"] = nlohmann::json::array();
  for (const auto& f : m.hyper.fixed) {
    nlohmann::json fj;
    fj["log_signal_variance"] = f.log_signal_variance;
    fj["log_lengthscale"] = detail::vector_to_json(f.log_lengthscale);
    hy["fixed"].push_back(std::move(fj));
  }
  j["hyper"] = std::move(hy);
  j["inducing"] = nlohmann::json::array();
  for (const auto& s : m.inducing) j["inducing"].push_back(detail::matrix_to_json(s.X));
  j["posteriors"] = nlohmann::json::array();
  for (const auto& p : m.posteriors) {
    nlohmann::json pj;
    pj["mean"] = detail::vector_to_json(p.mean);
    pj["cov"] = detail::matrix_to_json(p.cov);
    j["posteriors"].push_back(std::move(pj));
  }
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : m.tasks) {
    nlohmann::json tj;
    tj["X"] = detail::matrix_to_json(t.X);
    tj["y"] = detail::vector_to_json(t.y);
    if (t.noise_variance) tj["noise_variance"] = *t.noise_variance;
    j["tasks"].push_back(std::move(tj));
  }
  nlohmann::json cj;
  cj["num_centers"] = m.config.num_centers;
  cj["m_per_center"] = m.config.m_per_center;
  cj["alpha0"] = m.config.alpha0;
  cj["seed"] = m.config.seed;
  cj["shared_fixed_kernel"] = m.config.shared_fixed_kernel;
  cj["optimize_inducing"] = m.config.optimize_inducing;
  cj["include_trace_term"] = m.config.include_trace_term;
  j["config"] = std::move(cj);
  return j;
}

inline GroupedModel model_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") ||
      j.at("schema_version").get<int>() != GroupedModel::kSchemaVersion)
    throw SchemaVersionMismatch("model file: unsupported schema version");
  GroupedModel m;
  m.method = j.at("method").get<std::string>();
  m.bound = j.at("bound").get<double>();
  m.bound_trace = j.at("bound_trace").get<std::vector<double>>();
  m.warnings = j.at("warnings").get<std::vector<std::string>>();
  m.alpha = detail::vector_from_json(j.at("alpha"));
  m.R = detail::matrix_from_json(j.at("R"));
  const auto& hy = j.at("hyper");
  m.hyper.noise.log_noise_variance = hy.at("noise_log_variance").get<double>();
  m.hyper.random_effect.log_signal_variance =
      hy.at("random_log_signal_variance").get<double>();
  m.hyper.random_effect.log_lengthscale =
      detail::vector_from_json(hy.at("random_log_lengthscale"));
  for (const auto& fj : hy.at("fixed")) {
    SeKernelParams f;
    f.log_signal_variance = fj.at("log_signal_variance").get<double>();
    f.log_lengthscale = detail::vector_from_json(fj.at("log_lengthscale"));
    m.hyper.fixed.push_back(std::move(f));
  }
  for (const auto& ij : j.at("inducing")) {
    InducingSet s;
    s.X = detail::matrix_from_json(ij);
    m.inducing.push_back(std::move(s));
  }
  for (const auto& pj : j.at("posteriors")) {
    InducingPosterior p;
    p.mean = detail::vector_from_json(pj.at("mean"));
    p.cov = detail::matrix_from_json(pj.at("cov"));
    m.posteriors.push_back(std::move(p));
  }
  for (const auto& tj : j.at("tasks")) {
    Task t;
    t.X = detail::matrix_from_json(tj.at("X"));
    t.y = detail::vector_from_json(tj.at("y"));
    if (tj.contains("noise_variance")) t.noise_variance = tj.at("noise_variance").get<double>();
    m.tasks.push_back(std::move(t));
  }
  const auto& cj = j.at("config");
  m.config.num_centers = cj.at("num_centers").get<int>();
  m.config.m_per_center = cj.at("m_per_center").get<int>();
  m.config.alpha0 = cj.at("alpha0").get<double>();
  m.config.seed = cj.at("seed").get<std::uint64_t>();
  m.config.shared_fixed_kernel = cj.at("shared_fixed_kernel").get<bool>();
  m.config.optimize_inducing = cj.at("optimize_inducing").get<bool>();
  m.config.include_trace_term = cj.at("include_trace_term").get<bool>();
  return m;
}

}  // namespace mtgp

#endif
