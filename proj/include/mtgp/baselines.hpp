#ifndef MTGP_BASELINES_HPP
#define MTGP_BASELINES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "mtgp/common.hpp"
#include "mtgp/data.hpp"
#include "mtgp/grouped.hpp"
#include "mtgp/kernels.hpp"
#include "mtgp/linalg.hpp"
#include "mtgp/model.hpp"
#include "mtgp/optimize.hpp"
#include "mtgp/sparse.hpp"

namespace mtgp {

inline constexpr Eigen::Index kDirectSizeGuard = 5000;

namespace detail {

inline Eigen::Index total_points(const std::vector<Task>& tasks) {
  Eigen::Index n = 0;
  for (const auto& t : tasks) n += t.X.rows();
  return n;
}

// Dense covariance of all observations under the mixed-effect model, plus the
// per-observation noise on the diagonal.
inline Eigen::MatrixXd direct_cov(const std::vector<Task>& tasks, const Hyper& hyper) {
  std::vector<Eigen::MatrixXd> inputs;
  for (const auto& t : tasks) inputs.push_back(t.X);
  Eigen::MatrixXd k = mixed_effect_cov(hyper.fixed_for(0), hyper.random_effect, inputs);
  Eigen::Index off = 0;
  for (const auto& t : tasks) {
    k.diagonal().segment(off, t.X.rows()).array() += hyper.task_noise(t);
    off += t.X.rows();
  }
  return 0.5 * (k + k.transpose());
}

inline Eigen::VectorXd stack_targets(const std::vector<Task>& tasks) {
  Eigen::VectorXd y(total_points(tasks));
  Eigen::Index off = 0;
  for (const auto& t : tasks) {
    y.segment(off, t.y.size()) = t.y;
    off += t.y.size();
  }
  return y;
}

}  // namespace detail

// Exact marginal log-likelihood of all tasks under the mixed-effect model.
// Cost is cubic in the total number of observations, hence the size guard.
inline double direct_loglik(const std::vector<Task>& tasks, const Hyper& hyper,
                            bool allow_large = false) {
  if (tasks.empty()) throw EmptyTask("direct_loglik: no tasks");
  for (const auto& t : tasks) t.validate();
  const Eigen::Index n = detail::total_points(tasks);
  if (!allow_large && n > kDirectSizeGuard)
    throw SizeGuardExceeded("direct_loglik: problem too large for the dense path");
  Eigen::MatrixXd k = detail::direct_cov(tasks, hyper);
  CholFactor f = chol(k);
  Eigen::VectorXd y = detail::stack_targets(tasks);
  Eigen::VectorXd a = f.solve(y);
  return -0.5 * y.dot(a) - 0.5 * f.logdet() - 0.5 * static_cast<double>(n) * kLog2Pi;
}

// Gradient of direct_loglik over the hyperparameter coordinates of `layout`
// (inducing coordinates, if present, get zero). Uses W = (a a^T - K^{-1})/2.
inline Eigen::VectorXd direct_loglik_grad(const std::vector<Task>& tasks, const Hyper& hyper,
                                          const ParamLayout& layout,
                                          bool allow_large = false) {
  const Eigen::Index n = detail::total_points(tasks);
  if (!allow_large && n > kDirectSizeGuard)
    throw SizeGuardExceeded("direct_loglik_grad: problem too large for the dense path");
  Eigen::MatrixXd k = detail::direct_cov(tasks, hyper);
  CholFactor f = chol(k);
  Eigen::VectorXd y = detail::stack_targets(tasks);
  Eigen::VectorXd a = f.solve(y);
  Eigen::MatrixXd w = 0.5 * (a * a.transpose() -
                             f.solve(Eigen::MatrixXd::Identity(n, n)));

  Eigen::MatrixXd all(n, hyper.input_dim());
  Eigen::Index off = 0;
  for (const auto& t : tasks) {
    all.middleRows(off, t.X.rows()) = t.X;
    off += t.X.rows();
  }
  const SeKernelParams& fx = hyper.fixed_for(0);
  const SeKernelParams& rd = hyper.random_effect;

  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size()));
  for (std::size_t i = 0; i < layout.coords.size(); ++i) {
    const Coord& c = layout.coords[i];
    double v = 0.0;
    switch (c.kind) {
      case CoordKind::FixedSignal:
        v = w.cwiseProduct(se_cov(fx, all, all)).sum();
        break;
      case CoordKind::FixedLength:
        v = w.cwiseProduct(se_cov_grad(fx, all, all, SeParam::Lengthscale, c.dim)).sum();
        break;
      case CoordKind::RandSignal: {
        Eigen::Index o = 0;
        for (const auto& t : tasks) {
          v += w.block(o, o, t.X.rows(), t.X.rows())
                   .cwiseProduct(se_cov(rd, t.X, t.X)).sum();
          o += t.X.rows();
        }
        break;
      }
      case CoordKind::RandLength: {
        Eigen::Index o = 0;
        for (const auto& t : tasks) {
          v += w.block(o, o, t.X.rows(), t.X.rows())
                   .cwiseProduct(se_cov_grad(rd, t.X, t.X, SeParam::Lengthscale, c.dim)).sum();
          o += t.X.rows();
        }
        break;
      }
      case CoordKind::Noise: {
        const double s2 = hyper.noise.noise_variance();
        Eigen::Index o = 0;
        for (const auto& t : tasks) {
          if (!t.noise_variance)
            v += w.diagonal().segment(o, t.X.rows()).sum() * s2;
          o += t.X.rows();
        }
        break;
      }
      case CoordKind::Inducing:
        v = 0.0;  // no inducing points in the dense model
        break;
    }
    g[static_cast<Eigen::Index>(i)] = v;
  }
  return g;
}

// Exact predictive for one task, conditioning on every task's observations.
inline PredictiveDistribution direct_predict(std::size_t task_id,
                                             const Eigen::MatrixXd& x_star,
                                             const std::vector<Task>& tasks,
                                             const Hyper& hyper, bool add_noise = false,
                                             bool allow_large = false) {
  if (task_id >= tasks.size()) throw UnknownTask("direct_predict: unknown task id");
  const Eigen::Index n = detail::total_points(tasks);
  if (!allow_large && n > kDirectSizeGuard)
    throw SizeGuardExceeded("direct_predict: problem too large for the dense path");
  const SeKernelParams& fx = hyper.fixed_for(0);
  const SeKernelParams& rd = hyper.random_effect;

  Eigen::MatrixXd k = detail::direct_cov(tasks, hyper);
  CholFactor f = chol(k);
  Eigen::VectorXd y = detail::stack_targets(tasks);

  // cross covariance between f^j(x*) and every observation
  Eigen::MatrixXd ks(x_star.rows(), n);
  Eigen::Index off = 0;
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    Eigen::MatrixXd block = se_cov(fx, x_star, tasks[j].X);
    if (j == task_id) block += se_cov(rd, x_star, tasks[j].X);
    ks.middleCols(off, tasks[j].X.rows()) = block;
    off += tasks[j].X.rows();
  }

  Eigen::MatrixXd kinv_ks = f.solve(ks.transpose());  // n x ns
  PredictiveDistribution out;
  out.mean = ks * f.solve(y);
  out.var.resize(x_star.rows());
  for (Eigen::Index i = 0; i < x_star.rows(); ++i) {
    const double prior = se_cov(fx, x_star.row(i), x_star.row(i))(0, 0) +
                         se_cov(rd, x_star.row(i), x_star.row(i))(0, 0);
    out.var[i] = std::max(prior - ks.row(i).dot(kinv_ks.col(i)), 1e-12);
  }
  if (add_noise) out.var.array() += hyper.task_noise(tasks[task_id]);
  return out;
}

// Hyperparameters fitted by maximizing the exact marginal likelihood with the
// same stochastic coordinate ascent used elsewhere.
struct DirectModel {
  std::vector<Task> tasks;
  Hyper hyper;
  double loglik = 0.0;
};

inline DirectModel direct_fit(const std::vector<Task>& tasks, std::uint64_t seed,
                              int max_iters = 400, int restarts = 2,
                              bool allow_large = false) {
  if (tasks.empty()) throw EmptyTask("direct_fit: no tasks");
  GroupedModelConfig cfg;  // reused only for the initializer heuristics
  cfg.num_centers = 1;
  cfg.shared_fixed_kernel = true;

  DirectModel best;
  bool have_best = false;
  for (int restart = 0; restart < std::max(1, restarts); ++restart) {
    std::mt19937_64 rng(derive_seed(seed, 0x0D12EC7ULL + static_cast<std::uint64_t>(restart)));
    Hyper hyper = detail::init_hyper(tasks, cfg, rng, restart > 0);
    std::vector<InducingSet> dummy{InducingSet{tasks.front().X.topRows(1), false}};
    ParamLayout layout = ParamLayout::build(hyper, dummy, false);
    Eigen::VectorXd x = layout.pack(hyper, dummy);
    Hyper h = hyper;
    CdObjective obj = [&](const Eigen::VectorXd& v, bool need_grad) {
      layout.unpack(v, h, dummy);
      const double val = direct_loglik(tasks, h, allow_large);
      Eigen::VectorXd g;
      if (need_grad) g = direct_loglik_grad(tasks, h, layout, allow_large);
      return std::make_pair(val, g);
    };
    CdOptions opts;
    opts.max_iters = max_iters;
    CdResult r = coordinate_descent(x, obj, build_step_scale(layout, tasks, opts.step),
                                    opts, rng);
    layout.unpack(x, hyper, dummy);
    if (!have_best || r.value > best.loglik) {
      best.tasks = tasks;
      best.hyper = hyper;
      best.loglik = r.value;
      have_best = true;
    }
  }
  return best;
}

// MT-SD baseline: sparse bound with a frozen random subset of training inputs
// as inducing points; only hyperparameters are optimized.
inline GroupedModel mtsd_fit(const std::vector<Task>& tasks, int m, std::uint64_t seed,
                             GroupedModelConfig base = {}) {
  base.num_centers = 1;
  base.m_per_center = m;
  base.seed = seed;
  base.optimize_inducing = false;
  base.inducing_init = GroupedModelConfig::InducingInit::RandomSubset;
  base.include_trace_term = true;
  GroupedModel model = fit_grouped(tasks, base);
  model.method = "mtsd";
  return model;
}

// MT-PP baseline: projected-process bound (no trace penalty), learnable
// inducing points.
inline GroupedModel mtpp_fit(const std::vector<Task>& tasks, int m, std::uint64_t seed,
                             GroupedModelConfig base = {}) {
  base.num_centers = 1;
  base.m_per_center = m;
  base.seed = seed;
  base.optimize_inducing = true;
  base.include_trace_term = false;
  GroupedModel model = fit_grouped(tasks, base);
  model.method = "mtpp";
  return model;
}

// MT-VAR: the full variational method with learnable inducing points.
inline GroupedModel mtvar_fit(const std::vector<Task>& tasks, int m, std::uint64_t seed,
                              GroupedModelConfig base = {}) {
  base.num_centers = 1;
  base.m_per_center = m;
  base.seed = seed;
  base.optimize_inducing = true;
  base.include_trace_term = true;
  GroupedModel model = fit_grouped(tasks, base);
  model.method = "mtvar";
  return model;
}

}  // namespace mtgp

#endif
