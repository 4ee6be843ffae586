#ifndef MTGP_SPARSE_HPP
#define MTGP_SPARSE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mtgp/common.hpp"
#include "mtgp/data.hpp"
#include "mtgp/kernels.hpp"
#include "mtgp/linalg.hpp"
#include "mtgp/model.hpp"

namespace mtgp {

inline constexpr double kLog2Pi = 1.8378770664093453;

// Responsibilities below this floor are clamped before forming the
// r^{-1}-scaled block-diagonal; the trace term keeps the raw value.
inline constexpr double kRespFloor = 1e-12;

// Relative nugget added to every inducing Gram matrix. Without it the
// log-determinant difference log|Phi| - log|Kmm| is uncontrolled once
// optimized inducing points crowd together, and the bound can exceed the
// exact likelihood by hundreds of nats.
inline constexpr double kInducingNugget = 1e-10;

// K(Z, Z) with the stabilizing nugget; the diagonal shift scales with the
// signal variance so the regularization is invariant to output rescaling.
inline Eigen::MatrixXd inducing_gram(const SeKernelParams& theta, const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd kmm = se_cov(theta, Z, Z);
  kmm = 0.5 * (kmm + kmm.transpose());
  kmm.diagonal().array() += kInducingNugget * kmm.diagonal().mean();
  return kmm;
}

// Per-task quantities that depend only on the random-effect kernel and the
// noise, shared by every center and reused across bound, posterior and
// prediction evaluations.
struct TaskCache {
  std::vector<CholFactor> khat_chol;      // factors of Khat_jj = Ktilde_jj + sigma_j^2 I
  std::vector<Eigen::MatrixXd> ktilde;    // Ktilde_jj
  std::vector<Eigen::MatrixXd> khat_inv;  // dense inverses (blocks are small)
  std::vector<Eigen::VectorXd> u;         // Khat_jj^{-1} y_j
  std::vector<double> logdet_khat;
  std::vector<bool> uses_shared_noise;
  Eigen::Index total_n = 0;
};

inline TaskCache build_task_cache(const std::vector<Task>& tasks, const Hyper& hyper) {
  TaskCache c;
  for (const auto& t : tasks) {
    t.validate();
    Eigen::MatrixXd kt = se_cov(hyper.random_effect, t.X, t.X);
    kt = 0.5 * (kt + kt.transpose());
    Eigen::MatrixXd khat = kt;
    khat.diagonal().array() += hyper.task_noise(t);
    CholFactor f = chol(khat);
    c.khat_inv.push_back(f.solve(Eigen::MatrixXd::Identity(khat.rows(), khat.cols())));
    c.u.push_back(f.solve(t.y));
    c.logdet_khat.push_back(f.logdet());
    c.khat_chol.push_back(std::move(f));
    c.ktilde.push_back(std::move(kt));
    c.uses_shared_noise.push_back(!t.noise_variance.has_value());
    c.total_n += t.X.rows();
  }
  return c;
}

// Everything needed to evaluate one center's contribution to the bound and
// its gradient. Weights w are the clamped responsibilities entering the
// r^{-1} Khat blocks; rho are the raw responsibilities for the trace term.
struct CenterEval {
  Eigen::MatrixXd kmm;
  CholFactor kmm_chol;
  Eigen::MatrixXd phi;
  CholFactor phi_chol;
  std::vector<Eigen::MatrixXd> lambda;  // K_jm
  std::vector<Eigen::MatrixXd> T;       // Khat_jj^{-1} K_jm
  std::vector<Eigen::MatrixXd> kjj;     // fixed-effect K_jj
  std::vector<Eigen::MatrixXd> qjj;     // K_jm Kmm^{-1} K_mj
  std::vector<Eigen::VectorXd> beta;    // blocks of Upsilon^{-1} y
  Eigen::VectorXd c;                    // Phi^{-1} Lambda^T Khat^{k,-1} y
  Eigen::VectorXd w;                    // clamped weights
  double y_quad = 0.0;
  double logdet = 0.0;
  double lognormal = 0.0;               // log N(y | 0, Lambda Kmm^{-1} Lambda^T + Khat^k)
  std::vector<double> trace_j;          // Tr[(K_jj - Q_jj) Khat_jj^{-1}]
};

inline CenterEval eval_center(const std::vector<Task>& tasks, const TaskCache& cache,
                              const Eigen::MatrixXd& Z, const SeKernelParams& theta,
                              const Eigen::VectorXd& weights) {
  const std::size_t M = tasks.size();
  const Eigen::Index m = Z.rows();
  CenterEval e;
  e.w = weights.cwiseMax(kRespFloor);
  e.kmm = inducing_gram(theta, Z);
  e.kmm_chol = chol(e.kmm);

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd lam_t_u = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < M; ++j) {
    Eigen::MatrixXd lam = se_cov(theta, tasks[j].X, Z);
    Eigen::MatrixXd t = cache.khat_chol[j].solve(lam);
    S.noalias() += e.w[j] * lam.transpose() * t;
    lam_t_u.noalias() += e.w[j] * lam.transpose() * cache.u[j];
    e.lambda.push_back(std::move(lam));
    e.T.push_back(std::move(t));
  }
  e.phi = e.kmm + 0.5 * (S + S.transpose());
  e.phi_chol = chol(e.phi);
  e.c = e.phi_chol.solve(lam_t_u);

  double logdet = e.phi_chol.logdet() - e.kmm_chol.logdet();
  for (std::size_t j = 0; j < M; ++j) {
    Eigen::VectorXd beta_j = e.w[j] * (cache.u[j] - e.T[j] * e.c);
    e.y_quad += tasks[j].y.dot(beta_j);
    e.beta.push_back(std::move(beta_j));
    logdet += cache.logdet_khat[j] -
              static_cast<double>(tasks[j].X.rows()) * std::log(e.w[j]);
  }
  e.logdet = logdet;
  e.lognormal = -0.5 * e.y_quad - 0.5 * e.logdet -
                0.5 * static_cast<double>(cache.total_n) * kLog2Pi;

  for (std::size_t j = 0; j < M; ++j) {
    Eigen::MatrixXd kjj = se_cov(theta, tasks[j].X, tasks[j].X);
    kjj = 0.5 * (kjj + kjj.transpose());
    Eigen::MatrixXd qjj = e.lambda[j] * e.kmm_chol.solve(e.lambda[j].transpose());
    e.trace_j.push_back(((kjj - qjj).cwiseProduct(cache.khat_inv[j])).sum());
    e.kjj.push_back(std::move(kjj));
    e.qjj.push_back(std::move(qjj));
  }
  return e;
}

// Adjoints (partial derivatives of the bound w.r.t. the kernel matrices) for
// one center; the chain rule into hyperparameters happens in
// grouped_bound_grad.
struct CenterAdjoints {
  Eigen::MatrixXd kmm;                       // dF/dKmm
  std::vector<Eigen::MatrixXd> lambda;       // dF/dK_jm
  std::vector<Eigen::MatrixXd> khat;         // this center's dF/dKhat_jj
  std::vector<Eigen::MatrixXd> kjj;          // dF/dK_jj (trace term only)
};

inline CenterAdjoints center_adjoints(const std::vector<Task>& tasks, const TaskCache& cache,
                                      const CenterEval& e, const Eigen::VectorXd& rho,
                                      bool include_trace) {
  const std::size_t M = tasks.size();
  const Eigen::Index m = e.kmm.rows();
  CenterAdjoints a;

  Eigen::VectorXd lam_t_beta = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < M; ++j)
    lam_t_beta.noalias() += e.lambda[j].transpose() * e.beta[j];
  Eigen::VectorXd v = e.kmm_chol.solve(lam_t_beta);
  Eigen::MatrixXd kmm_inv = e.kmm_chol.solve(Eigen::MatrixXd::Identity(m, m));
  Eigen::MatrixXd phi_inv = e.phi_chol.solve(Eigen::MatrixXd::Identity(m, m));

  a.kmm = -0.5 * (v * v.transpose() - kmm_inv + phi_inv);

  Eigen::MatrixXd s_rho = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t j = 0; j < M; ++j) {
    Eigen::MatrixXd alam = e.beta[j] * v.transpose() - e.w[j] * (e.T[j] * phi_inv);
    Eigen::MatrixXd akhat =
        0.5 * ((1.0 / e.w[j]) * (e.beta[j] * e.beta[j].transpose()) - cache.khat_inv[j] +
               e.w[j] * (e.T[j] * phi_inv * e.T[j].transpose()));
    if (include_trace) {
      alam.noalias() += rho[j] * (e.T[j] * kmm_inv);
      akhat.noalias() +=
          0.5 * rho[j] * (cache.khat_inv[j] * (e.kjj[j] - e.qjj[j]) * cache.khat_inv[j]);
      a.kjj.push_back(-0.5 * rho[j] * cache.khat_inv[j]);
      s_rho.noalias() += rho[j] * e.lambda[j].transpose() * e.T[j];
    } else {
      a.kjj.push_back(Eigen::MatrixXd::Zero(tasks[j].X.rows(), tasks[j].X.rows()));
    }
    a.lambda.push_back(std::move(alam));
    a.khat.push_back(std::move(akhat));
  }
  if (include_trace) a.kmm.noalias() += -0.5 * kmm_inv * s_rho * kmm_inv;
  return a;
}

namespace detail {

// (A.col(q) - B.col(q)^T)^2 as a matrix.
inline Eigen::MatrixXd sqdiff(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int q) {
  Eigen::MatrixXd d = A.col(q).replicate(1, B.rows()) -
                      B.col(q).transpose().replicate(A.rows(), 1);
  return d.cwiseAbs2();
}

}  // namespace detail

struct BoundResult {
  double value = 0.0;
  Eigen::VectorXd grad;
};

// Evaluates the grouped variational bound
//   sum_k log N(y | 0, Lambda_k Kkk^{-1} Lambda_k^T + Khat^k)
//   + (K-1)/2 sum_j log|Khat_jj|
//   - 1/2 sum_k sum_j r_jk Tr[(K_jj^k - Q_jj^k) Khat_jj^{-1}]
// and, when `layout` is given, its gradient in log-parameter space plus the
// inducing coordinates. K = 1 with unit responsibilities is the single-center
// bound. The trace penalty can be dropped for the projected-process variant.
inline BoundResult grouped_bound(const std::vector<Task>& tasks,
                                 const std::vector<InducingSet>& inducing,
                                 const Hyper& hyper, const Eigen::MatrixXd& R,
                                 bool include_trace = true,
                                 const ParamLayout* layout = nullptr) {
  const std::size_t M = tasks.size();
  const int K = static_cast<int>(inducing.size());
  if (M == 0) throw EmptyTask("grouped_bound: no tasks");
  if (R.rows() != static_cast<Eigen::Index>(M) || R.cols() != K)
    throw DimensionMismatch("grouped_bound: responsibility shape mismatch");

  TaskCache cache = build_task_cache(tasks, hyper);
  std::vector<CenterEval> evals;
  evals.reserve(K);
  BoundResult res;
  for (int k = 0; k < K; ++k) {
    evals.push_back(eval_center(tasks, cache, inducing[k].X, hyper.fixed_for(k), R.col(k)));
    res.value += evals.back().lognormal;
    if (include_trace)
      for (std::size_t j = 0; j < M; ++j)
        res.value -= 0.5 * R(j, k) * evals.back().trace_j[j];
  }
  for (std::size_t j = 0; j < M; ++j)
    res.value += 0.5 * (K - 1) * cache.logdet_khat[j];

  if (!layout) return res;

  std::vector<CenterAdjoints> adj;
  adj.reserve(K);
  for (int k = 0; k < K; ++k)
    adj.push_back(center_adjoints(tasks, cache, evals[k], R.col(k), include_trace));

  // Total Khat adjoint: per-center contributions plus the (K-1)/2 log-det term.
  std::vector<Eigen::MatrixXd> akhat_total;
  for (std::size_t j = 0; j < M; ++j) {
    Eigen::MatrixXd a = 0.5 * (K - 1) * cache.khat_inv[j];
    for (int k = 0; k < K; ++k) a += adj[k].khat[j];
    akhat_total.push_back(std::move(a));
  }

  res.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout->size()));
  const SeKernelParams& rnd = hyper.random_effect;
  for (std::size_t i = 0; i < layout->coords.size(); ++i) {
    const Coord& co = layout->coords[i];
    double g = 0.0;
    switch (co.kind) {
      case CoordKind::FixedSignal: {
        for (int k = 0; k < K; ++k) {
          if (!layout->shared_fixed && k != co.center) continue;
          g += adj[k].kmm.cwiseProduct(evals[k].kmm).sum();
          for (std::size_t j = 0; j < M; ++j) {
            g += adj[k].lambda[j].cwiseProduct(evals[k].lambda[j]).sum();
            if (include_trace) g += adj[k].kjj[j].cwiseProduct(evals[k].kjj[j]).sum();
          }
        }
        break;
      }
      case CoordKind::FixedLength: {
        for (int k = 0; k < K; ++k) {
          if (!layout->shared_fixed && k != co.center) continue;
          const double l = std::exp(hyper.fixed_for(k).log_lengthscale[co.dim]);
          const double inv_l2 = 1.0 / (l * l);
          const Eigen::MatrixXd& Z = inducing[k].X;
          g += adj[k].kmm.cwiseProduct(
                   evals[k].kmm.cwiseProduct(detail::sqdiff(Z, Z, co.dim))).sum() * inv_l2;
          for (std::size_t j = 0; j < M; ++j) {
            g += adj[k].lambda[j].cwiseProduct(
                     evals[k].lambda[j].cwiseProduct(detail::sqdiff(tasks[j].X, Z, co.dim))).sum() * inv_l2;
            if (include_trace)
              g += adj[k].kjj[j].cwiseProduct(
                       evals[k].kjj[j].cwiseProduct(
                           detail::sqdiff(tasks[j].X, tasks[j].X, co.dim))).sum() * inv_l2;
          }
        }
        break;
      }
      case CoordKind::RandSignal: {
        for (std::size_t j = 0; j < M; ++j)
          g += akhat_total[j].cwiseProduct(cache.ktilde[j]).sum();
        break;
      }
      case CoordKind::RandLength: {
        const double l = std::exp(rnd.log_lengthscale[co.dim]);
        const double inv_l2 = 1.0 / (l * l);
        for (std::size_t j = 0; j < M; ++j)
          g += akhat_total[j].cwiseProduct(
                   cache.ktilde[j].cwiseProduct(
                       detail::sqdiff(tasks[j].X, tasks[j].X, co.dim))).sum() * inv_l2;
        break;
      }
      case CoordKind::Noise: {
        const double s2 = hyper.noise.noise_variance();
        for (std::size_t j = 0; j < M; ++j)
          if (cache.uses_shared_noise[j]) g += akhat_total[j].trace() * s2;
        break;
      }
      case CoordKind::Inducing: {
        const int k = co.center;
        const Eigen::MatrixXd& Z = inducing[k].X;
        const double l = std::exp(hyper.fixed_for(k).log_lengthscale[co.dim]);
        const double inv_l2 = 1.0 / (l * l);
        for (std::size_t j = 0; j < M; ++j) {
          const auto& lam = evals[k].lambda[j];
          const auto& alam = adj[k].lambda[j];
          for (Eigen::Index r = 0; r < lam.rows(); ++r)
            g += alam(r, co.row) * lam(r, co.row) *
                 (tasks[j].X(r, co.dim) - Z(co.row, co.dim)) * inv_l2;
        }
        for (Eigen::Index s = 0; s < Z.rows(); ++s) {
          if (s == co.row) continue;
          g += 2.0 * adj[k].kmm(co.row, s) * evals[k].kmm(co.row, s) *
               (Z(s, co.dim) - Z(co.row, co.dim)) * inv_l2;
        }
        break;
      }
    }
    res.grad[static_cast<Eigen::Index>(i)] = g;
  }
  return res;
}

// ---- single-center API ----------------------------------------------------

inline Eigen::MatrixXd unit_responsibilities(std::size_t M) {
  return Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(M), 1);
}

inline double bound_value(const std::vector<Task>& tasks, const InducingSet& inducing,
                          const Hyper& hyper, bool include_trace = true) {
  std::vector<InducingSet> ind{inducing};
  return grouped_bound(tasks, ind, hyper, unit_responsibilities(tasks.size()), include_trace).value;
}

inline BoundResult bound_with_grad(const std::vector<Task>& tasks, const InducingSet& inducing,
                                   const Hyper& hyper, bool include_trace = true,
                                   bool optimize_inducing = true) {
  std::vector<InducingSet> ind{inducing};
  ParamLayout layout = ParamLayout::build(hyper, ind, optimize_inducing);
  return grouped_bound(tasks, ind, hyper, unit_responsibilities(tasks.size()), include_trace,
                       &layout);
}

// Posterior over one center's inducing values given (possibly fractional)
// responsibility weights. Weights enter unclamped; a zero column yields the
// prior.
inline InducingPosterior center_posterior(const std::vector<Task>& tasks, const TaskCache& cache,
                                          const Eigen::MatrixXd& Z, const SeKernelParams& theta,
                                          const Eigen::VectorXd& weights) {
  const Eigen::Index m = Z.rows();
  Eigen::MatrixXd kmm = inducing_gram(theta, Z);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    if (weights[j] == 0.0) continue;
    Eigen::MatrixXd lam = se_cov(theta, tasks[j].X, Z);
    S.noalias() += weights[j] * lam.transpose() * cache.khat_chol[j].solve(lam);
    rhs.noalias() += weights[j] * lam.transpose() * cache.u[j];
  }
  Eigen::MatrixXd phi = kmm + 0.5 * (S + S.transpose());
  CholFactor phi_chol = chol(phi);
  InducingPosterior post;
  post.mean = kmm * phi_chol.solve(rhs);
  Eigen::MatrixXd a = kmm * phi_chol.solve(kmm);
  post.cov = 0.5 * (a + a.transpose());
  return post;
}

inline InducingPosterior inducing_posterior(const std::vector<Task>& tasks,
                                            const InducingSet& inducing, const Hyper& hyper) {
  TaskCache cache = build_task_cache(tasks, hyper);
  return center_posterior(tasks, cache, inducing.X, hyper.fixed_for(0),
                          Eigen::VectorXd::Ones(static_cast<Eigen::Index>(tasks.size())));
}

// E_{phi(eta_k)}[log G(eta_k, y^j)]: expected per-task model-fit term used by
// the responsibility update. Includes the full trace corrections so that the
// coordinate-ascent updates are monotone in the bound.
inline double expected_log_g(const Task& task, const CholFactor& khat_chol,
                             double logdet_khat, const Eigen::MatrixXd& khat_inv,
                             const Eigen::MatrixXd& Z, const SeKernelParams& theta,
                             const InducingPosterior& post) {
  const Eigen::Index nj = task.X.rows();
  Eigen::MatrixXd kmm = inducing_gram(theta, Z);
  CholFactor kmm_chol = chol(kmm);
  Eigen::MatrixXd lam = se_cov(theta, task.X, Z);
  Eigen::MatrixXd B = kmm_chol.solve(lam.transpose()).transpose();  // K_jk Kkk^{-1}
  Eigen::VectorXd resid = task.y - B * post.mean;
  const Eigen::VectorXd solved = khat_chol.solve(resid);
  const double quad = resid.dot(solved);
  const double log_n = -0.5 * quad - 0.5 * logdet_khat - 0.5 * static_cast<double>(nj) * kLog2Pi;
  Eigen::MatrixXd bsb = B * post.cov * B.transpose();
  const double t_cov = 0.5 * bsb.cwiseProduct(khat_inv).sum();
  Eigen::MatrixXd kjj = se_cov(theta, task.X, task.X);
  Eigen::MatrixXd qjj = lam * kmm_chol.solve(lam.transpose());
  const double t_gap = 0.5 * ((kjj - qjj).cwiseProduct(khat_inv)).sum();
  return log_n - t_cov - t_gap;
}

// ---- prediction -----------------------------------------------------------

struct PredictiveDistribution {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

// Predictive distribution of f^j(x*) = fbar(x*) + ftilde^j(x*) under one
// center, including the posterior cross-covariance between the two effects.
inline PredictiveDistribution predict_center(const Task& task, const Eigen::MatrixXd& x_star,
                                             const Eigen::MatrixXd& Z,
                                             const SeKernelParams& theta,
                                             const SeKernelParams& rnd, double sigma2,
                                             const InducingPosterior& post) {
  task.validate();
  const Eigen::Index ns = x_star.rows();
  const Eigen::Index m = Z.rows();

  Eigen::MatrixXd kmm = inducing_gram(theta, Z);
  CholFactor kmm_chol = chol(kmm);

  Eigen::MatrixXd k_sm = se_cov(theta, x_star, Z);
  Eigen::MatrixXd k_jm = se_cov(theta, task.X, Z);
  Eigen::MatrixXd H = kmm_chol.solve(k_sm.transpose()).transpose();  // ns x m
  Eigen::MatrixXd G = kmm_chol.solve(k_jm.transpose()).transpose();  // Nj x m

  Eigen::MatrixXd khat = se_cov(rnd, task.X, task.X);
  khat = 0.5 * (khat + khat.transpose());
  khat.diagonal().array() += sigma2;
  CholFactor khat_chol = chol(khat);
  Eigen::MatrixXd kt_sj = se_cov(rnd, x_star, task.X);
  Eigen::MatrixXd F = khat_chol.solve(kt_sj.transpose()).transpose();  // ns x Nj

  const Eigen::VectorXd& mu = post.mean;
  const Eigen::MatrixXd& A = post.cov;

  Eigen::VectorXd mean = H * mu + F * (task.y - G * mu);

  // fixed effect: K** - K*m Kmm^{-1} Km* + K*m Kmm^{-1} A Kmm^{-1} Km*
  Eigen::VectorXd var_fixed(ns);
  Eigen::MatrixXd HA = H * A;
  for (Eigen::Index i = 0; i < ns; ++i) {
    const double prior = se_cov(theta, x_star.row(i), x_star.row(i))(0, 0);
    var_fixed[i] = prior - H.row(i).dot(k_sm.row(i)) + HA.row(i).dot(H.row(i));
  }

  // random effect: Kt** - F Kt_j* + F B F^T with B = Cov[f^j | D]
  Eigen::MatrixXd B = se_cov(theta, task.X, task.X) - k_jm * G.transpose() +
                      G * A * G.transpose();
  B = 0.5 * (B + B.transpose());
  Eigen::MatrixXd FB = F * B;
  Eigen::VectorXd var_rand(ns);
  for (Eigen::Index i = 0; i < ns; ++i) {
    const double prior = se_cov(rnd, x_star.row(i), x_star.row(i))(0, 0);
    var_rand[i] = prior - F.row(i).dot(kt_sj.row(i)) + FB.row(i).dot(F.row(i));
  }

  // cross term: Cov[fbar(x*), ftilde^j(x*) | D] = -H A G^T F^T (diagonal)
  Eigen::MatrixXd HAG = HA * G.transpose();  // ns x Nj
  Eigen::VectorXd cross(ns);
  for (Eigen::Index i = 0; i < ns; ++i) cross[i] = -HAG.row(i).dot(F.row(i));

  PredictiveDistribution out;
  out.mean = std::move(mean);
  out.var = var_fixed + var_rand + 2.0 * cross;
  return out;
}

// Single-center prediction for a training task.
inline PredictiveDistribution predict_task(std::size_t task_id,
                                           const Eigen::MatrixXd& x_star,
                                           const std::vector<Task>& tasks,
                                           const InducingSet& inducing, const Hyper& hyper,
                                           const InducingPosterior& post) {
  if (task_id >= tasks.size()) throw UnknownTask("predict_task: unknown task id");
  const Task& t = tasks[task_id];
  return predict_center(t, x_star, inducing.X, hyper.fixed_for(0), hyper.random_effect,
                        hyper.task_noise(t), post);
}

}  // namespace mtgp

#endif
