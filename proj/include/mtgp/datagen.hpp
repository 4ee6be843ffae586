#ifndef MTGP_DATAGEN_HPP
#define MTGP_DATAGEN_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "mtgp/common.hpp"
#include "mtgp/data.hpp"
#include "mtgp/kernels.hpp"
#include "mtgp/linalg.hpp"

namespace mtgp {

// ---- GP-sampled mixed-effect tasks ----------------------------------------

struct SyntheticSpec {
  int num_tasks = 1000;
  int points_per_task = 5;
  double x_min = -10.0;
  double x_max = 10.0;
  int num_centers = 1;
  double fixed_signal_variance = 1.0;
  double fixed_lengthscale = 1.0;
  double random_signal_variance = 0.25;
  double random_lengthscale = 1.0;
  double noise_variance = 0.1;
  int test_grid = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(x_min < x_max)) throw std::invalid_argument("SyntheticSpec: x_min >= x_max");
    if (num_tasks < 1 || points_per_task < 1 || num_centers < 1 || test_grid < 1)
      throw std::invalid_argument("SyntheticSpec: counts must be >= 1");
    if (fixed_signal_variance <= 0.0 || random_signal_variance < 0.0 ||
        noise_variance < 0.0 || fixed_lengthscale <= 0.0 || random_lengthscale <= 0.0)
      throw std::invalid_argument("SyntheticSpec: invalid variances or lengthscales");
  }
};

namespace detail {

// Exact joint GP draw over `points` via Cholesky of the kernel matrix.
inline Eigen::VectorXd gp_draw(const SeKernelParams& params, const Eigen::MatrixXd& points,
                               std::mt19937_64& rng) {
  Eigen::MatrixXd k = se_cov(params, points, points);
  k = 0.5 * (k + k.transpose());
  CholFactor f = chol(k);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd z(points.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = gauss(rng);
  return f.L * z;
}

}  // namespace detail

// One realization of the fixed-effect curve per center, shared by its tasks;
// an i.i.d. random-effect curve per task; Gaussian observation noise on the
// training targets; noiseless test curves on an equally spaced grid.
inline Dataset sample_mixed_effect(const SyntheticSpec& spec) {
  spec.validate();
  const SeKernelParams fixed =
      SeKernelParams::make(spec.fixed_signal_variance, spec.fixed_lengthscale);
  const SeKernelParams rnd =
      spec.random_signal_variance > 0.0
          ? SeKernelParams::make(spec.random_signal_variance, spec.random_lengthscale)
          : SeKernelParams();

  Eigen::MatrixXd grid(spec.test_grid, 1);
  for (int i = 0; i < spec.test_grid; ++i)
    grid(i, 0) = spec.test_grid == 1
                     ? 0.5 * (spec.x_min + spec.x_max)
                     : spec.x_min + (spec.x_max - spec.x_min) * static_cast<double>(i) /
                                        static_cast<double>(spec.test_grid - 1);

  Dataset ds;
  ds.d = 1;
  ds.test_noisy = false;
  {
    std::ostringstream echo;
    echo << "synthetic M=" << spec.num_tasks << " N=" << spec.points_per_task
         << " K=" << spec.num_centers << " seed=" << spec.seed;
    ds.spec_echo = echo.str();
  }

  // task input locations and round-robin center labels
  std::vector<std::mt19937_64> task_rng;
  for (int j = 0; j < spec.num_tasks; ++j) {
    task_rng.emplace_back(derive_seed(spec.seed, 0xA000ULL + static_cast<std::uint64_t>(j)));
    std::uniform_real_distribution<double> u(spec.x_min, spec.x_max);
    Task t;
    t.X.resize(spec.points_per_task, 1);
    for (int i = 0; i < spec.points_per_task; ++i) t.X(i, 0) = u(task_rng.back());
    t.y = Eigen::VectorXd::Zero(spec.points_per_task);
    ds.tasks.push_back(std::move(t));
    ds.labels.push_back(j % spec.num_centers);
  }

  // per-center fixed-effect draw over (member task inputs, test grid)
  std::vector<Eigen::VectorXd> fbar_train(spec.num_tasks);
  std::vector<Eigen::VectorXd> fbar_grid(spec.num_tasks);
  for (int k = 0; k < spec.num_centers; ++k) {
    std::vector<int> members;
    Eigen::Index n = 0;
    for (int j = 0; j < spec.num_tasks; ++j)
      if (ds.labels[j] == k) {
        members.push_back(j);
        n += spec.points_per_task;
      }
    Eigen::MatrixXd pts(n + spec.test_grid, 1);
    Eigen::Index off = 0;
    for (int j : members) {
      pts.middleRows(off, spec.points_per_task) = ds.tasks[j].X;
      off += spec.points_per_task;
    }
    pts.bottomRows(spec.test_grid) = grid;
    std::mt19937_64 rng(derive_seed(spec.seed, 0xC0ULL + static_cast<std::uint64_t>(k)));
    Eigen::VectorXd draw = detail::gp_draw(fixed, pts, rng);
    off = 0;
    for (int j : members) {
      fbar_train[j] = draw.segment(off, spec.points_per_task);
      fbar_grid[j] = draw.tail(spec.test_grid);
      off += spec.points_per_task;
    }
  }

  // per-task random effect and noise
  for (int j = 0; j < spec.num_tasks; ++j) {
    Eigen::VectorXd ft_train = Eigen::VectorXd::Zero(spec.points_per_task);
    Eigen::VectorXd ft_grid = Eigen::VectorXd::Zero(spec.test_grid);
    if (spec.random_signal_variance > 0.0) {
      Eigen::MatrixXd pts(spec.points_per_task + spec.test_grid, 1);
      pts.topRows(spec.points_per_task) = ds.tasks[j].X;
      pts.bottomRows(spec.test_grid) = grid;
      Eigen::VectorXd draw = detail::gp_draw(rnd, pts, task_rng[j]);
      ft_train = draw.head(spec.points_per_task);
      ft_grid = draw.tail(spec.test_grid);
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd noise = Eigen::VectorXd::Zero(spec.points_per_task);
    if (spec.noise_variance > 0.0) {
      const double sd = std::sqrt(spec.noise_variance);
      for (int i = 0; i < spec.points_per_task; ++i) noise[i] = sd * gauss(task_rng[j]);
    }
    ds.tasks[j].y = fbar_train[j] + ft_train + noise;
    ds.test_X.push_back(grid);
    ds.test_y.push_back(fbar_grid[j] + ft_grid);
  }
  return ds;
}

// ---- glucose IVGTT minimal model ------------------------------------------

struct GlucoseSpec {
  int num_subjects = 200;
  int train_points = 5;
  int test_points = 10;
  double t_min = 1.0;
  double t_max = 240.0;
  double gb = 84.0;     // basal glucose
  double dose = 300.0;  // injected dose D
  double ib = 11.0;     // basal insulin (documented stand-in)
  // population means / variances of (S_G, S_I, p2, V) in the paper's scaled
  // units; physical values are obtained through `kParamScale`.
  Eigen::Vector4d mu{2.67, 6.42, 4.82, 1.64};
  Eigen::Vector4d sigma_diag{1.02, 6.90, 2.34, 0.22};
  double spike_sd_min = 0.0;  // injection-profile SD ~ U[min, max]
  double spike_sd_max = 1.0;
  double noise_variance = 1.0;
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_subjects < 1 || train_points < 1 || test_points < 0)
      throw std::invalid_argument("GlucoseSpec: counts must be positive");
    if (!(t_min < t_max) || !(spike_sd_min <= spike_sd_max) || spike_sd_max <= 0.0)
      throw std::invalid_argument("GlucoseSpec: invalid intervals");
    if (!mu.allFinite() || !sigma_diag.allFinite() || (sigma_diag.array() < 0.0).any())
      throw std::invalid_argument("GlucoseSpec: invalid population parameters");
  }
};

// Unit scales attached to the paper's (S_G, S_I, p2, V) population values:
// S_G in 1e-2 / min, S_I in 1e-4 / min per insulin unit, p2 in 1e-2 / min,
// V in dl/kg.
inline constexpr std::array<double, 4> kGlucoseParamScale{1e-2, 1e-4, 1e-2, 1.0};

struct GlucoseParams {
  double sg = 0.0;        // glucose effectiveness
  double si = 0.0;        // insulin sensitivity
  double p2 = 0.0;        // insulin-action decay rate
  double v = 1.0;         // distribution volume
  double spike_sd = 0.1;  // SD of the injection profile
  bool control = false;   // D = 0 and I(t) = I_b
};

// Default insulin profile: smooth pulse rising from I_b with peak near t = 5
// and decay constant 40, returning to I_b.
inline double default_insulin(double t, double ib) {
  if (t <= 0.0) return ib;
  return ib + 100.0 * (1.0 - std::exp(-t / 1.5)) * std::exp(-t / 40.0);
}

// Injection profile: half-Gaussian bump on t >= 0 normalized to unit integral
// so the delivered dose is exactly D/V.
inline double injection_profile(double t, double sd) {
  if (t < 0.0) return 0.0;
  static const double kInvSqrt2Pi = 0.3989422804014327;
  return 2.0 * kInvSqrt2Pi / sd * std::exp(-0.5 * t * t / (sd * sd));
}

namespace detail {

using GlucoseState = std::array<double, 2>;  // (G, X)

struct GlucoseRhs {
  const GlucoseSpec* spec;
  const GlucoseParams* p;

  void operator()(const GlucoseState& s, GlucoseState& ds, double t) const {
    const double insulin = p->control ? spec->ib : default_insulin(t, spec->ib);
    const double dose = p->control ? 0.0 : spec->dose;
    const double delta = p->control ? 0.0 : injection_profile(t, p->spike_sd);
    ds[0] = -(p->sg + s[1]) * s[0] + p->sg * spec->gb + delta * dose / p->v;
    ds[1] = -p->p2 * s[1] + p->p2 * p->si * (insulin - spec->ib);
  }
};

}  // namespace detail

// Solves the minimal model and returns G at the requested times (must be
// > 0, in ascending order). The sharp injection bump on [0, 6*spike_sd] is
// integrated with fixed-step RK4; the smooth remainder with adaptive
// Dormand-Prince 5.
inline std::vector<double> glucose_solution(const GlucoseSpec& spec, const GlucoseParams& p,
                                            const std::vector<double>& times,
                                            int subject_id = -1) {
  namespace ode = boost::numeric::odeint;
  detail::GlucoseRhs rhs{&spec, &p};
  detail::GlucoseState state{spec.gb, 0.0};
  double t = 0.0;
  const double sd = std::max(p.spike_sd, 1e-3);
  const double spike_end = p.control ? 0.0 : std::min(6.0 * sd, spec.t_max);
  const double h_spike = std::min(sd / 10.0, 0.01);
  ode::runge_kutta4<detail::GlucoseState> rk4;
  auto adaptive = ode::make_controlled(spec.abs_tol, spec.rel_tol,
                                       ode::runge_kutta_dopri5<detail::GlucoseState>());

  std::vector<double> out;
  out.reserve(times.size());
  try {
    for (double target : times) {
      if (!(target > 0.0) || target < t)
        throw std::invalid_argument("glucose_solution: times must be positive ascending");
      if (t < spike_end) {
        const double stop = std::min(target, spike_end);
        const int n = std::max(1, static_cast<int>(std::ceil((stop - t) / h_spike)));
        const double h = (stop - t) / static_cast<double>(n);
        for (int i = 0; i < n; ++i) {
          rk4.do_step(rhs, state, t, h);
          t += h;
        }
        t = stop;
      }
      if (t < target) {
        ode::integrate_adaptive(adaptive, rhs, state, t, target,
                                std::min(1.0, target - t));
        t = target;
      }
      out.push_back(state[0]);
    }
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception& e) {
    std::ostringstream msg;
    msg << "glucose integration failed";
    if (subject_id >= 0) msg << " for subject " << subject_id;
    msg << ": " << e.what();
    throw IntegrationFailure(msg.str());
  }
  return out;
}

// Population draw of one subject's parameters: Gaussian in the paper's scaled
// units, redrawn until all components are positive, then converted to
// physical units.
inline GlucoseParams sample_glucose_params(const GlucoseSpec& spec, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector4d raw;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    for (int i = 0; i < 4; ++i)
      raw[i] = spec.mu[i] + std::sqrt(spec.sigma_diag[i]) * gauss(rng);
    if ((raw.array() > 0.0).all()) {
      GlucoseParams p;
      p.sg = raw[0] * kGlucoseParamScale[0];
      p.si = raw[1] * kGlucoseParamScale[1];
      p.p2 = raw[2] * kGlucoseParamScale[2];
      p.v = raw[3] * kGlucoseParamScale[3];
      std::uniform_real_distribution<double> u(spec.spike_sd_min, spec.spike_sd_max);
      p.spike_sd = std::max(u(rng), 1e-3);
      return p;
    }
  }
  throw std::invalid_argument("sample_glucose_params: rejection sampling failed");
}

// Cohort of IVGTT curves: per-subject parameter draw, uniform train/test
// observation times on [t_min, t_max], observation noise on both splits.
inline Dataset simulate_glucose(const GlucoseSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.d = 1;
  ds.test_noisy = true;
  {
    std::ostringstream echo;
    echo << "glucose M=" << spec.num_subjects << " train=" << spec.train_points
         << " test=" << spec.test_points << " seed=" << spec.seed;
    ds.spec_echo = echo.str();
  }
  for (int j = 0; j < spec.num_subjects; ++j) {
    std::mt19937_64 rng(derive_seed(spec.seed, 0x61C0ULL + static_cast<std::uint64_t>(j)));
    GlucoseParams p = sample_glucose_params(spec, rng);
    std::uniform_real_distribution<double> ut(spec.t_min, spec.t_max);
    std::vector<double> t_train(spec.train_points), t_test(spec.test_points);
    for (double& t : t_train) t = ut(rng);
    for (double& t : t_test) t = ut(rng);
    std::vector<double> all = t_train;
    all.insert(all.end(), t_test.begin(), t_test.end());
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
    std::vector<double> sorted;
    for (std::size_t i : order) sorted.push_back(all[i]);
    std::vector<double> g_sorted = glucose_solution(spec, p, sorted, j);
    std::vector<double> g(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) g[order[i]] = g_sorted[i];

    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sd = std::sqrt(spec.noise_variance);
    Task t;
    t.X.resize(spec.train_points, 1);
    t.y.resize(spec.train_points);
    for (int i = 0; i < spec.train_points; ++i) {
      t.X(i, 0) = t_train[static_cast<std::size_t>(i)];
      t.y[i] = g[static_cast<std::size_t>(i)] + sd * gauss(rng);
    }
    Eigen::MatrixXd tx(spec.test_points, 1);
    Eigen::VectorXd ty(spec.test_points);
    for (int i = 0; i < spec.test_points; ++i) {
      tx(i, 0) = t_test[static_cast<std::size_t>(i)];
      ty[i] = g[static_cast<std::size_t>(spec.train_points + i)] + sd * gauss(rng);
    }
    ds.tasks.push_back(std::move(t));
    ds.test_X.push_back(std::move(tx));
    ds.test_y.push_back(std::move(ty));
    ds.labels.push_back(-1);
  }
  return ds;
}

}  // namespace mtgp

#endif
