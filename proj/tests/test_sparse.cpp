#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mtgp/baselines.hpp"
#include "mtgp/sparse.hpp"
#include "oracle.hpp"

using namespace mtgp;

namespace {

// All distinct training inputs, stacked as one inducing set.
InducingSet full_inducing(const std::vector<Task>& tasks) {
  std::vector<Eigen::RowVectorXd> rows;
  for (const auto& t : tasks)
    for (Eigen::Index i = 0; i < t.X.rows(); ++i) {
      bool dup = false;
      for (const auto& r : rows)
        if ((r - t.X.row(i)).cwiseAbs().maxCoeff() < 1e-12) { dup = true; break; }
      if (!dup) rows.push_back(t.X.row(i));
    }
  InducingSet s;
  s.X.resize(static_cast<Eigen::Index>(rows.size()), tasks.front().X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    s.X.row(static_cast<Eigen::Index>(i)) = rows[i];
  return s;
}

}  // namespace

TEST_CASE("bound: equals the exact log-likelihood at sufficiency") {
  std::mt19937_64 rng(301);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> um(1, 5);
    // wide input span keeps the inducing Gram well conditioned at sufficiency
    auto tasks = oracle::random_tasks(um(rng), 5, 1, rng, 30.0);
    Hyper hyper = oracle::random_hyper(1, rng);
    InducingSet ind = full_inducing(tasks);
    const double fv = bound_value(tasks, ind, hyper);
    const double ll = direct_loglik(tasks, hyper);
    CHECK(std::abs(fv - ll) < 1e-6);
  }
}

TEST_CASE("bound: never exceeds the exact log-likelihood") {
  std::mt19937_64 rng(302);
  for (int trial = 0; trial < 20; ++trial) {
    auto tasks = oracle::random_tasks(3, 4, 1, rng);
    Hyper hyper = oracle::random_hyper(1, rng);
    InducingSet ind = oracle::random_inducing(2, 1, rng);
    CHECK(bound_value(tasks, ind, hyper) <= direct_loglik(tasks, hyper) + 1e-10);
  }
}

TEST_CASE("bound: reduces to the single-task sparse GP bound") {
  // Random effect shrunk to numerical zero: the bound must equal the
  // independently hand-rolled single-task bound with noise sigma^2.
  std::mt19937_64 rng(303);
  auto tasks = oracle::random_tasks(1, 5, 1, rng);
  tasks[0].X.resize(5, 1);
  tasks[0].y.resize(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    tasks[0].X(i, 0) = -2.0 + i;
    tasks[0].y[i] = gauss(rng);
  }
  Hyper hyper;
  hyper.fixed.push_back(SeKernelParams::make(1.3, 0.8));
  hyper.random_effect = SeKernelParams::make(1e-14, 1.0);
  hyper.noise.log_noise_variance = std::log(0.3);
  InducingSet ind = oracle::random_inducing(3, 1, rng);
  const double got = bound_value(tasks, ind, hyper);
  const double want =
      oracle::titsias_bound(tasks[0].X, tasks[0].y, ind.X, hyper.fixed[0], 0.3 + 1e-14);
  CHECK(std::abs(got - want) / std::abs(want) < 1e-8);
}

TEST_CASE("bound gradient: finite-difference agreement for every coordinate class") {
  std::mt19937_64 rng(304);
  const double h = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 1 + trial % 2;
    auto tasks = oracle::random_tasks(3, 4, d, rng);
    if (trial == 2) tasks[1].noise_variance = 0.45;  // per-task override path
    Hyper hyper = oracle::random_hyper(d, rng);
    std::vector<InducingSet> ind{oracle::random_inducing(3, d, rng)};
    ind[0].learnable = true;
    ParamLayout layout = ParamLayout::build(hyper, ind, true);
    Eigen::VectorXd x = layout.pack(hyper, ind);
    const bool trace = trial % 2 == 0;

    BoundResult res = grouped_bound(tasks, ind, hyper,
                                    unit_responsibilities(tasks.size()), trace, &layout);
    Hyper h2 = hyper;
    std::vector<InducingSet> i2 = ind;
    for (Eigen::Index c = 0; c < x.size(); ++c) {
      Eigen::VectorXd xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      layout.unpack(xp, h2, i2);
      const double fp = grouped_bound(tasks, i2, h2,
                                      unit_responsibilities(tasks.size()), trace).value;
      layout.unpack(xm, h2, i2);
      const double fm = grouped_bound(tasks, i2, h2,
                                      unit_responsibilities(tasks.size()), trace).value;
      const double fd = (fp - fm) / (2.0 * h);
      const double scale = std::max({1.0, std::abs(fd), std::abs(res.grad[c])});
      CHECK(std::abs(res.grad[c] - fd) / scale < 1e-4);
    }
  }
}

TEST_CASE("bound gradient: inducing coordinates are stationary at sufficiency") {
  std::mt19937_64 rng(305);
  auto tasks = oracle::random_tasks(2, 4, 1, rng, 15.0);
  Hyper hyper = oracle::random_hyper(1, rng);
  std::vector<InducingSet> ind{full_inducing(tasks)};
  ind[0].learnable = true;
  ParamLayout layout = ParamLayout::build(hyper, ind, true);
  BoundResult res = grouped_bound(tasks, ind, hyper, unit_responsibilities(tasks.size()),
                                  true, &layout);
  for (std::size_t i = 0; i < layout.coords.size(); ++i)
    if (layout.coords[i].kind == CoordKind::Inducing)
      CHECK(std::abs(res.grad[static_cast<Eigen::Index>(i)]) < 1e-6);
}

TEST_CASE("bound: monotone in nested inducing sets") {
  std::mt19937_64 rng(306);
  auto tasks = oracle::random_tasks(1, 5, 1, rng);
  Hyper hyper = oracle::random_hyper(1, rng);
  InducingSet all = full_inducing(tasks);
  double prev = -std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 1; m <= all.X.rows(); ++m) {
    InducingSet sub;
    sub.X = all.X.topRows(m);
    const double b = bound_value(tasks, sub, hyper);
    CHECK(b >= prev - 1e-8);
    prev = b;
  }
}

TEST_CASE("inducing_posterior: huge noise reverts to the prior") {
  std::mt19937_64 rng(307);
  auto tasks = oracle::random_tasks(2, 3, 1, rng);
  Hyper hyper = oracle::random_hyper(1, rng);
  hyper.noise.log_noise_variance = std::log(1e6);
  InducingSet ind = oracle::random_inducing(3, 1, rng);
  InducingPosterior post = inducing_posterior(tasks, ind, hyper);
  Eigen::MatrixXd kmm = se_cov(hyper.fixed[0], ind.X, ind.X);
  CHECK(post.mean.cwiseAbs().maxCoeff() < 1e-3);
  CHECK((post.cov - kmm).cwiseAbs().maxCoeff() / kmm.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("inducing_posterior: single task at its own inputs matches the exact GP") {
  // One task, random effect off, inducing points = training inputs: the
  // posterior over inducing values is the textbook GP posterior.
  std::mt19937_64 rng(308);
  std::vector<Task> tasks(1);
  tasks[0].X.resize(4, 1);
  tasks[0].X << -2.0, -0.5, 1.0, 2.5;
  tasks[0].y.resize(4);
  tasks[0].y << 0.7, -0.2, 1.4, -0.9;
  Hyper hyper;
  hyper.fixed.push_back(SeKernelParams::make(1.0, 1.0));
  hyper.random_effect = SeKernelParams::make(1e-14, 1.0);
  hyper.noise.log_noise_variance = std::log(0.2);
  InducingSet ind;
  ind.X = tasks[0].X;
  InducingPosterior post = inducing_posterior(tasks, ind, hyper);
  Eigen::MatrixXd k = se_cov(hyper.fixed[0], ind.X, ind.X);
  Eigen::MatrixXd ky = k + (0.2 + 1e-14) * Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd mean = k * ky.inverse() * tasks[0].y;
  Eigen::MatrixXd cov = k - k * ky.inverse() * k;
  CHECK((post.mean - mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((post.cov - cov).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("inducing_posterior: matches the dense reference on random instances") {
  std::mt19937_64 rng(309);
  for (int trial = 0; trial < 10; ++trial) {
    auto tasks = oracle::random_tasks(3, 4, 1, rng);
    Hyper hyper = oracle::random_hyper(1, rng);
    InducingSet ind = oracle::random_inducing(3, 1, rng);
    InducingPosterior got = inducing_posterior(tasks, ind, hyper);
    InducingPosterior want = oracle::dense_posterior(
        tasks, ind.X, hyper.fixed[0], hyper,
        Eigen::VectorXd::Ones(static_cast<Eigen::Index>(tasks.size())));
    CHECK((got.mean - want.mean).norm() / std::max(1.0, want.mean.norm()) < 1e-8);
    CHECK((got.cov - want.cov).norm() / want.cov.norm() < 1e-8);
  }
}

TEST_CASE("bound and gradient: match the dense reference on random instances") {
  std::mt19937_64 rng(310);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 1 + trial % 2;
    auto tasks = oracle::random_tasks(3, 4, d, rng);
    Hyper hyper = oracle::random_hyper(d, rng);
    std::vector<InducingSet> ind{oracle::random_inducing(3, d, rng)};
    ind[0].learnable = true;
    ParamLayout layout = ParamLayout::build(hyper, ind, true);
    Eigen::MatrixXd R = unit_responsibilities(tasks.size());
    BoundResult got = grouped_bound(tasks, ind, hyper, R, true, &layout);
    const double want = oracle::dense_bound(tasks, ind, hyper, R);
    CHECK(std::abs(got.value - want) / std::max(1.0, std::abs(want)) < 1e-8);
    Eigen::VectorXd gwant = oracle::dense_grad(tasks, ind, hyper, R, true, layout);
    CHECK((got.grad - gwant).cwiseAbs().maxCoeff() /
              std::max(1.0, gwant.cwiseAbs().maxCoeff()) < 1e-8);
  }
}

TEST_CASE("predict_task: interpolates through data in the noiseless limit") {
  std::mt19937_64 rng(311);
  std::vector<Task> tasks(1);
  tasks[0].X.resize(4, 1);
  tasks[0].X << -2.0, -0.7, 0.4, 1.9;
  tasks[0].y.resize(4);
  tasks[0].y << 0.3, -0.8, 0.5, 1.1;
  Hyper hyper;
  hyper.fixed.push_back(SeKernelParams::make(1.0, 1.0));
  hyper.random_effect = SeKernelParams::make(0.25, 1.0);
  hyper.noise.log_noise_variance = std::log(1e-8);
  InducingSet ind;
  ind.X = tasks[0].X;
  InducingPosterior post = inducing_posterior(tasks, ind, hyper);
  PredictiveDistribution p = predict_task(0, tasks[0].X, tasks, ind, hyper, post);
  CHECK((p.mean - tasks[0].y).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(p.var.maxCoeff() < 1e-3);
}

TEST_CASE("predict_task: matches the exact predictive at sufficiency") {
  std::mt19937_64 rng(312);
  for (int trial = 0; trial < 5; ++trial) {
    auto tasks = oracle::random_tasks(3, 4, 1, rng, 20.0);
    Hyper hyper = oracle::random_hyper(1, rng);
    InducingSet ind = full_inducing(tasks);
    InducingPosterior post = inducing_posterior(tasks, ind, hyper);
    Eigen::MatrixXd xs(3, 1);
    xs << -3.0, 0.2, 2.7;
    PredictiveDistribution got = predict_task(1, xs, tasks, ind, hyper, post);
    PredictiveDistribution want = direct_predict(1, xs, tasks, hyper);
    CHECK((got.mean - want.mean).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((got.var - want.var).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("predict_task: far from all data the variance reverts to the prior") {
  std::mt19937_64 rng(313);
  auto tasks = oracle::random_tasks(2, 3, 1, rng);
  Hyper hyper = oracle::random_hyper(1, rng);
  InducingSet ind = oracle::random_inducing(3, 1, rng);
  InducingPosterior post = inducing_posterior(tasks, ind, hyper);
  Eigen::MatrixXd xs(1, 1);
  xs << 500.0;
  PredictiveDistribution p = predict_task(0, xs, tasks, ind, hyper, post);
  const double prior = hyper.fixed[0].signal_variance() +
                       hyper.random_effect.signal_variance();
  CHECK(std::abs(p.mean[0]) < 1e-6);
  CHECK(std::abs(p.var[0] - prior) / prior < 1e-6);
}

TEST_CASE("predict_task: cross-covariance between effects matches Monte Carlo") {
  // Draw inducing values from the posterior, propagate both conditional means,
  // and check the analytic fixed/random cross term against the sample
  // covariance.
  std::mt19937_64 rng(314);
  auto tasks = oracle::random_tasks(2, 3, 1, rng);
  Hyper hyper = oracle::random_hyper(1, rng);
  InducingSet ind = oracle::random_inducing(3, 1, rng);
  InducingPosterior post = inducing_posterior(tasks, ind, hyper);

  const Task& t = tasks[0];
  Eigen::MatrixXd xs(1, 1);
  xs << 0.4;
  const SeKernelParams& fx = hyper.fixed[0];
  const SeKernelParams& rd = hyper.random_effect;
  Eigen::MatrixXd kmm = se_cov(fx, ind.X, ind.X);
  Eigen::MatrixXd kmm_inv = kmm.inverse();
  Eigen::MatrixXd H = se_cov(fx, xs, ind.X) * kmm_inv;        // 1 x m
  Eigen::MatrixXd G = se_cov(fx, t.X, ind.X) * kmm_inv;       // Nj x m
  Eigen::MatrixXd khat = se_cov(rd, t.X, t.X);
  khat.diagonal().array() += hyper.task_noise(t);
  Eigen::MatrixXd F = se_cov(rd, xs, t.X) * khat.inverse();   // 1 x Nj
  const double analytic = -(H * post.cov * G.transpose() * F.transpose())(0, 0);

  Eigen::LLT<Eigen::MatrixXd> llt(post.cov);
  Eigen::MatrixXd L = llt.matrixL();
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 1000000;
  double sa = 0.0, sb = 0.0, sab = 0.0, saa = 0.0, sbb = 0.0, sa2b2 = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd z(ind.X.rows());
    for (Eigen::Index q = 0; q < z.size(); ++q) z[q] = gauss(rng);
    Eigen::VectorXd fm = post.mean + L * z;
    const double a = (H * fm)(0);               // E[fbar(x*) | fm]
    const double b = (F * (t.y - G * fm))(0);   // E[ftilde(x*) | fm, D]
    sa += a;
    sb += b;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
    sa2b2 += a * a * b * b;
  }
  const double ma = sa / n, mb = sb / n;
  const double cov_mc = sab / n - ma * mb;
  // standard error of the sample covariance
  const double var_ab = sa2b2 / n - (sab / n) * (sab / n);
  const double se = std::sqrt(std::max(var_ab, 1e-30) / n);
  CHECK(std::abs(cov_mc - analytic) < 3.0 * se + 1e-6);
}

TEST_CASE("sparse API: error conditions") {
  std::mt19937_64 rng(315);
  auto tasks = oracle::random_tasks(2, 3, 1, rng);
  Hyper hyper = oracle::random_hyper(1, rng);
  std::vector<InducingSet> ind{oracle::random_inducing(2, 1, rng)};
  CHECK_THROWS_AS(grouped_bound({}, ind, hyper, Eigen::MatrixXd::Ones(0, 1)), EmptyTask);
  CHECK_THROWS_AS(grouped_bound(tasks, ind, hyper, Eigen::MatrixXd::Ones(3, 1)),
                  DimensionMismatch);
  InducingPosterior post = inducing_posterior(tasks, ind[0], hyper);
  CHECK_THROWS_AS(predict_task(7, Eigen::MatrixXd::Zero(1, 1), tasks, ind[0], hyper, post),
                  UnknownTask);
}
