#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mtgp/data.hpp"
#include "mtgp/datagen.hpp"

using namespace mtgp;

TEST_CASE("dataset: lossless round trip") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.d = 2;
  ds.test_noisy = true;
  ds.spec_echo = "unit test";
  for (int j = 0; j < 3; ++j) {
    Task t;
    t.X.resize(4, 2);
    t.y.resize(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
      t.X(i, 0) = gauss(rng) * 1e-3;
      t.X(i, 1) = gauss(rng) * 1e7;
      t.y[i] = gauss(rng);
    }
    if (j == 1) t.noise_variance = 0.123456789012345678;
    ds.tasks.push_back(std::move(t));
    Eigen::MatrixXd tx(2, 2);
    tx << gauss(rng), gauss(rng), gauss(rng), gauss(rng);
    Eigen::VectorXd ty(2);
    ty << gauss(rng), gauss(rng);
    ds.test_X.push_back(tx);
    ds.test_y.push_back(ty);
    ds.labels.push_back(j % 2);
  }
  const std::string text = write_dataset_string(ds);
  Dataset back = read_dataset_string(text);
  REQUIRE(back.num_tasks() == 3);
  CHECK(back.d == 2);
  CHECK(back.test_noisy);
  CHECK(back.spec_echo == "unit test");
  CHECK(back.labels == ds.labels);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK((back.tasks[j].X - ds.tasks[j].X).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.tasks[j].y - ds.tasks[j].y).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.test_X[j] - ds.test_X[j]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.test_y[j] - ds.test_y[j]).cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE(back.tasks[1].noise_variance.has_value());
  CHECK(*back.tasks[1].noise_variance == *ds.tasks[1].noise_variance);
  // idempotent re-serialization
  CHECK(write_dataset_string(back) == text);
}

TEST_CASE("dataset: unknown schema version rejected") {
  CHECK_THROWS_AS(read_dataset_string("# mtgp-dataset v9\n"), SchemaVersionMismatch);
  CHECK_THROWS_AS(read_dataset_string("hello world\n"), IoError);
  CHECK_THROWS_AS(read_dataset_string(""), IoError);
}

TEST_CASE("dataset: empty dataset round trips") {
  Dataset ds;
  Dataset back = read_dataset_string(write_dataset_string(ds));
  CHECK(back.num_tasks() == 0);
}

TEST_CASE("synthetic: seed determinism is bit exact") {
  SyntheticSpec spec;
  spec.num_tasks = 5;
  spec.points_per_task = 3;
  spec.test_grid = 7;
  spec.seed = 99;
  const std::string a = write_dataset_string(sample_mixed_effect(spec));
  const std::string b = write_dataset_string(sample_mixed_effect(spec));
  CHECK(a == b);
}

TEST_CASE("synthetic: invalid specs rejected") {
  SyntheticSpec spec;
  spec.x_min = 1.0;
  spec.x_max = -1.0;
  CHECK_THROWS_AS(sample_mixed_effect(spec), std::invalid_argument);
  SyntheticSpec spec2;
  spec2.num_tasks = 0;
  CHECK_THROWS_AS(sample_mixed_effect(spec2), std::invalid_argument);
}

TEST_CASE("synthetic: zero noise and zero random effect put all tasks on one curve") {
  SyntheticSpec spec;
  spec.num_tasks = 6;
  spec.points_per_task = 4;
  spec.num_centers = 1;
  spec.random_signal_variance = 0.0;
  spec.noise_variance = 0.0;
  spec.test_grid = 20;
  spec.seed = 3;
  Dataset ds = sample_mixed_effect(spec);
  for (std::size_t j = 1; j < ds.num_tasks(); ++j) {
    CHECK((ds.test_y[j] - ds.test_y[0]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("synthetic: labels round-robin over centers and shapes correct") {
  SyntheticSpec spec;
  spec.num_tasks = 7;
  spec.num_centers = 3;
  spec.points_per_task = 2;
  spec.test_grid = 5;
  Dataset ds = sample_mixed_effect(spec);
  REQUIRE(ds.labels.size() == 7);
  for (int j = 0; j < 7; ++j) CHECK(ds.labels[j] == j % 3);
  for (const auto& t : ds.tasks) {
    CHECK(t.X.rows() == 2);
    CHECK((t.X.array() >= spec.x_min).all());
    CHECK((t.X.array() <= spec.x_max).all());
  }
  CHECK(ds.test_X[0].rows() == 5);
  CHECK_FALSE(ds.test_noisy);
}

TEST_CASE("synthetic: random-effect variance matches kernel variance (MC)") {
  // 10^4 independent task draws at one location; empirical variance of the
  // random effect must match 0.25 within 3 standard errors.
  SyntheticSpec spec;
  spec.num_tasks = 1;
  spec.points_per_task = 1;
  spec.test_grid = 1;
  spec.fixed_signal_variance = 1e-12;  // suppress the shared curve
  spec.noise_variance = 0.0;
  const int n = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    spec.seed = static_cast<std::uint64_t>(i) + 1;
    Dataset ds = sample_mixed_effect(spec);
    const double v = ds.test_y[0][0];
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double se = 0.25 * std::sqrt(2.0 / n);
  CHECK(std::abs(var - 0.25) < 3.0 * se + 1e-5);
}

TEST_CASE("synthetic: empirical Gram of fixed-effect draws converges to the kernel (MC)") {
  SeKernelParams fixed = SeKernelParams::make(1.0, 1.0);
  Eigen::MatrixXd pts(3, 1);
  pts << -1.0, 0.0, 2.0;
  const int n = 20000;
  std::mt19937_64 rng(77);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd f = detail::gp_draw(fixed, pts, rng);
    gram += f * f.transpose();
  }
  gram /= static_cast<double>(n);
  Eigen::MatrixXd k = se_cov(fixed, pts, pts);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      // Var[f_a f_b] = k_aa k_bb + k_ab^2 for zero-mean Gaussians
      const double se = std::sqrt((k(a, a) * k(b, b) + k(a, b) * k(a, b)) / n);
      CHECK(std::abs(gram(a, b) - k(a, b)) < 3.0 * se + 1e-4);
    }
}

TEST_CASE("glucose: control subject stays exactly at basal glucose") {
  GlucoseSpec spec;
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    GlucoseParams p = sample_glucose_params(spec, rng);
    p.control = true;
    std::vector<double> g = glucose_solution(spec, p, {1.0, 50.0, 120.0, 240.0});
    for (double v : g) CHECK(v == 84.0);
  }
}

TEST_CASE("glucose: solution matches fine-grid RK4 oracle") {
  GlucoseSpec spec;
  GlucoseParams p;
  p.sg = 2.67e-2;
  p.si = 6.42e-4;
  p.p2 = 4.82e-2;
  p.v = 1.64;
  p.spike_sd = 0.5;

  // independent fixed-step RK4 at h = 1e-3 over [0, 240]
  auto rhs = [&](double t, double g, double x, double& dg, double& dx) {
    const double insulin = 11.0 + 100.0 * (1.0 - std::exp(-t / 1.5)) * std::exp(-t / 40.0);
    const double delta =
        t >= 0.0 ? 2.0 / (p.spike_sd * std::sqrt(2.0 * M_PI)) *
                       std::exp(-0.5 * t * t / (p.spike_sd * p.spike_sd))
                 : 0.0;
    dg = -(p.sg + x) * g + p.sg * 84.0 + delta * 300.0 / p.v;
    dx = -p.p2 * x + p.p2 * p.si * (insulin - 11.0);
  };
  double g = 84.0, x = 0.0, t = 0.0;
  const double h = 1e-3;
  const int steps = static_cast<int>(std::round(240.0 / h));
  for (int i = 0; i < steps; ++i) {
    double k1g, k1x, k2g, k2x, k3g, k3x, k4g, k4x;
    rhs(t, g, x, k1g, k1x);
    rhs(t + h / 2, g + h / 2 * k1g, x + h / 2 * k1x, k2g, k2x);
    rhs(t + h / 2, g + h / 2 * k2g, x + h / 2 * k2x, k3g, k3x);
    rhs(t + h, g + h * k3g, x + h * k3x, k4g, k4x);
    g += h / 6 * (k1g + 2 * k2g + 2 * k3g + k4g);
    x += h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x);
    t += h;
  }
  std::vector<double> got = glucose_solution(spec, p, {240.0});
  CHECK(std::abs(got[0] - g) / std::abs(g) < 1e-5);
}

TEST_CASE("glucose: cohort generation shapes, determinism, positivity") {
  GlucoseSpec spec;
  spec.num_subjects = 4;
  spec.seed = 21;
  Dataset a = simulate_glucose(spec);
  Dataset b = simulate_glucose(spec);
  CHECK(write_dataset_string(a) == write_dataset_string(b));
  REQUIRE(a.num_tasks() == 4);
  CHECK(a.test_noisy);
  for (std::size_t j = 0; j < a.num_tasks(); ++j) {
    CHECK(a.tasks[j].X.rows() == 5);
    CHECK(a.test_X[j].rows() == 10);
    CHECK((a.tasks[j].X.array() >= 1.0).all());
    CHECK((a.tasks[j].X.array() <= 240.0).all());
  }
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    GlucoseParams p = sample_glucose_params(spec, rng);
    CHECK(p.sg > 0.0);
    CHECK(p.si > 0.0);
    CHECK(p.p2 > 0.0);
    CHECK(p.v > 0.0);
  }
}

TEST_CASE("glucose: invalid inputs rejected") {
  GlucoseSpec bad;
  bad.t_min = 300.0;
  CHECK_THROWS_AS(simulate_glucose(bad), std::invalid_argument);
  GlucoseSpec spec;
  GlucoseParams p;
  p.sg = 1e-2;
  p.p2 = 1e-2;
  p.si = 1e-4;
  p.v = 1.0;
  CHECK_THROWS_AS(glucose_solution(spec, p, {10.0, 5.0}), std::invalid_argument);
  CHECK_THROWS_AS(glucose_solution(spec, p, {-1.0}), std::invalid_argument);
}
