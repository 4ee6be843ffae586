#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "mtgp/linalg.hpp"

using namespace mtgp;

namespace {

Eigen::MatrixXd random_spd(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = gauss(rng);
  Eigen::MatrixXd m = a * a.transpose();
  m.diagonal().array() += 0.5;
  return m;
}

}  // namespace

TEST_CASE("chol: identity is its own factor with zero jitter") {
  CholFactor f = chol(Eigen::MatrixXd::Identity(3, 3));
  CHECK(f.jitter == 0.0);
  CHECK((f.L - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(f.logdet() == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("chol: hand-computed 2x2 factor") {
  Eigen::MatrixXd m(2, 2);
  m << 4.0, 2.0, 2.0, 3.0;
  CholFactor f = chol(m);
  CHECK(f.L(0, 0) == Catch::Approx(2.0));
  CHECK(f.L(1, 0) == Catch::Approx(1.0));
  CHECK(f.L(1, 1) == Catch::Approx(std::sqrt(2.0)));
  CHECK(f.L(0, 1) == 0.0);
  Eigen::MatrixXd rec = f.L * f.L.transpose();
  CHECK((rec - m).norm() / m.norm() < 1e-10);
}

TEST_CASE("chol: rank-deficient input succeeds only with recorded jitter") {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 1.0, 1.0, 1.0;
  CholFactor f = chol(m);
  CHECK(f.jitter > 0.0);
  CHECK((f.L.diagonal().array() > 0.0).all());
}

TEST_CASE("chol: error conditions") {
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(chol(asym), NonSymmetric);
  CHECK_THROWS_AS(chol(Eigen::MatrixXd::Zero(2, 3)), NonSymmetric);
  Eigen::MatrixXd npd(2, 2);
  npd << 1.0, 0.0, 0.0, -5.0;
  CHECK_THROWS_AS(chol(npd), NotPositiveDefinite);
}

TEST_CASE("chol: deterministic") {
  std::mt19937_64 rng(7);
  Eigen::MatrixXd m = random_spd(6, rng);
  CholFactor a = chol(m);
  CholFactor b = chol(m);
  CHECK(a.jitter == b.jitter);
  CHECK((a.L - b.L).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("BlockDiag: validation and dense assembly") {
  std::mt19937_64 rng(3);
  std::vector<Eigen::MatrixXd> blocks{random_spd(2, rng), random_spd(3, rng)};
  BlockDiag bd(blocks);
  CHECK(bd.dim() == 5);
  CHECK(bd.count() == 2);
  Eigen::MatrixXd dense = bd.dense();
  CHECK((dense.block(0, 0, 2, 2) - blocks[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(dense.block(0, 2, 2, 3).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(BlockDiag({Eigen::MatrixXd::Zero(2, 3)}), DimensionMismatch);
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(BlockDiag({asym}), NonSymmetric);
}

TEST_CASE("woodbury_inverse_apply: zero low-rank part equals blockwise solve") {
  std::mt19937_64 rng(11);
  std::vector<Eigen::MatrixXd> blocks{random_spd(3, rng), random_spd(2, rng)};
  BlockDiag bd(blocks);
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(5, 2);
  Eigen::MatrixXd kmm = random_spd(2, rng);
  Eigen::VectorXd rhs(5);
  rhs << 1.0, -2.0, 0.5, 3.0, -1.0;
  Eigen::VectorXd got = woodbury_inverse_apply(bd, lambda, kmm, rhs);
  Eigen::VectorXd want = chol(bd.dense()).solve(rhs);
  CHECK((got - want).norm() / want.norm() < 1e-10);
}

TEST_CASE("woodbury_inverse_apply: zero rhs gives zero") {
  std::mt19937_64 rng(12);
  BlockDiag bd({random_spd(3, rng), random_spd(3, rng)});
  Eigen::MatrixXd lambda(6, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) lambda(i, j) = gauss(rng);
  Eigen::MatrixXd kmm = random_spd(2, rng);
  Eigen::VectorXd got = woodbury_inverse_apply(bd, lambda, kmm, Eigen::VectorXd::Zero(6));
  CHECK(got.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("woodbury: two-task instance matches dense oracle") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  BlockDiag bd({random_spd(3, rng), random_spd(3, rng)});
  Eigen::MatrixXd lambda(6, 2);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) lambda(i, j) = gauss(rng);
  Eigen::MatrixXd kmm = random_spd(2, rng);
  Eigen::VectorXd rhs(6);
  for (Eigen::Index i = 0; i < 6; ++i) rhs[i] = gauss(rng);

  Eigen::MatrixXd dense = bd.dense() + lambda * chol(kmm).solve(lambda.transpose());
  dense = 0.5 * (dense + dense.transpose());
  Eigen::VectorXd want = chol(dense).solve(rhs);
  Eigen::VectorXd got = woodbury_inverse_apply(bd, lambda, kmm, rhs);
  CHECK((got - want).norm() / want.norm() < 1e-8);
  CHECK(logdet_woodbury(bd, lambda, kmm) ==
        Catch::Approx(chol(dense).logdet()).margin(1e-8));
}

TEST_CASE("logdet_woodbury: trivial and scaling cases") {
  BlockDiag ident({Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)});
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(4, 1);
  Eigen::MatrixXd kmm = Eigen::MatrixXd::Identity(1, 1);
  CHECK(logdet_woodbury(ident, lambda, kmm) == Catch::Approx(0.0).margin(1e-12));

  const double c = 3.7;
  BlockDiag scaled({c * Eigen::MatrixXd::Identity(2, 2), c * Eigen::MatrixXd::Identity(2, 2)});
  CHECK(logdet_woodbury(scaled, lambda, kmm) ==
        Catch::Approx(4.0 * std::log(c)).margin(1e-10));
}

TEST_CASE("woodbury property: dense agreement on random instances up to dim 50") {
  std::mt19937_64 rng(101);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> nb(1, 4);
  std::uniform_int_distribution<int> bs(1, 13);
  std::uniform_int_distribution<int> ms(1, 5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Eigen::MatrixXd> blocks;
    Eigen::Index n = 0;
    const int k = nb(rng);
    for (int b = 0; b < k && n < 50; ++b) {
      const Eigen::Index sz = std::min<Eigen::Index>(bs(rng), 50 - n);
      if (sz == 0) break;
      blocks.push_back(random_spd(sz, rng));
      n += sz;
    }
    BlockDiag bd(blocks);
    const Eigen::Index m = ms(rng);
    Eigen::MatrixXd lambda(bd.dim(), m);
    for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda.data()[i] = gauss(rng);
    Eigen::MatrixXd kmm = random_spd(m, rng);
    Eigen::VectorXd rhs(bd.dim());
    for (Eigen::Index i = 0; i < rhs.size(); ++i) rhs[i] = gauss(rng);

    Eigen::MatrixXd dense = bd.dense() + lambda * chol(kmm).solve(lambda.transpose());
    dense = 0.5 * (dense + dense.transpose());
    Eigen::VectorXd want = chol(dense).solve(rhs);
    Eigen::VectorXd got = woodbury_inverse_apply(bd, lambda, kmm, rhs);
    CHECK((got - want).norm() / std::max(1.0, want.norm()) < 1e-8);
    const double ld_dense = chol(dense).logdet();
    CHECK(std::abs(logdet_woodbury(bd, lambda, kmm) - ld_dense) /
              std::max(1.0, std::abs(ld_dense)) < 1e-8);
  }
}

TEST_CASE("woodbury: dimension mismatches rejected") {
  std::mt19937_64 rng(5);
  BlockDiag bd({random_spd(2, rng)});
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(3, 1);
  Eigen::MatrixXd kmm = Eigen::MatrixXd::Identity(1, 1);
  CHECK_THROWS_AS(woodbury_factor(bd, lambda, kmm), DimensionMismatch);
  Eigen::MatrixXd lam_ok = Eigen::MatrixXd::Zero(2, 1);
  CHECK_THROWS_AS(woodbury_inverse_apply(bd, lam_ok, kmm, Eigen::VectorXd::Zero(3)),
                  DimensionMismatch);
}
