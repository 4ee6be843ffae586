#ifndef MTGP_LINALG_HPP
#define MTGP_LINALG_HPP

#include <Eigen/Dense>
#include <numeric>
#include <vector>

#include "mtgp/common.hpp"

namespace mtgp {

// Cholesky factor of a (possibly jittered) SPD matrix. Records the jitter
// that was actually added to the diagonal so runs stay auditable.
struct CholFactor {
  Eigen::MatrixXd L;   // lower triangular
  double jitter = 0.0; // absolute value added to the diagonal

  Eigen::Index dim() const { return L.rows(); }

  double logdet() const {
    return 2.0 * L.diagonal().array().log().sum();
  }

  // (L L^T)^{-1} b
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const {
    Eigen::MatrixXd x = L.triangularView<Eigen::Lower>().solve(b);
    L.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
    return x;
  }

  // L^{-1} b
  Eigen::MatrixXd half_solve(const Eigen::MatrixXd& b) const {
    return L.triangularView<Eigen::Lower>().solve(b);
  }
};

// Factor mat + j*I for the smallest jitter in the escalation schedule
// {0, 1e-10, 1e-8, 1e-6} (relative to the mean diagonal) that succeeds.
inline CholFactor chol(const Eigen::MatrixXd& mat) {
  if (mat.rows() != mat.cols())
    throw NonSymmetric("chol: matrix is not square");
  const double scale = std::max(1.0, mat.cwiseAbs().maxCoeff());
  if ((mat - mat.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw NonSymmetric("chol: matrix is not symmetric");

  const double mean_diag = mat.diagonal().cwiseAbs().mean();
  const double base = mean_diag > 0.0 ? mean_diag : 1.0;
  static constexpr double kSchedule[] = {0.0, 1e-10, 1e-8, 1e-6};
  for (double level : kSchedule) {
    const double j = level * base;
    Eigen::MatrixXd m = mat;
    if (j > 0.0) m.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success &&
        (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all()) {
      return CholFactor{llt.matrixL(), j};
    }
  }
  throw NotPositiveDefinite("chol: not positive definite at any jitter level");
}

// Ordered list of per-task square blocks of a block-diagonal matrix.
class BlockDiag {
 public:
  BlockDiag() = default;
  explicit BlockDiag(std::vector<Eigen::MatrixXd> blocks) : blocks_(std::move(blocks)) {
    for (const auto& b : blocks_) {
      if (b.rows() != b.cols())
        throw DimensionMismatch("BlockDiag: block is not square");
      if ((b - b.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, b.cwiseAbs().maxCoeff()))
        throw NonSymmetric("BlockDiag: block is not symmetric");
      dim_ += b.rows();
    }
  }

  const std::vector<Eigen::MatrixXd>& blocks() const { return blocks_; }
  Eigen::Index dim() const { return dim_; }
  std::size_t count() const { return blocks_.size(); }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim_, dim_);
    Eigen::Index off = 0;
    for (const auto& b : blocks_) {
      out.block(off, off, b.rows(), b.cols()) = b;
      off += b.rows();
    }
    return out;
  }

 private:
  std::vector<Eigen::MatrixXd> blocks_;
  Eigen::Index dim_ = 0;
};

// Factored form of (Lambda Kmm^{-1} Lambda^T + Khat)^{-1} where Khat is block
// diagonal. Never materializes the N x N inverse.
struct WoodburyFactor {
  std::vector<CholFactor> block_chol;      // factors of Khat blocks
  CholFactor kmm_chol;                     // factor of Kmm
  CholFactor phi_chol;                     // factor of Phi = Kmm + Lambda^T Khat^{-1} Lambda
  Eigen::MatrixXd khat_inv_lambda;         // Khat^{-1} Lambda (N x m)
  std::vector<Eigen::Index> offsets;
  Eigen::Index n = 0;

  Eigen::MatrixXd khat_solve(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd out(rhs.rows(), rhs.cols());
    for (std::size_t j = 0; j < block_chol.size(); ++j) {
      const auto nb = block_chol[j].dim();
      out.middleRows(offsets[j], nb) = block_chol[j].solve(rhs.middleRows(offsets[j], nb));
    }
    return out;
  }

  Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& rhs) const {
    Eigen::MatrixXd u = khat_solve(rhs);
    Eigen::MatrixXd w = phi_chol.solve(khat_inv_lambda.transpose() * rhs);
    return u - khat_inv_lambda * w;
  }

  // log|Lambda Kmm^{-1} Lambda^T + Khat| via the matrix determinant lemma.
  double logdet() const {
    double ld = phi_chol.logdet() - kmm_chol.logdet();
    for (const auto& c : block_chol) ld += c.logdet();
    return ld;
  }
};

inline WoodburyFactor woodbury_factor(const BlockDiag& blocks,
                                      const Eigen::MatrixXd& lambda,
                                      const Eigen::MatrixXd& kmm) {
  if (lambda.rows() != blocks.dim() || lambda.cols() != kmm.rows())
    throw DimensionMismatch("woodbury: inconsistent dimensions");
  WoodburyFactor f;
  f.n = blocks.dim();
  f.kmm_chol = chol(kmm);
  Eigen::Index off = 0;
  f.khat_inv_lambda.resize(f.n, lambda.cols());
  for (const auto& b : blocks.blocks()) {
    f.offsets.push_back(off);
    f.block_chol.push_back(chol(b));
    f.khat_inv_lambda.middleRows(off, b.rows()) =
        f.block_chol.back().solve(lambda.middleRows(off, b.rows()));
    off += b.rows();
  }
  Eigen::MatrixXd phi = kmm + lambda.transpose() * f.khat_inv_lambda;
  phi = 0.5 * (phi + phi.transpose());
  f.phi_chol = chol(phi);
  return f;
}

// (Lambda Kmm^{-1} Lambda^T + Khat)^{-1} rhs
inline Eigen::MatrixXd woodbury_inverse_apply(const BlockDiag& blocks,
                                              const Eigen::MatrixXd& lambda,
                                              const Eigen::MatrixXd& kmm,
                                              const Eigen::MatrixXd& rhs) {
  if (rhs.rows() != blocks.dim())
    throw DimensionMismatch("woodbury_inverse_apply: rhs dimension mismatch");
  return woodbury_factor(blocks, lambda, kmm).apply_inverse(rhs);
}

inline double logdet_woodbury(const BlockDiag& blocks,
                              const Eigen::MatrixXd& lambda,
                              const Eigen::MatrixXd& kmm) {
  return woodbury_factor(blocks, lambda, kmm).logdet();
}

}  // namespace mtgp

#endif
