#ifndef MTGP_KERNELS_HPP
#define MTGP_KERNELS_HPP

#include <Eigen/Dense>
#include <vector>

#include "mtgp/common.hpp"

namespace mtgp {

// Squared-exponential (ARD) kernel parameters, stored in log space so that
// unconstrained optimization keeps them positive.
struct SeKernelParams {
  double log_signal_variance = 0.0;
  Eigen::VectorXd log_lengthscale;  // one entry per input dimension

  static SeKernelParams make(double signal_variance, double lengthscale, int d = 1) {
    SeKernelParams p;
    p.log_signal_variance = std::log(signal_variance);
    p.log_lengthscale = Eigen::VectorXd::Constant(d, std::log(lengthscale));
    return p;
  }

  double signal_variance() const { return std::exp(log_signal_variance); }
  Eigen::VectorXd lengthscale() const { return log_lengthscale.array().exp(); }
  int dim() const { return static_cast<int>(log_lengthscale.size()); }
};

struct NoiseParams {
  double log_noise_variance = 0.0;
  bool shared = true;  // shared sigma^2 across tasks unless a task overrides it

  double noise_variance() const { return std::exp(log_noise_variance); }
};

// k(a,b) = s^2 exp(-sum_r (a_r-b_r)^2 / (2 l_r^2))
inline Eigen::MatrixXd se_cov(const SeKernelParams& params,
                              const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols() || A.cols() != params.dim())
    throw DimensionMismatch("se_cov: input dimensionality mismatch");
  const double s2 = params.signal_variance();
  const Eigen::VectorXd inv_l = (-params.log_lengthscale).array().exp();
  Eigen::MatrixXd As = A * inv_l.asDiagonal();
  Eigen::MatrixXd Bs = B * inv_l.asDiagonal();
  Eigen::MatrixXd d2 = As.rowwise().squaredNorm().replicate(1, B.rows()) +
                       Bs.rowwise().squaredNorm().transpose().replicate(A.rows(), 1) -
                       2.0 * As * Bs.transpose();
  return s2 * (-0.5 * d2.cwiseMax(0.0)).array().exp();
}

enum class SeParam { SignalVariance, Lengthscale };

// Partial derivative of se_cov w.r.t. a log-space hyperparameter.
inline Eigen::MatrixXd se_cov_grad(const SeKernelParams& params,
                                   const Eigen::MatrixXd& A,
                                   const Eigen::MatrixXd& B,
                                   SeParam wrt, int dim_index = 0) {
  Eigen::MatrixXd k = se_cov(params, A, B);
  if (wrt == SeParam::SignalVariance) return k;  // d/d log s^2 = k
  if (dim_index < 0 || dim_index >= params.dim())
    throw UnknownParameter("se_cov_grad: lengthscale index out of range");
  const double l = std::exp(params.log_lengthscale[dim_index]);
  Eigen::MatrixXd diff = A.col(dim_index).replicate(1, B.rows()) -
                         B.col(dim_index).transpose().replicate(A.rows(), 1);
  // d/d log l = k * (a-b)^2 / l^2
  return k.cwiseProduct(diff.cwiseAbs2()) / (l * l);
}

// Partial derivative of se_cov(A, B) w.r.t. A(row, dim). Nonzero only in that
// row; the full matrix is returned for convenience on small instances, a
// sparse accumulation path is used inside the bound gradients.
inline Eigen::MatrixXd se_cov_grad_input(const SeKernelParams& params,
                                         const Eigen::MatrixXd& A,
                                         const Eigen::MatrixXd& B,
                                         int row, int dim_index) {
  if (row < 0 || row >= A.rows() || dim_index < 0 || dim_index >= params.dim())
    throw UnknownParameter("se_cov_grad_input: coordinate out of range");
  Eigen::MatrixXd k = se_cov(params, A, B);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(A.rows(), B.rows());
  const double l = std::exp(params.log_lengthscale[dim_index]);
  for (Eigen::Index c = 0; c < B.rows(); ++c) {
    out(row, c) = k(row, c) * (B(c, dim_index) - A(row, dim_index)) / (l * l);
  }
  return out;
}

// Full mixed-effect covariance on concatenated task inputs: fixed-effect
// kernel everywhere, random-effect kernel added on same-task blocks only.
inline Eigen::MatrixXd mixed_effect_cov(const SeKernelParams& fixed,
                                        const SeKernelParams& random_effect,
                                        const std::vector<Eigen::MatrixXd>& task_inputs) {
  Eigen::Index n = 0;
  for (const auto& x : task_inputs) n += x.rows();
  Eigen::MatrixXd all(n, task_inputs.empty() ? fixed.dim() : task_inputs.front().cols());
  Eigen::Index off = 0;
  for (const auto& x : task_inputs) {
    if (x.cols() != all.cols())
      throw DimensionMismatch("mixed_effect_cov: inconsistent input dimensionality");
    all.middleRows(off, x.rows()) = x;
    off += x.rows();
  }
  Eigen::MatrixXd cov = se_cov(fixed, all, all);
  off = 0;
  for (const auto& x : task_inputs) {
    cov.block(off, off, x.rows(), x.rows()) += se_cov(random_effect, x, x);
    off += x.rows();
  }
  return cov;
}

}  // namespace mtgp

#endif
