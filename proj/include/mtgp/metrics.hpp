#ifndef MTGP_METRICS_HPP
#define MTGP_METRICS_HPP

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mtgp/common.hpp"

namespace mtgp {

// Population (1/n) variance; with this convention the trivial mean predictor
// scores SMSE = 1 exactly at any n.
inline double population_variance(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw DegenerateTargets("variance of empty vector");
  const double mean = v.mean();
  return (v.array() - mean).square().mean();
}

// Standardized mean square error: MSE / Var(y_test).
inline double smse(const Eigen::VectorXd& pred_mean,
                   const Eigen::VectorXd& y_test,
                   const Eigen::VectorXd& /*y_train_of_task*/ = Eigen::VectorXd()) {
  if (pred_mean.size() != y_test.size())
    throw DimensionMismatch("smse: length mismatch");
  const double var = population_variance(y_test);
  if (var <= 0.0) throw DegenerateTargets("smse: zero test-target variance");
  return (pred_mean - y_test).squaredNorm() / static_cast<double>(y_test.size()) / var;
}

// Mean standardized log loss: mean negative log predictive density minus that
// of a Gaussian fitted to the training targets.
inline double msll(const Eigen::VectorXd& pred_mean,
                   const Eigen::VectorXd& pred_var,
                   const Eigen::VectorXd& y_test,
                   const Eigen::VectorXd& y_train) {
  if (pred_mean.size() != y_test.size() || pred_var.size() != y_test.size())
    throw DimensionMismatch("msll: length mismatch");
  if (y_train.size() < 2)
    throw DegenerateTargets("msll: need at least 2 training targets");
  if ((pred_var.array() <= 0.0).any())
    throw NonPositiveVariance("msll: non-positive predictive variance");
  const double m0 = y_train.mean();
  const double v0 = population_variance(y_train);
  if (v0 <= 0.0) throw DegenerateTargets("msll: zero training-target variance");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y_test.size(); ++i) {
    const double nll = 0.5 * std::log(2.0 * M_PI * pred_var[i]) +
                       0.5 * (y_test[i] - pred_mean[i]) * (y_test[i] - pred_mean[i]) / pred_var[i];
    const double nll0 = 0.5 * std::log(2.0 * M_PI * v0) +
                        0.5 * (y_test[i] - m0) * (y_test[i] - m0) / v0;
    acc += nll - nll0;
  }
  return acc / static_cast<double>(y_test.size());
}

struct MetricsReport {
  std::vector<double> task_smse;
  std::vector<double> task_msll;
  double mean_smse = 0.0;
  double mean_msll = 0.0;
  std::size_t num_tasks = 0;
  std::uint64_t seed = 0;
  std::string method;

  void finalize() {
    num_tasks = task_smse.size();
    mean_smse = 0.0;
    mean_msll = 0.0;
    for (double v : task_smse) mean_smse += v;
    for (double v : task_msll) mean_msll += v;
    if (num_tasks > 0) {
      mean_smse /= static_cast<double>(num_tasks);
      mean_msll /= static_cast<double>(num_tasks);
    }
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << "task,smse,msll\n";
    for (std::size_t j = 0; j < task_smse.size(); ++j)
      out << j << ',' << format_double(task_smse[j]) << ',' << format_double(task_msll[j]) << "\n";
    return out.str();
  }
};

}  // namespace mtgp

#endif
