#ifndef MTGP_OPTIMIZE_HPP
#define MTGP_OPTIMIZE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mtgp/common.hpp"
#include "mtgp/data.hpp"
#include "mtgp/model.hpp"

namespace mtgp {

struct CdOptions {
  int max_iters = 50;        // coordinate trials
  double step = 0.05;        // base step in log-parameter space
  int max_halvings = 8;      // backtracking halvings per trial
  int patience = 0;          // consecutive failed trials before stop; 0 = 2 * dim
  double rel_tol = 1e-7;     // relative improvement below which a success still
                             // counts toward the patience counter
};

struct CdResult {
  double value = 0.0;
  int iters = 0;
  int accepted = 0;
};

// Objective functor: f(x, need_grad) -> {value, grad}; grad may be empty when
// need_grad is false. The optimizer maximizes.
using CdObjective = std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&, bool)>;

// Per-coordinate step sizes: log-space parameters move by `step`; inducing
// locations move by `step` times the span of the training inputs in that
// dimension, so the step is meaningful on the data's scale.
inline Eigen::VectorXd build_step_scale(const ParamLayout& layout,
                                        const std::vector<Task>& tasks, double step) {
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(layout.d, std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  for (const auto& t : tasks) {
    for (int q = 0; q < layout.d; ++q) {
      lo[q] = std::min(lo[q], t.X.col(q).minCoeff());
      hi[q] = std::max(hi[q], t.X.col(q).maxCoeff());
    }
  }
  Eigen::VectorXd scale(static_cast<Eigen::Index>(layout.size()));
  for (std::size_t i = 0; i < layout.coords.size(); ++i) {
    const Coord& c = layout.coords[i];
    if (c.kind == CoordKind::Inducing) {
      const double span = std::isfinite(hi[c.dim] - lo[c.dim]) ? hi[c.dim] - lo[c.dim] : 1.0;
      scale[static_cast<Eigen::Index>(i)] = step * (span > 0.0 ? span : 1.0);
    } else {
      scale[static_cast<Eigen::Index>(i)] = step;
    }
  }
  return scale;
}

// Stochastic coordinate ascent: pick a random coordinate, step along the sign
// of its partial derivative with backtracking halving, accept only improving
// moves. Robust on the non-convex bound surface and cheap per iteration.
inline CdResult coordinate_descent(Eigen::VectorXd& x, const CdObjective& f,
                                   const Eigen::VectorXd& step_scale,
                                   const CdOptions& opts, std::mt19937_64& rng) {
  const Eigen::Index dim = x.size();
  if (dim == 0) {
    CdResult r;
    r.value = f(x, false).first;
    return r;
  }
  if (step_scale.size() != dim)
    throw DimensionMismatch("coordinate_descent: step scale size mismatch");
  const int patience = opts.patience > 0 ? opts.patience
                                         : 2 * static_cast<int>(dim);
  std::uniform_int_distribution<Eigen::Index> pick(0, dim - 1);

  CdResult res;
  double value = f(x, false).first;
  int fails = 0;
  for (int it = 0; it < opts.max_iters && fails < patience; ++it) {
    ++res.iters;
    const Eigen::Index i = pick(rng);
    const double g = f(x, true).second[i];
    if (g == 0.0) {
      ++fails;
      continue;
    }
    const double dir = g > 0.0 ? 1.0 : -1.0;
    double h = step_scale[i];
    bool accepted = false;
    for (int halving = 0; halving <= opts.max_halvings; ++halving, h *= 0.5) {
      Eigen::VectorXd trial = x;
      trial[i] += dir * h;
      double tv;
      try {
        tv = f(trial, false).first;
      } catch (const NotPositiveDefinite&) {
        continue;
      } catch (const std::invalid_argument&) {
        continue;  // e.g. an inducing step creating duplicate rows
      }
      if (std::isfinite(tv) && tv > value) {
        const double rel = std::abs(tv - value) /
                           std::max(1.0, std::abs(value));
        x = std::move(trial);
        value = tv;
        accepted = true;
        ++res.accepted;
        fails = rel < opts.rel_tol ? fails + 1 : 0;
        break;
      }
    }
    if (!accepted) ++fails;
  }
  res.value = value;
  return res;
}

}  // namespace mtgp

#endif
