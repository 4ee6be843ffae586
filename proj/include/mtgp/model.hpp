#ifndef MTGP_MODEL_HPP
#define MTGP_MODEL_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mtgp/common.hpp"
#include "mtgp/data.hpp"
#include "mtgp/kernels.hpp"

namespace mtgp {

// Learnable inducing input locations for one center.
struct InducingSet {
  Eigen::MatrixXd X;  // m x d
  bool learnable = true;

  void validate() const {
    if (X.rows() < 1) throw InsufficientPoints("inducing set is empty");
    for (Eigen::Index a = 0; a < X.rows(); ++a)
      for (Eigen::Index b = a + 1; b < X.rows(); ++b)
        if ((X.row(a) - X.row(b)).cwiseAbs().maxCoeff() < 1e-12)
          throw std::invalid_argument("inducing set: duplicate rows");
  }
};

// Gaussian posterior over inducing values.
struct InducingPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// All kernel hyperparameters of the model. `fixed` has one entry when the
// fixed-effect kernel is shared across centers, otherwise one per center.
struct Hyper {
  std::vector<SeKernelParams> fixed;
  SeKernelParams random_effect;
  NoiseParams noise;

  bool shared_fixed() const { return fixed.size() == 1; }
  const SeKernelParams& fixed_for(std::size_t k) const {
    return fixed.size() == 1 ? fixed[0] : fixed.at(k);
  }
  SeKernelParams& fixed_for(std::size_t k) {
    return fixed.size() == 1 ? fixed[0] : fixed.at(k);
  }
  int input_dim() const { return random_effect.dim(); }

  double task_noise(const Task& t) const {
    return t.noise_variance ? *t.noise_variance : noise.noise_variance();
  }
};

enum class CoordKind { FixedSignal, FixedLength, RandSignal, RandLength, Noise, Inducing };

struct Coord {
  CoordKind kind;
  int center = 0;  // for per-center fixed params / inducing sets
  int row = 0;     // inducing row
  int dim = 0;     // lengthscale / inducing dimension
};

// Flat coordinate layout over hyperparameters and inducing locations; used by
// the optimizer and by gradient assembly.
struct ParamLayout {
  int num_centers = 1;
  bool shared_fixed = true;
  int d = 1;
  std::vector<int> m_per_center;
  bool optimize_inducing = true;

  std::vector<Coord> coords;

  static ParamLayout build(const Hyper& hyper, const std::vector<InducingSet>& inducing,
                           bool optimize_inducing) {
    ParamLayout lay;
    lay.num_centers = static_cast<int>(inducing.size());
    lay.shared_fixed = hyper.shared_fixed();
    lay.d = hyper.input_dim();
    lay.optimize_inducing = optimize_inducing;
    const int fixed_sets = lay.shared_fixed ? 1 : lay.num_centers;
    for (int k = 0; k < fixed_sets; ++k) {
      lay.coords.push_back({CoordKind::FixedSignal, k, 0, 0});
      for (int q = 0; q < lay.d; ++q)
        lay.coords.push_back({CoordKind::FixedLength, k, 0, q});
    }
    lay.coords.push_back({CoordKind::RandSignal, 0, 0, 0});
    for (int q = 0; q < lay.d; ++q)
      lay.coords.push_back({CoordKind::RandLength, 0, 0, q});
    lay.coords.push_back({CoordKind::Noise, 0, 0, 0});
    for (int k = 0; k < lay.num_centers; ++k) {
      lay.m_per_center.push_back(static_cast<int>(inducing[k].X.rows()));
      if (optimize_inducing && inducing[k].learnable) {
        for (int p = 0; p < lay.m_per_center.back(); ++p)
          for (int q = 0; q < lay.d; ++q)
            lay.coords.push_back({CoordKind::Inducing, k, p, q});
      }
    }
    return lay;
  }

  std::size_t size() const { return coords.size(); }

  Eigen::VectorXd pack(const Hyper& hyper, const std::vector<InducingSet>& inducing) const {
    Eigen::VectorXd v(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const Coord& c = coords[i];
      switch (c.kind) {
        case CoordKind::FixedSignal: v[i] = hyper.fixed[c.center].log_signal_variance; break;
        case CoordKind::FixedLength: v[i] = hyper.fixed[c.center].log_lengthscale[c.dim]; break;
        case CoordKind::RandSignal: v[i] = hyper.random_effect.log_signal_variance; break;
        case CoordKind::RandLength: v[i] = hyper.random_effect.log_lengthscale[c.dim]; break;
        case CoordKind::Noise: v[i] = hyper.noise.log_noise_variance; break;
        case CoordKind::Inducing: v[i] = inducing[c.center].X(c.row, c.dim); break;
      }
    }
    return v;
  }

  void unpack(const Eigen::VectorXd& v, Hyper& hyper, std::vector<InducingSet>& inducing) const {
    if (static_cast<std::size_t>(v.size()) != coords.size())
      throw DimensionMismatch("ParamLayout::unpack: size mismatch");
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const Coord& c = coords[i];
      switch (c.kind) {
        case CoordKind::FixedSignal: hyper.fixed[c.center].log_signal_variance = v[i]; break;
        case CoordKind::FixedLength: hyper.fixed[c.center].log_lengthscale[c.dim] = v[i]; break;
        case CoordKind::RandSignal: hyper.random_effect.log_signal_variance = v[i]; break;
        case CoordKind::RandLength: hyper.random_effect.log_lengthscale[c.dim] = v[i]; break;
        case CoordKind::Noise: hyper.noise.log_noise_variance = v[i]; break;
        case CoordKind::Inducing: inducing[c.center].X(c.row, c.dim) = v[i]; break;
      }
    }
  }
};

}  // namespace mtgp

#endif
