#pragma once

#include <stdexcept>
#include <vector>

#include "dope/grid.hpp"

namespace dope {

struct OverlapViolationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Per-sample design distribution over grid points and the inverse design
// weight xi = quadrature weight / design mass.
struct DesignWeights {
  Vec p;   // probability mass, sums to 1, strictly positive
  Vec xi;  // w / p, pointwise

  void validate(const QuadratureWeights& w) const {
    if (p.size() != w.values.size() || xi.size() != p.size())
      throw ShapeError("DesignWeights: size mismatch");
    if (std::abs(p.sum() - 1.0) > 1e-10) throw std::runtime_error("DesignWeights: p must sum to 1");
    if (p.minCoeff() <= 0.0) throw OverlapViolationError("DesignWeights: design lacks overlap");
  }
};

enum class DgpKind { Pk, Darcy };

// One sample O_i. `channels` is the multi-channel input the operators consume
// (m x C on the canonical grid). The latent trajectory is simulation-only:
// estimators must not touch it, so access goes through a dedicated accessor.
class Observation {
 public:
  Mat channels;                  // m x C
  std::vector<int> obs_indices;  // K sorted distinct grid indices
  Vec y;                         // K noisy values
  DesignWeights design;

  Observation() = default;
  Observation(Mat channels_, Vec latent, std::vector<int> idx, Vec y_, DesignWeights design_)
      : channels(std::move(channels_)),
        obs_indices(std::move(idx)),
        y(std::move(y_)),
        design(std::move(design_)),
        latent_u_(std::move(latent)) {
    if (!obs_indices.empty()) {
      for (size_t k = 1; k < obs_indices.size(); ++k)
        if (obs_indices[k] <= obs_indices[k - 1])
          throw std::invalid_argument("Observation: indices must be strictly increasing");
    }
    if (int(obs_indices.size()) != y.size())
      throw ShapeError("Observation: obs_indices/y length mismatch");
  }

  int grid_size() const { return int(channels.rows()); }
  int num_obs() const { return int(y.size()); }

  bool has_latent() const { return latent_u_.size() > 0; }
  // Oracle-only accessor: used by oracle beta, corruption protocol, and truth
  // pools. Estimation code paths never call this.
  const Vec& latent_for_oracle() const {
    if (!has_latent()) throw std::runtime_error("Observation: latent trajectory unavailable");
    return latent_u_;
  }
  void set_latent(Vec u) { latent_u_ = std::move(u); }
  void drop_latent() { latent_u_.resize(0); }

 private:
  Vec latent_u_;  // simulation-only
};

struct Dataset {
  DgpKind dgp = DgpKind::Pk;
  // PK uses grid1d; Darcy uses grid2d.
  Grid1D grid1d;
  Grid2D grid2d;
  QuadratureWeights quadrature;
  std::vector<Observation> samples;

  int grid_size() const { return quadrature.size(); }
};

}  // namespace dope
