#pragma once

#include <cstdint>

#include "dope/data.hpp"
#include "dope/rng.hpp"

namespace dope {

// 2D Darcy-flow benchmark: piecewise-constant transformed Gaussian coefficient
// fields on a 5x5 coarse partition, finite-difference elliptic solve with
// harmonic-mean interface coefficients, adaptive inverse-energy observation
// design.
namespace darcy {

struct Config {
  int height = 17;
  int width = 17;
  int coarse = 5;
  int cosine_modes = 3;
  double log_scale = 0.65;
  double clip_floor = 0.2;
  int obs_per_sample = 24;
  double sigma_eps = 0.01;
  double design_temperature = 7.0;  // lambda
  double design_floor = 1e-3;       // epsilon
};

// Coefficient field on the fine grid (flattened row-major q + W*p), >= 0.2,
// piecewise constant on the coarse partition.
Vec sample_coefficient(RngStream& rng, const Config& cfg = {});

// Dense solve of -div(a grad u) = 1 with zero Dirichlet boundary.
Vec solve_darcy(const Vec& a, const Config& cfg = {});

// Saliency-driven design q ~ exp(lambda |S~|) + eps; xi = w / q.
DesignWeights darcy_design(const Vec& a, const Vec& u, const Grid2D& grid,
                           const QuadratureWeights& w, double lambda_d = 7.0,
                           double eps_floor = 1e-3);

// Input channels for the operator: [a, x, y].
Mat input_channels(const Vec& a, const Grid2D& grid);

Observation sample_one(RngStream& rng, const Grid2D& grid, const QuadratureWeights& w,
                       const Config& cfg = {});

Dataset generate_dataset(int n, std::uint64_t seed, const Config& cfg = {});

}  // namespace darcy

}  // namespace dope
