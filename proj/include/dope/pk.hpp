#pragma once

#include <cstdint>
#include <utility>

#include "dope/data.hpp"
#include "dope/rng.hpp"

namespace dope {

struct InvalidParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// One-compartment pharmacokinetics benchmark: pulse dosing, correlated
// lognormal (CL, V), exact exponential-integrator recursion on the grid,
// peak-window-mixture observation design.
namespace pk {

struct Config {
  double horizon = 24.0;
  int delta = 128;
  int obs_per_subject = 24;
  double sigma_eps = 0.002;
  double peak_bandwidth = 5.0;
  // (log CL, log V) ~ N((0,1), sd (0.25, 0.20), corr 0.4)
  double mean_log_cl = 0.0;
  double mean_log_v = 1.0;
  double sd_log_cl = 0.25;
  double sd_log_v = 0.20;
  double corr = 0.4;
};

// Clearance and volume, exponentiated bivariate normal draw. `scale` shrinks
// the covariance (scale=0 gives the deterministic medians).
std::pair<double, double> sample_pk_params(RngStream& rng, const Config& cfg = {},
                                           double scale = 1.0);

// one_or_two_pulse dosing family evaluated on the grid.
Vec sample_dosing(RngStream& rng, const Grid1D& grid);

// Exact exponential recursion with small-rate fallback.
Vec solve_pk(const Vec& r, double cl, double v, const Grid1D& grid);

// Peak-window mixture design p = (1 - rho/5)/delta + (rho/5) q_window, with
// xi = w / p.
DesignWeights pk_design(const Vec& u, const Grid1D& grid, double rho, double h,
                        const QuadratureWeights& w);

// K distinct sorted indices without replacement proportional to p
// (sequential renormalization), plus Gaussian observation noise.
std::pair<std::vector<int>, Vec> sample_observations(const DesignWeights& design, const Vec& u,
                                                     int K, double sigma_eps, RngStream& rng);

// Input channels for the operator: [r, log CL, log V, t/T], constants
// broadcast over the grid.
Mat input_channels(const Vec& r, double log_cl, double log_v, const Grid1D& grid);

Observation sample_one(RngStream& rng, double rho, const Grid1D& grid,
                       const QuadratureWeights& w, const Config& cfg = {});

// n i.i.d. records with the benchmark configuration.
Dataset generate_dataset(int n, double rho, std::uint64_t seed, const Config& cfg = {});

}  // namespace pk

}  // namespace dope
