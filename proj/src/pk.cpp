#include "dope/pk.hpp"

#include <algorithm>
#include <cmath>

namespace dope::pk {

std::pair<double, double> sample_pk_params(RngStream& rng, const Config& cfg, double scale) {
  // Cholesky of the 2x2 covariance
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  const double log_cl = cfg.mean_log_cl + scale * cfg.sd_log_cl * z1;
  const double log_v =
      cfg.mean_log_v +
      scale * cfg.sd_log_v * (cfg.corr * z1 + std::sqrt(1.0 - cfg.corr * cfg.corr) * z2);
  return {std::exp(log_cl), std::exp(log_v)};
}

Vec sample_dosing(RngStream& rng, const Grid1D& grid) {
  const int n_pulses = rng.uniform_int(1, 2);
  Vec r = Vec::Zero(grid.delta);
  const double T = grid.horizon;
  for (int m = 0; m < n_pulses; ++m) {
    const double duration = rng.uniform(1.0, 4.0);
    const double start = rng.uniform(0.0, T - duration);
    const double amplitude = rng.uniform(0.5, 2.0);
    const double stop = std::min(T, start + duration);
    for (int d = 0; d < grid.delta; ++d) {
      const double t = grid.points[d];
      if (t >= start && t <= stop) r[d] += amplitude;
    }
  }
  return r;
}

Vec solve_pk(const Vec& r, double cl, double v, const Grid1D& grid) {
  if (cl <= 0.0 || v <= 0.0) throw InvalidParameterError("solve_pk: CL and V must be positive");
  const double kappa = cl / v;
  const double dt = grid.spacing();
  Vec u = Vec::Zero(grid.delta);
  if (kappa * dt < 1e-10) {
    for (int d = 1; d < grid.delta; ++d) u[d] = u[d - 1] + dt * r[d - 1] / v;
  } else {
    const double decay = std::exp(-kappa * dt);
    const double gain = (1.0 - decay) / kappa;
    for (int d = 1; d < grid.delta; ++d) u[d] = decay * u[d - 1] + (r[d - 1] / v) * gain;
  }
  return u;
}

DesignWeights pk_design(const Vec& u, const Grid1D& grid, double rho, double h,
                        const QuadratureWeights& w) {
  if (rho < 0.0 || rho > 1.0) throw InvalidParameterError("pk_design: rho must lie in [0,1]");
  if (h <= 0.0) throw InvalidParameterError("pk_design: bandwidth must be positive");
  int peak = 0;
  u.maxCoeff(&peak);
  const double tau = grid.points[peak];

  Vec window = Vec::Zero(grid.delta);
  for (int d = 0; d < grid.delta; ++d)
    if (std::abs(grid.points[d] - tau) <= h) window[d] = 1.0;
  window /= window.sum();  // peak is inside its own window, sum >= 1

  const double mix = rho / 5.0;
  DesignWeights design;
  design.p = ((1.0 - mix) / double(grid.delta)) + (mix * window.array());
  design.xi = w.values.array() / design.p.array();
  return design;
}

std::pair<std::vector<int>, Vec> sample_observations(const DesignWeights& design, const Vec& u,
                                                     int K, double sigma_eps, RngStream& rng) {
  const int m = int(design.p.size());
  if (K > m) throw std::invalid_argument("sample_observations: K exceeds grid size");
  if (sigma_eps < 0.0) throw InvalidParameterError("sample_observations: sigma_eps must be >= 0");

  // Sequential draw-then-renormalize without replacement.
  Vec mass = design.p;
  std::vector<int> indices;
  indices.reserve(K);
  for (int k = 0; k < K; ++k) {
    const double total = mass.sum();
    double target = rng.uniform() * total;
    int pick = m - 1;
    for (int d = 0; d < m; ++d) {
      target -= mass[d];
      if (target <= 0.0) {
        pick = d;
        break;
      }
    }
    while (mass[pick] == 0.0) pick = (pick + m - 1) % m;  // guard against roundoff at the tail
    indices.push_back(pick);
    mass[pick] = 0.0;
  }
  std::sort(indices.begin(), indices.end());

  Vec y(K);
  for (int k = 0; k < K; ++k) y[k] = u[indices[k]] + (sigma_eps > 0.0 ? rng.normal(0.0, sigma_eps) : 0.0);
  return {std::move(indices), std::move(y)};
}

Mat input_channels(const Vec& r, double log_cl, double log_v, const Grid1D& grid) {
  Mat channels(grid.delta, 4);
  channels.col(0) = r;
  channels.col(1).setConstant(log_cl);
  channels.col(2).setConstant(log_v);
  channels.col(3) = grid.points / grid.horizon;
  return channels;
}

Observation sample_one(RngStream& rng, double rho, const Grid1D& grid, const QuadratureWeights& w,
                       const Config& cfg) {
  const auto [cl, v] = sample_pk_params(rng, cfg);
  const Vec r = sample_dosing(rng, grid);
  Vec u = solve_pk(r, cl, v, grid);
  DesignWeights design = pk_design(u, grid, rho, cfg.peak_bandwidth, w);
  auto [indices, y] = sample_observations(design, u, cfg.obs_per_subject, cfg.sigma_eps, rng);
  Mat channels = input_channels(r, std::log(cl), std::log(v), grid);
  return Observation(std::move(channels), std::move(u), std::move(indices), std::move(y),
                     std::move(design));
}

Dataset generate_dataset(int n, double rho, std::uint64_t seed, const Config& cfg) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  Dataset data;
  data.dgp = DgpKind::Pk;
  data.grid1d = Grid1D(cfg.horizon, cfg.delta);
  data.quadrature = trapezoid_weights_1d(cfg.delta);
  data.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto rng = make_stream(seed, "pk-sample", std::uint64_t(i));
    data.samples.push_back(sample_one(rng, rho, data.grid1d, data.quadrature, cfg));
  }
  return data;
}

}  // namespace dope::pk
