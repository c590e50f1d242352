#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "dope/pk.hpp"

using namespace dope;

namespace {

// Fine-grid RK4 oracle for du/dt = -(CL/V) u + r(t)/V with r held left-piecewise
// constant on the coarse intervals.
Vec rk4_oracle(const Vec& r, double cl, double v, const Grid1D& grid, int refine = 16) {
  const double kappa = cl / v;
  const double dt = grid.spacing() / refine;
  Vec u_coarse(grid.delta);
  u_coarse[0] = 0.0;
  double u = 0.0;
  for (int d = 1; d < grid.delta; ++d) {
    const double forcing = r[d - 1] / v;  // constant on [t_{d-1}, t_d)
    auto f = [&](double x) { return -kappa * x + forcing; };
    for (int s = 0; s < refine; ++s) {
      const double k1 = f(u);
      const double k2 = f(u + 0.5 * dt * k1);
      const double k3 = f(u + 0.5 * dt * k2);
      const double k4 = f(u + dt * k3);
      u += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    u_coarse[d] = u;
  }
  return u_coarse;
}

}  // namespace

TEST_CASE("pk parameter sampling: medians and correlation") {
  auto rng = make_stream(42, "pk-params");
  const int n = 100000;
  std::vector<double> log_cl(n), log_v(n);
  for (int i = 0; i < n; ++i) {
    auto [cl, v] = pk::sample_pk_params(rng);
    log_cl[i] = std::log(cl);
    log_v[i] = std::log(v);
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
    return v[v.size() / 2];
  };
  CHECK(std::exp(median(log_cl)) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::exp(median(log_v)) == doctest::Approx(std::exp(1.0)).epsilon(0.02));

  double m1 = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    m1 += log_cl[i];
    m2 += log_v[i];
  }
  m1 /= n;
  m2 /= n;
  double cov = 0, v1 = 0, v2 = 0;
  for (int i = 0; i < n; ++i) {
    cov += (log_cl[i] - m1) * (log_v[i] - m2);
    v1 += (log_cl[i] - m1) * (log_cl[i] - m1);
    v2 += (log_v[i] - m2) * (log_v[i] - m2);
  }
  CHECK(cov / std::sqrt(v1 * v2) == doctest::Approx(0.4).epsilon(0.025));

  // degenerate zero-variance variant
  auto [cl0, v0] = pk::sample_pk_params(rng, {}, 0.0);
  CHECK(cl0 == doctest::Approx(1.0));
  CHECK(v0 == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("dosing profiles bounded and in-horizon") {
  Grid1D grid(24.0, 128);
  auto rng = make_stream(7, "dosing");
  for (int rep = 0; rep < 500; ++rep) {
    Vec r = pk::sample_dosing(rng, grid);
    CHECK(r.minCoeff() >= 0.0);
    CHECK(r.maxCoeff() <= 4.0 + 1e-12);
  }
}

TEST_CASE("pk solver: zero forcing, steady state, positivity") {
  Grid1D grid(24.0, 128);
  Vec zero = Vec::Zero(128);
  CHECK(pk::solve_pk(zero, 1.0, 1.0, grid).norm() == 0.0);

  Vec c = Vec::Constant(128, 0.8);
  Vec u = pk::solve_pk(c, 1.0, 1.0, grid);
  // steady state c/CL after long horizon
  CHECK(u[127] == doctest::Approx(0.8).epsilon(1e-8));
  CHECK(u.minCoeff() >= 0.0);

  CHECK_THROWS_AS(pk::solve_pk(c, -1.0, 1.0, grid), InvalidParameterError);
}

TEST_CASE("pk solver matches fine-grid RK4 oracle") {
  Grid1D grid(24.0, 128);
  auto rng = make_stream(99, "rk4");
  for (int rep = 0; rep < 100; ++rep) {
    auto [cl, v] = pk::sample_pk_params(rng);
    Vec r = pk::sample_dosing(rng, grid);
    Vec u = pk::solve_pk(r, cl, v, grid);
    Vec oracle = rk4_oracle(r, cl, v, grid);
    const double rel = (u - oracle).norm() / std::max(oracle.norm(), 1e-12);
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("peak of trajectory at or after first pulse onset") {
  Grid1D grid(24.0, 128);
  auto rng = make_stream(31, "peak");
  for (int rep = 0; rep < 200; ++rep) {
    Vec r = pk::sample_dosing(rng, grid);
    auto [cl, v] = pk::sample_pk_params(rng);
    Vec u = pk::solve_pk(r, cl, v, grid);
    int peak = 0;
    u.maxCoeff(&peak);
    int onset = 0;
    while (onset < 128 && r[onset] == 0.0) ++onset;
    if (onset < 128) CHECK(peak >= onset);
  }
}

TEST_CASE("pk design: mixture formula and overlap") {
  Grid1D grid(24.0, 128);
  auto w = trapezoid_weights_1d(128);
  auto rng = make_stream(13, "design");
  Vec r = pk::sample_dosing(rng, grid);
  Vec u = pk::solve_pk(r, 1.0, 2.7, grid);

  auto d0 = pk::pk_design(u, grid, 0.0, 5.0, w);
  for (int i = 0; i < 128; ++i) CHECK(d0.p[i] == doctest::Approx(1.0 / 128.0));

  // interior xi and boundary xi for uniform design
  CHECK(d0.xi[64] == doctest::Approx(128.0 / 127.0));
  CHECK(d0.xi[0] == doctest::Approx(128.0 / 254.0));

  auto d1 = pk::pk_design(u, grid, 1.0, 5.0, w);
  int peak = 0;
  u.maxCoeff(&peak);
  // a point far outside the peak window
  int outside = (grid.points[peak] > 12.0) ? 0 : 127;
  CHECK(d1.p[outside] == doctest::Approx(0.8 / 128.0));

  for (double rho : {0.0, 0.3, 0.7, 1.0}) {
    auto d = pk::pk_design(u, grid, rho, 5.0, w);
    CHECK(d.p.minCoeff() >= (1.0 - rho / 5.0) / 128.0 - 1e-15);
    CHECK(d.p.sum() == doctest::Approx(1.0));
    // xi * p = quadrature weight pointwise
    for (int i = 0; i < 128; ++i)
      CHECK(std::abs(d.xi[i] * d.p[i] - w.values[i]) < 1e-12);
  }
}

TEST_CASE("observation sampling: noiseless, exhaustive, inclusion frequency") {
  Grid1D grid(24.0, 16);
  auto w = trapezoid_weights_1d(16);
  auto rng = make_stream(3, "obs");
  Vec u(16);
  for (int i = 0; i < 16; ++i) u[i] = std::sin(0.3 * i) + 2.0;
  DesignWeights uniform;
  uniform.p = Vec::Constant(16, 1.0 / 16.0);
  uniform.xi = w.values.array() / uniform.p.array();

  auto [idx, y] = pk::sample_observations(uniform, u, 5, 0.0, rng);
  for (size_t k = 0; k < idx.size(); ++k) CHECK(y[k] == u[idx[k]]);

  auto [all_idx, all_y] = pk::sample_observations(uniform, u, 16, 0.0, rng);
  for (int i = 0; i < 16; ++i) CHECK(all_idx[i] == i);

  CHECK_THROWS(pk::sample_observations(uniform, u, 17, 0.0, rng));

  // symmetry oracle: uniform without-replacement inclusion frequency = K/m
  const int reps = 100000, K = 4, m = 16;
  std::vector<int> counts(m, 0);
  for (int rep = 0; rep < reps; ++rep) {
    auto [ii, yy] = pk::sample_observations(uniform, u, K, 0.0, rng);
    for (int j : ii) counts[j]++;
  }
  const double expect = double(K) / m;
  const double se = std::sqrt(expect * (1.0 - expect) / reps);
  for (int i = 0; i < m; ++i)
    CHECK(std::abs(counts[i] / double(reps) - expect) < 3.0 * se + 5e-3);
}

TEST_CASE("dataset generation: shape, determinism, latent positivity") {
  Dataset d1 = pk::generate_dataset(64, 0.5, 2024);
  Dataset d2 = pk::generate_dataset(64, 0.5, 2024);
  CHECK(d1.samples.size() == 64);
  for (const auto& obs : d1.samples) {
    CHECK(obs.num_obs() == 24);
    CHECK(obs.latent_for_oracle().minCoeff() >= 0.0);
    CHECK(obs.channels.cols() == 4);
  }
  for (int i = 0; i < 64; ++i) {
    CHECK(d1.samples[i].y == d2.samples[i].y);
    CHECK(d1.samples[i].obs_indices == d2.samples[i].obs_indices);
    CHECK(d1.samples[i].channels == d2.samples[i].channels);
  }
  Dataset d3 = pk::generate_dataset(8, 0.5, 2025);
  CHECK(d3.samples[0].y != d1.samples[0].y);
}
