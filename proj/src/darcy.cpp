#include "dope/darcy.hpp"

#include <cmath>

#include "dope/pk.hpp"

namespace dope::darcy {

namespace {

inline double harmonic_mean(double a, double b) { return 2.0 * a * b / (a + b); }

}  // namespace

Vec sample_coefficient(RngStream& rng, const Config& cfg) {
  const int nc = cfg.coarse;
  Mat coarse = Mat::Zero(nc, nc);
  for (int mx = 1; mx <= cfg.cosine_modes; ++mx) {
    for (int my = 1; my <= cfg.cosine_modes; ++my) {
      const double coeff = rng.normal();
      for (int r = 0; r < nc; ++r) {
        for (int s = 0; s < nc; ++s) {
          const double xb = double(r) / double(nc - 1);
          const double yb = double(s) / double(nc - 1);
          coarse(r, s) += coeff * 2.0 * std::cos(M_PI * mx * xb) * std::cos(M_PI * my * yb);
        }
      }
    }
  }
  coarse *= cfg.log_scale / double(cfg.cosine_modes);

  Grid2D grid(cfg.height, cfg.width);
  Vec a(grid.size());
  for (int p = 0; p < cfg.height; ++p) {
    for (int q = 0; q < cfg.width; ++q) {
      const int r = int(std::lround(grid.x(p) * (nc - 1)));
      const int s = int(std::lround(grid.y(q) * (nc - 1)));
      a[grid.flat(p, q)] = std::max(std::exp(coarse(r, s)), cfg.clip_floor);
    }
  }
  return a;
}

Vec solve_darcy(const Vec& a, const Config& cfg) {
  Grid2D grid(cfg.height, cfg.width);
  if (a.size() != grid.size()) throw ShapeError("solve_darcy: coefficient size mismatch");
  if (a.minCoeff() <= 0.0) throw InvalidGridError("solve_darcy: coefficient must be positive");

  const int H = cfg.height, W = cfg.width;
  const int ni = H - 2, nj = W - 2;
  const int n = ni * nj;
  const double h = 1.0 / double(H - 1);
  const double inv_h2 = 1.0 / (h * h);

  auto interior_index = [&](int p, int q) { return (q - 1) + nj * (p - 1); };

  Mat A = Mat::Zero(n, n);
  Vec rhs = Vec::Constant(n, 1.0);
  for (int p = 1; p <= ni; ++p) {
    for (int q = 1; q <= nj; ++q) {
      const int row = interior_index(p, q);
      const double a_c = a[grid.flat(p, q)];
      const double aw = harmonic_mean(a_c, a[grid.flat(p - 1, q)]);
      const double ae = harmonic_mean(a_c, a[grid.flat(p + 1, q)]);
      const double as = harmonic_mean(a_c, a[grid.flat(p, q - 1)]);
      const double an = harmonic_mean(a_c, a[grid.flat(p, q + 1)]);
      A(row, row) = (aw + ae + as + an) * inv_h2;
      if (p > 1) A(row, interior_index(p - 1, q)) = -aw * inv_h2;
      if (p < ni) A(row, interior_index(p + 1, q)) = -ae * inv_h2;
      if (q > 1) A(row, interior_index(p, q - 1)) = -as * inv_h2;
      if (q < nj) A(row, interior_index(p, q + 1)) = -an * inv_h2;
    }
  }

  Eigen::LLT<Mat> llt(A);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("solve_darcy: factorization failed (system not SPD)");
  Vec u_int = llt.solve(rhs);
  if (!u_int.allFinite()) throw std::runtime_error("solve_darcy: solver produced non-finite values");

  Vec u = Vec::Zero(grid.size());
  for (int p = 1; p <= ni; ++p)
    for (int q = 1; q <= nj; ++q) u[grid.flat(p, q)] = u_int[interior_index(p, q)];
  return u;
}

DesignWeights darcy_design(const Vec& a, const Vec& u, const Grid2D& grid,
                           const QuadratureWeights& w, double lambda_d, double eps_floor) {
  const int H = grid.height, W = grid.width;
  if (a.size() != grid.size() || u.size() != grid.size())
    throw ShapeError("darcy_design: field size mismatch");

  Vec saliency(grid.size());
  for (int p = 0; p < H; ++p) {
    for (int q = 0; q < W; ++q) {
      const double a_inv = 1.0 / std::max(a[grid.flat(p, q)], 1e-8);
      // centered differences; one-sided at boundary nodes
      double gx, gy;
      if (p == 0)
        gx = u[grid.flat(1, q)] - u[grid.flat(0, q)];
      else if (p == H - 1)
        gx = u[grid.flat(H - 1, q)] - u[grid.flat(H - 2, q)];
      else
        gx = u[grid.flat(p + 1, q)] - u[grid.flat(p - 1, q)];
      if (q == 0)
        gy = u[grid.flat(p, 1)] - u[grid.flat(p, 0)];
      else if (q == W - 1)
        gy = u[grid.flat(p, W - 1)] - u[grid.flat(p, W - 2)];
      else
        gy = u[grid.flat(p, q + 1)] - u[grid.flat(p, q - 1)];
      const double grad_mag = std::sqrt(gx * gx + gy * gy);
      saliency[grid.flat(p, q)] = a_inv * (0.5 + std::abs(u[grid.flat(p, q)]) + grad_mag);
    }
  }

  const Vec centered = saliency.array() - saliency.mean();
  const double peak = centered.cwiseAbs().maxCoeff();
  const Vec normalized = peak > 0.0 ? Vec(centered / peak) : Vec(Vec::Zero(grid.size()));

  DesignWeights design;
  design.p = (lambda_d * normalized.cwiseAbs()).array().exp() + eps_floor;
  design.p /= design.p.sum();
  design.xi = w.values.array() / design.p.array();
  return design;
}

Mat input_channels(const Vec& a, const Grid2D& grid) {
  Mat channels(grid.size(), 3);
  channels.col(0) = a;
  for (int p = 0; p < grid.height; ++p) {
    for (int q = 0; q < grid.width; ++q) {
      channels(grid.flat(p, q), 1) = grid.x(p);
      channels(grid.flat(p, q), 2) = grid.y(q);
    }
  }
  return channels;
}

Observation sample_one(RngStream& rng, const Grid2D& grid, const QuadratureWeights& w,
                       const Config& cfg) {
  Vec a = sample_coefficient(rng, cfg);
  Vec u = solve_darcy(a, cfg);
  DesignWeights design = darcy_design(a, u, grid, w, cfg.design_temperature, cfg.design_floor);
  auto [indices, y] = pk::sample_observations(design, u, cfg.obs_per_sample, cfg.sigma_eps, rng);
  Mat channels = input_channels(a, grid);
  return Observation(std::move(channels), std::move(u), std::move(indices), std::move(y),
                     std::move(design));
}

Dataset generate_dataset(int n, std::uint64_t seed, const Config& cfg) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  Dataset data;
  data.dgp = DgpKind::Darcy;
  data.grid2d = Grid2D(cfg.height, cfg.width);
  data.quadrature = trapezoid_weights_2d(cfg.height, cfg.width);
  data.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto rng = make_stream(seed, "darcy-sample", std::uint64_t(i));
    data.samples.push_back(sample_one(rng, data.grid2d, data.quadrature, cfg));
  }
  return data;
}

}  // namespace dope::darcy
