#include "dope/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "dope/darcy.hpp"
#include "dope/harness.hpp"
#include "dope/pk.hpp"

namespace dope {

namespace {

bool report(std::ostream& out, const char* name, bool ok) {
  out << (ok ? "[pass] " : "[FAIL] ") << name << "\n";
  return ok;
}

// JVP along random directions matches <w_g, b>_w for every functional.
bool check_representer() {
  auto rng = make_stream(1, "selfcheck-jvp");
  auto w = trapezoid_weights_1d(64);
  for (auto spec : {FunctionalSpec::auc(), FunctionalSpec::tat(),
                    FunctionalSpec::soft_cmax(), FunctionalSpec::smooth_excess(8.0)}) {
    for (int t = 0; t < 10; ++t) {
      Vec u(64), b(64);
      for (int i = 0; i < 64; ++i) {
        u[i] = rng.uniform(0.05, 1.2);
        b[i] = rng.normal();
      }
      const double jvp = functional_jvp(spec, u, b, w);
      const double inner =
          (riesz_representer_wg(spec, u, w).array() * b.array() * w.values.array())
              .sum();
      if (std::abs(jvp - inner) > 1e-10 * std::max(1.0, std::abs(jvp))) return false;
    }
  }
  return true;
}

// E_p[xi0 * wg(S0) * b(X)] = <wg(S0), b>_w, closed form over the design.
bool check_riesz_identity() {
  Dataset data = pk::generate_dataset(3, 0.5, 2);
  auto rng = make_stream(3, "selfcheck-riesz");
  const auto spec = FunctionalSpec::tat();
  for (const auto& obs : data.samples) {
    Vec beta = oracle_beta(obs.design, spec, obs.latent_for_oracle(), data.quadrature);
    Vec wg = riesz_representer_wg(spec, obs.latent_for_oracle(), data.quadrature);
    for (int t = 0; t < 5; ++t) {
      Vec b(beta.size());
      for (int i = 0; i < b.size(); ++i) b[i] = rng.normal();
      const double lhs = (obs.design.p.array() * beta.array() * b.array()).sum();
      const double rhs = (wg.array() * b.array() * data.quadrature.values.array()).sum();
      if (std::abs(lhs - rhs) > 1e-9 * std::max(1.0, std::abs(rhs))) return false;
    }
  }
  return true;
}

// Zero residuals reduce the pseudo-outcome to the plug-in value exactly.
bool check_pseudo_outcome() {
  Dataset data = pk::generate_dataset(4, 0.25, 5);
  const auto spec = FunctionalSpec::auc();
  for (auto obs : data.samples) {
    for (int k = 0; k < obs.num_obs(); ++k)
      obs.y[k] = obs.latent_for_oracle()[obs.obs_indices[k]];
    SurrogateFn s = [](const Observation& o) { return o.latent_for_oracle(); };
    BetaFn b = [&](const Observation& o) {
      return oracle_beta(o.design, spec, o.latent_for_oracle(), data.quadrature);
    };
    const double psi = pseudo_outcome(s, b, obs, spec, data.quadrature);
    const double plug = functional_value(spec, obs.latent_for_oracle(), data.quadrature);
    if (std::abs(psi - plug) > 1e-13 * std::max(1.0, std::abs(plug))) return false;
  }
  return true;
}

bool check_variance() {
  Vec two(2);
  two << 1.0, 3.0;
  auto [v, ci] = variance_and_ci(two);
  if (std::abs(v - 0.5) > 1e-15) return false;
  if (!(ci.first < 2.0 && 2.0 < ci.second)) return false;
  auto fa = FoldAssignment::make(11, 2, 7);
  int c0 = 0;
  for (int f : fa.fold_of) c0 += (f == 0);
  return c0 == 5 || c0 == 6;
}

bool check_darcy_symmetry() {
  Dataset data = darcy::generate_dataset(2, 11);
  Grid2D g = data.grid2d;
  for (const auto& obs : data.samples) {
    // a symmetric in construction? use solution mirror identity on a symmetric
    // coefficient instead: solve with the transposed coefficient field
    Vec a = obs.channels.col(0);
    Vec at(a.size());
    for (int p = 0; p < g.height; ++p)
      for (int q = 0; q < g.width; ++q) at[g.flat(p, q)] = a[g.flat(q, p)];
    Vec u = darcy::solve_darcy(a, {});
    Vec ut = darcy::solve_darcy(at, {});
    for (int p = 0; p < g.height; ++p)
      for (int q = 0; q < g.width; ++q)
        if (std::abs(ut[g.flat(p, q)] - u[g.flat(q, p)]) > 1e-12) return false;
  }
  return true;
}

bool check_csv_and_json() {
  ResultRow r;
  r.method = "plugin";
  r.functional = "auc";
  r.sweep_value = 0.125;
  r.repeat = 3;
  r.theta_hat = 0.1 + 0.2;
  r.se = 1e-3;
  r.ci_low = r.theta_hat - 1.96e-3;
  r.ci_high = r.theta_hat + 1.96e-3;
  r.truth = 0.3;
  r.covered = 1;
  r.wall_time_s = 1.25;
  auto rows = parse_csv(emit_csv({r}));
  if (!(rows.size() == 1 && rows[0] == r)) return false;

  Dataset data = pk::generate_dataset(2, 0.5, 13);
  Dataset back = dataset_from_json(dataset_to_json(data, true));
  return (back.samples[1].channels - data.samples[1].channels).cwiseAbs().maxCoeff() <
         1e-15;
}

}  // namespace

bool run_selfcheck(std::ostream& out) {
  bool ok = true;
  ok &= report(out, "functional JVP matches closed-form representer", check_representer());
  ok &= report(out, "oracle Riesz identity over the observation design", check_riesz_identity());
  ok &= report(out, "pseudo-outcome reduces to plug-in at zero residual", check_pseudo_outcome());
  ok &= report(out, "variance/CI arithmetic and fold partition", check_variance());
  ok &= report(out, "Darcy solver transpose symmetry", check_darcy_symmetry());
  ok &= report(out, "CSV and dataset JSON round-trips", check_csv_and_json());
  out << (ok ? "selfcheck: all checks passed\n" : "selfcheck: FAILURES detected\n");
  return ok;
}

}  // namespace dope
