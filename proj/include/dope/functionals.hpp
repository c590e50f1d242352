#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "dope/dual.hpp"
#include "dope/grid.hpp"

namespace dope {

struct NumericInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class FunctionalKind { Auc, Tat, SoftCmax, SmoothExcess };

// Target functionals over discretized trajectories/fields. Unused
// hyperparameters are ignored for kinds that do not reference them.
struct FunctionalSpec {
  FunctionalKind kind = FunctionalKind::Auc;
  double kappa = 8.0;        // tat sharpness
  double c_star = 0.5;       // tat threshold
  double lambda = 6.0;       // soft_cmax temperature
  double kappa_star = 7.5;   // smooth_excess sharpness
  double c = 0.5;            // smooth_excess threshold

  static FunctionalSpec auc() { return {FunctionalKind::Auc}; }
  static FunctionalSpec tat(double kappa = 8.0, double c_star = 0.5) {
    FunctionalSpec s;
    s.kind = FunctionalKind::Tat;
    s.kappa = kappa;
    s.c_star = c_star;
    return s;
  }
  static FunctionalSpec soft_cmax(double lambda = 6.0) {
    FunctionalSpec s;
    s.kind = FunctionalKind::SoftCmax;
    s.lambda = lambda;
    return s;
  }
  static FunctionalSpec smooth_excess(double kappa_star, double c = 0.5) {
    FunctionalSpec s;
    s.kind = FunctionalKind::SmoothExcess;
    s.kappa_star = kappa_star;
    s.c = c;
    return s;
  }
  // Darcy sweep convention: the sweep value kappa maps to the internal sharpness.
  static FunctionalSpec smooth_excess_from_sweep(double kappa_sweep, double c = 0.5) {
    return smooth_excess(7.5 + 2.5 * kappa_sweep, c);
  }

  void validate() const;
};

const char* functional_kind_name(FunctionalKind kind);
FunctionalKind functional_kind_from_name(const std::string& name);

// Discretized value g_m(u).
double functional_value(const FunctionalSpec& spec, const Vec& u, const QuadratureWeights& w);

// Closed-form Riesz representer w_g(u) under the reference measure. This is an
// independent implementation used for cross-checks and the structured beta
// parameterization; the JVP below never calls it.
Vec riesz_representer_wg(const FunctionalSpec& spec, const Vec& u, const QuadratureWeights& w);

// Directional derivative d/dt g_m(u + t b) at t=0 via forward-mode duals over
// the same evaluation path as functional_value.
double functional_jvp(const FunctionalSpec& spec, const Vec& u, const Vec& b,
                      const QuadratureWeights& w);

// Gradient of g_m at u (one dual pass per coordinate); used where the full
// linearization is needed, e.g. the Riesz regression objective.
Vec functional_gradient(const FunctionalSpec& spec, const Vec& u, const QuadratureWeights& w);

}  // namespace dope
