#include "dope/functionals.hpp"

#include <algorithm>
#include <limits>
#include <type_traits>

namespace dope {

void FunctionalSpec::validate() const {
  switch (kind) {
    case FunctionalKind::Tat:
      if (kappa <= 0.0) throw std::invalid_argument("FunctionalSpec: tat kappa must be > 0");
      break;
    case FunctionalKind::SoftCmax:
      if (lambda <= 0.0) throw std::invalid_argument("FunctionalSpec: soft_cmax lambda must be > 0");
      break;
    case FunctionalKind::SmoothExcess:
      if (kappa_star <= 0.0)
        throw std::invalid_argument("FunctionalSpec: smooth_excess kappa_star must be > 0");
      break;
    case FunctionalKind::Auc:
      break;
  }
}

const char* functional_kind_name(FunctionalKind kind) {
  switch (kind) {
    case FunctionalKind::Auc: return "auc";
    case FunctionalKind::Tat: return "tat";
    case FunctionalKind::SoftCmax: return "soft_cmax";
    case FunctionalKind::SmoothExcess: return "smooth_excess";
  }
  return "unknown";
}

FunctionalKind functional_kind_from_name(const std::string& name) {
  if (name == "auc") return FunctionalKind::Auc;
  if (name == "tat") return FunctionalKind::Tat;
  if (name == "soft_cmax") return FunctionalKind::SoftCmax;
  if (name == "smooth_excess") return FunctionalKind::SmoothExcess;
  throw std::invalid_argument("unknown functional kind: " + name);
}

namespace {

void check_inputs(const FunctionalSpec& spec, const Vec& u, const QuadratureWeights& w) {
  spec.validate();
  if (u.size() != w.values.size()) throw ShapeError("functional: u/w length mismatch");
  if (!u.allFinite()) throw NumericInputError("functional: non-finite trajectory values");
}

// Shared evaluation path for double and Dual scalars. `fetch(i)` yields u_i as S.
template <class S, class Fetch>
S value_impl(const FunctionalSpec& spec, int m, Fetch fetch, const QuadratureWeights& w) {
  using std::exp;
  using std::log;
  switch (spec.kind) {
    case FunctionalKind::Auc: {
      S acc{0.0};
      for (int i = 0; i < m; ++i) acc = acc + S(w.values[i]) * fetch(i);
      return acc;
    }
    case FunctionalKind::Tat: {
      S acc{0.0};
      for (int i = 0; i < m; ++i)
        acc = acc + S(w.values[i]) * sigmoid(S(spec.kappa) * (fetch(i) - S(spec.c_star)));
      return acc;
    }
    case FunctionalKind::SoftCmax: {
      // log-mean-exp with max subtraction
      double peak = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < m; ++i) {
        if constexpr (std::is_same_v<S, Dual>) {
          peak = std::max(peak, fetch(i).v);
        } else {
          peak = std::max(peak, double(fetch(i)));
        }
      }
      S acc{0.0};
      for (int i = 0; i < m; ++i)
        acc = acc + S(w.values[i]) * exp(S(spec.lambda) * fetch(i) - S(spec.lambda * peak));
      return (log(acc) + S(spec.lambda * peak)) / S(spec.lambda);
    }
    case FunctionalKind::SmoothExcess: {
      S acc{0.0};
      for (int i = 0; i < m; ++i)
        acc = acc + S(w.values[i]) * softplus(S(spec.kappa_star) * (fetch(i) - S(spec.c))) /
                        S(spec.kappa_star);
      return acc;
    }
  }
  throw std::logic_error("unreachable functional kind");
}

inline double exp_(double z) { return std::exp(z); }

}  // namespace

double functional_value(const FunctionalSpec& spec, const Vec& u, const QuadratureWeights& w) {
  check_inputs(spec, u, w);
  return value_impl<double>(spec, int(u.size()), [&](int i) { return u[i]; }, w);
}

Vec riesz_representer_wg(const FunctionalSpec& spec, const Vec& u, const QuadratureWeights& w) {
  check_inputs(spec, u, w);
  const int m = int(u.size());
  Vec r(m);
  switch (spec.kind) {
    case FunctionalKind::Auc:
      r.setOnes();
      break;
    case FunctionalKind::Tat:
      for (int i = 0; i < m; ++i) {
        const double s = sigmoid(spec.kappa * (u[i] - spec.c_star));
        r[i] = spec.kappa * s * (1.0 - s);
      }
      break;
    case FunctionalKind::SoftCmax: {
      const double peak = u.maxCoeff();
      double denom = 0.0;
      for (int i = 0; i < m; ++i) denom += w.values[i] * exp_(spec.lambda * (u[i] - peak));
      for (int i = 0; i < m; ++i) r[i] = exp_(spec.lambda * (u[i] - peak)) / denom;
      break;
    }
    case FunctionalKind::SmoothExcess:
      for (int i = 0; i < m; ++i) r[i] = sigmoid(spec.kappa_star * (u[i] - spec.c));
      break;
  }
  return r;
}

double functional_jvp(const FunctionalSpec& spec, const Vec& u, const Vec& b,
                      const QuadratureWeights& w) {
  check_inputs(spec, u, w);
  if (b.size() != u.size()) throw ShapeError("functional_jvp: u/b length mismatch");
  const Dual out =
      value_impl<Dual>(spec, int(u.size()), [&](int i) { return Dual(u[i], b[i]); }, w);
  return out.t;
}

Vec functional_gradient(const FunctionalSpec& spec, const Vec& u, const QuadratureWeights& w) {
  check_inputs(spec, u, w);
  const int m = int(u.size());
  Vec grad(m);
  for (int j = 0; j < m; ++j) {
    const Dual out = value_impl<Dual>(
        spec, m, [&](int i) { return Dual(u[i], i == j ? 1.0 : 0.0); }, w);
    grad[j] = out.t;
  }
  return grad;
}

}  // namespace dope
