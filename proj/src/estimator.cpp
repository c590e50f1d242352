#include "dope/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dope {

namespace {
constexpr double kZ95 = 1.959963984540054;

std::uint64_t derive_seed(std::uint64_t seed, std::string_view role,
                          std::uint64_t a) {
  return detail::mix(detail::mix(detail::splitmix64(seed), detail::hash_label(role)),
                     a);
}
}  // namespace

FoldAssignment FoldAssignment::make(int n, int J, std::uint64_t seed) {
  if (J < 2) throw ConfigError("cross-fitting needs J >= 2");
  if (n < 2 * J) throw ConfigError("cross-fitting needs at least 2 samples per fold");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream(seed, "folds");
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  FoldAssignment fa;
  fa.J = J;
  fa.fold_of.assign(n, 0);
  for (int i = 0; i < n; ++i) fa.fold_of[order[i]] = i % J;
  fa.validate();
  return fa;
}

void FoldAssignment::validate() const {
  std::vector<int> count(J, 0);
  for (int f : fold_of) {
    if (f < 0 || f >= J) throw ConfigError("fold index out of range");
    ++count[f];
  }
  for (int c : count)
    if (c == 0) throw ConfigError("empty fold");
}

void EstimateReport::check_invariants() const {
  if (variance_hat < 0.0) throw std::logic_error("report: negative variance");
  if (pseudo_outcomes.size() > 0 &&
      std::abs(pseudo_outcomes.mean() - theta_hat) > 1e-12 *
          std::max(1.0, std::abs(theta_hat)))
    throw std::logic_error("report: pseudo-outcome mean != theta_hat");
  if (ci_low > theta_hat || ci_high < theta_hat)
    throw std::logic_error("report: CI does not contain theta_hat");
}

SurrogateFn surrogate_from(const OperatorParams& params) {
  return [&params](const Observation& obs) {
    return operator_predict(params, obs.channels);
  };
}

BetaFn beta_from(const BetaModel& model, const QuadratureWeights& w) {
  return [&model, &w](const Observation& obs) { return model.evaluate(obs, w); };
}

double pseudo_outcome(const SurrogateFn& s, const BetaFn& beta,
                      const Observation& obs, const FunctionalSpec& spec,
                      const QuadratureWeights& w) {
  Vec u_hat = s(obs);
  if (u_hat.size() != w.values.size())
    throw ShapeError("pseudo_outcome: surrogate output does not match grid");
  Vec b = beta(obs);
  double corr = 0.0;
  for (int k = 0; k < obs.num_obs(); ++k) {
    const int x = obs.obs_indices[k];
    if (x < 0 || x >= u_hat.size())
      throw std::out_of_range("pseudo_outcome: observation index outside grid");
    corr += b[x] * (obs.y[k] - u_hat[x]);
  }
  corr /= obs.num_obs();
  return functional_value(spec, u_hat, w) + corr;
}

double pseudo_outcome(const OperatorParams& s_hat, const BetaModel& beta,
                      const Observation& obs, const FunctionalSpec& spec,
                      const QuadratureWeights& w) {
  return pseudo_outcome(surrogate_from(s_hat), beta_from(beta, w), obs, spec, w);
}

std::pair<double, std::pair<double, double>> variance_and_ci(const Vec& psi) {
  const int n = static_cast<int>(psi.size());
  if (n < 2) throw DegenerateVarianceError("variance needs n >= 2");
  const double theta = psi.mean();
  const double v = (psi.array() - theta).square().sum() / (double(n) * n);
  const double half = kZ95 * std::sqrt(v);
  return {v, {theta - half, theta + half}};
}

EstimateReport plugin_estimate(const SurrogateFn& s,
                               const std::vector<Observation>& inputs,
                               const FunctionalSpec& spec,
                               const QuadratureWeights& w) {
  if (inputs.empty()) throw std::invalid_argument("plugin_estimate: empty input");
  EstimateReport r;
  r.method = "plugin";
  const int n = static_cast<int>(inputs.size());
  r.pseudo_outcomes.resize(n);
  for (int i = 0; i < n; ++i)
    r.pseudo_outcomes[i] = functional_value(spec, s(inputs[i]), w);
  r.theta_hat = r.pseudo_outcomes.mean();
  if (n == 1) {
    r.variance_hat = 0.0;
    r.degenerate_ci = true;
    r.ci_low = r.ci_high = r.theta_hat;
  } else {
    // sample variance of the plug-in values divided by n
    const double sv =
        (r.pseudo_outcomes.array() - r.theta_hat).square().sum() / (n - 1.0);
    r.variance_hat = sv / n;
    const double half = kZ95 * std::sqrt(r.variance_hat);
    r.ci_low = r.theta_hat - half;
    r.ci_high = r.theta_hat + half;
  }
  r.check_invariants();
  return r;
}

EstimateReport dope_crossfit(const Dataset& data, const FunctionalSpec& spec,
                             const BackboneConfig& backbone,
                             const CrossfitConfig& cc, std::uint64_t seed,
                             const std::vector<Observation>* extra_train) {
  spec.validate();
  const int n = static_cast<int>(data.samples.size());
  FoldAssignment folds = FoldAssignment::make(n, cc.J, seed);
  const int rows = data.dgp == DgpKind::Darcy ? data.grid2d.height : 1;
  const int cols = data.dgp == DgpKind::Darcy ? data.grid2d.width
                                              : data.grid1d.delta;

  EstimateReport r;
  r.method = std::string("dope-") + beta_mode_name(cc.beta_mode);
  r.seed = seed;
  r.config_hash = backbone.hash();
  r.fold_of = folds.fold_of;
  r.pseudo_outcomes.resize(n);

  for (int j = 0; j < cc.J; ++j) {
    std::vector<Observation> train_set;
    for (int i = 0; i < n; ++i)
      if (folds.fold_of[i] != j) train_set.push_back(data.samples[i]);
    if (extra_train)
      train_set.insert(train_set.end(), extra_train->begin(), extra_train->end());

    OperatorParams s_hat;
    std::shared_ptr<const OperatorParams> s_ptr;
    BetaModel beta;
    if (cc.beta_mode == BetaMode::Oracle) {
      s_hat = train_solution_operator(train_set, backbone, rows, cols, cc.train,
                                      derive_seed(seed, "s-hat", j));
      beta = train_riesz({}, BetaMode::Oracle, spec, nullptr, {}, 0);
      r.fold_s_loss.push_back(s_hat.meta.final_loss);
      r.fold_beta_loss.push_back(0.0);
    } else {
      s_hat = train_solution_operator(train_set, backbone, rows, cols, cc.train,
                                      derive_seed(seed, "s-hat", j));
      s_ptr = std::make_shared<const OperatorParams>(s_hat);
      RieszConfig rc;
      rc.train = cc.train;
      rc.lambda_reg = cc.lambda_reg;
      beta = train_riesz(train_set, cc.beta_mode, spec, s_ptr, rc,
                         derive_seed(seed, "beta", j));
      r.fold_s_loss.push_back(s_hat.meta.final_loss);
      r.fold_beta_loss.push_back(beta.backbone.meta.final_loss);
    }

    for (int i = 0; i < n; ++i)
      if (folds.fold_of[i] == j)
        r.pseudo_outcomes[i] =
            pseudo_outcome(s_hat, beta, data.samples[i], spec, data.quadrature);
  }

  auto [v, ci] = variance_and_ci(r.pseudo_outcomes);
  r.theta_hat = r.pseudo_outcomes.mean();
  r.variance_hat = v;
  r.ci_low = ci.first;
  r.ci_high = ci.second;
  r.check_invariants();
  return r;
}

EstimateReport ppi_estimate(const std::vector<Observation>& labeled,
                            const std::vector<Observation>& unlabeled_inputs,
                            const SurrogateFn& s, const BetaFn& beta,
                            const FunctionalSpec& spec, const QuadratureWeights& w) {
  if (labeled.empty())
    throw std::invalid_argument("ppi_estimate: correction undefined with n1 = 0");
  const int n1 = static_cast<int>(labeled.size());
  const int n2 = static_cast<int>(unlabeled_inputs.size());
  const int nt = n1 + n2;

  Vec plug(nt), corr(n1);
  for (int i = 0; i < n1; ++i) {
    const Observation& obs = labeled[i];
    Vec u_hat = s(obs);
    plug[i] = functional_value(spec, u_hat, w);
    Vec b = beta(obs);
    double c = 0.0;
    for (int k = 0; k < obs.num_obs(); ++k)
      c += b[obs.obs_indices[k]] * (obs.y[k] - u_hat[obs.obs_indices[k]]);
    corr[i] = c / obs.num_obs();
  }
  for (int i = 0; i < n2; ++i)
    plug[n1 + i] = functional_value(spec, s(unlabeled_inputs[i]), w);

  EstimateReport r;
  r.method = "dope-ppi";
  r.theta_hat = plug.mean() + corr.mean();
  // per-sample values whose mean is theta_hat: inflate the labeled corrections
  r.pseudo_outcomes = plug;
  for (int i = 0; i < n1; ++i)
    r.pseudo_outcomes[i] += double(nt) / n1 * corr[i];
  // independent-term variance: plug-in spread over all inputs, correction
  // spread over labeled only
  const double v_plug =
      nt >= 2 ? (plug.array() - plug.mean()).square().sum() / (double(nt) * nt) : 0.0;
  const double v_corr =
      n1 >= 2 ? (corr.array() - corr.mean()).square().sum() / (double(n1) * n1) : 0.0;
  r.variance_hat = v_plug + v_corr;
  const double half = kZ95 * r.se();
  r.ci_low = r.theta_hat - half;
  r.ci_high = r.theta_hat + half;
  r.degenerate_ci = (nt < 2 || n1 < 2);
  r.check_invariants();
  return r;
}

SurrogateFn corrupt_surrogate(const OperatorParams& fitted, double delta) {
  if (delta < 0.0 || delta > 0.5)
    throw std::invalid_argument("corrupt_surrogate: delta outside [0, 0.5]");
  return [&fitted, delta](const Observation& obs) {
    Vec f = operator_predict(fitted, obs.channels);
    const Vec& oracle = obs.latent_for_oracle();
    return (oracle + (1.0 + delta) * (f - oracle)).eval();
  };
}

BetaFn corrupt_beta(const BetaModel& fitted, const FunctionalSpec& spec,
                    const QuadratureWeights& w, double delta) {
  if (delta < 0.0 || delta > 0.5)
    throw std::invalid_argument("corrupt_beta: delta outside [0, 0.5]");
  return [&fitted, spec, &w, delta](const Observation& obs) {
    Vec f = fitted.evaluate(obs, w);
    Vec oracle = oracle_beta(obs.design, spec, obs.latent_for_oracle(), w);
    return (oracle + (1.0 + delta) * (f - oracle)).eval();
  };
}

}  // namespace dope
