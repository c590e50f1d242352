#pragma once

#include <functional>
#include <string>

#include "dope/riesz.hpp"

namespace dope {

struct DegenerateVarianceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fold labels for cross-fitting. Folds partition the sample; J >= 2.
struct FoldAssignment {
  int J = 2;
  std::vector<int> fold_of;

  static FoldAssignment make(int n, int J, std::uint64_t seed);
  void validate() const;
};

struct EstimateReport {
  double theta_hat = 0.0;
  Vec pseudo_outcomes;
  double variance_hat = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  std::string method;
  // meta
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<int> fold_of;
  bool degenerate_ci = false;
  std::vector<double> fold_s_loss, fold_beta_loss;

  double se() const { return std::sqrt(variance_hat); }
  void check_invariants() const;
};

// Nuisances as grid-level maps so corrupted/oracle variants share one
// estimation path.
using SurrogateFn = std::function<Vec(const Observation&)>;  // A -> u on grid
using BetaFn = std::function<Vec(const Observation&)>;       // A -> beta on grid

SurrogateFn surrogate_from(const OperatorParams& params);
BetaFn beta_from(const BetaModel& model, const QuadratureWeights& w);

// psi~ = g(S(A)) + (1/K) sum_k beta(A)(X_k) (Y_k - S(A)(X_k))
double pseudo_outcome(const SurrogateFn& s, const BetaFn& beta,
                      const Observation& obs, const FunctionalSpec& spec,
                      const QuadratureWeights& w);
double pseudo_outcome(const OperatorParams& s_hat, const BetaModel& beta,
                      const Observation& obs, const FunctionalSpec& spec,
                      const QuadratureWeights& w);

// V = (1/n^2) sum (psi_i - mean)^2; CI = mean +- 1.96 sqrt(V)
std::pair<double, std::pair<double, double>> variance_and_ci(const Vec& pseudo_outcomes);

EstimateReport plugin_estimate(const SurrogateFn& s,
                               const std::vector<Observation>& inputs,
                               const FunctionalSpec& spec, const QuadratureWeights& w);

struct CrossfitConfig {
  int J = 2;
  BetaMode beta_mode = BetaMode::Unstructured;
  TrainConfig train;
  double lambda_reg = 0.1;
};

// Algorithm: per fold, train S-hat then beta-hat on the complement (plus the
// optional extra training pool, which never enters evaluation), evaluate
// pseudo-outcomes on the fold.
EstimateReport dope_crossfit(const Dataset& data, const FunctionalSpec& spec,
                             const BackboneConfig& backbone,
                             const CrossfitConfig& cc, std::uint64_t seed,
                             const std::vector<Observation>* extra_train = nullptr);

// PPI: plug-in average over labeled + unlabeled inputs, correction from the
// labeled samples only.
EstimateReport ppi_estimate(const std::vector<Observation>& labeled,
                            const std::vector<Observation>& unlabeled_inputs,
                            const SurrogateFn& s, const BetaFn& beta,
                            const FunctionalSpec& spec, const QuadratureWeights& w);

// corrupted = oracle + (1+delta) * (fitted - oracle), pointwise on the grid
SurrogateFn corrupt_surrogate(const OperatorParams& fitted, double delta);
BetaFn corrupt_beta(const BetaModel& fitted, const FunctionalSpec& spec,
                    const QuadratureWeights& w, double delta);

}  // namespace dope
