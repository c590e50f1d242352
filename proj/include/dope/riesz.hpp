#pragma once

#include <memory>

#include "dope/functionals.hpp"
#include "dope/operators.hpp"

namespace dope {

enum class BetaMode { Unstructured, Structured, Oracle };

const char* beta_mode_name(BetaMode mode);

// Debiasing weight beta(A)(x). Unstructured mode maps A straight to beta via a
// backbone; structured mode factors beta = xi_hat(A) * w_g(S_hat(A)) with a
// positive xi head; oracle mode is the closed form xi0 * w_g(S0(A)) and needs
// the latent trajectory.
struct BetaModel {
  BetaMode mode = BetaMode::Unstructured;
  FunctionalSpec spec;
  OperatorParams backbone;  // unstructured: beta; structured: log-xi head
  std::shared_ptr<const OperatorParams> s_hat;  // structured mode only

  // beta(A) on the full canonical grid.
  Vec evaluate(const Observation& obs, const QuadratureWeights& w) const;

  double parameter_sq_norm() const;
};

// Closed-form beta0 = xi0(A) * w_g(S0(A)) on the grid (simulation only).
Vec oracle_beta(const DesignWeights& design, const FunctionalSpec& spec,
                const Vec& latent_u, const QuadratureWeights& w);

// Empirical penalized Riesz objective of a candidate model over a batch:
// (1/n) sum_i [ (1/K_i) sum_k beta(A_i)(X_ik)^2
//               - 2 * d/dt g(S_hat(A_i) + t*beta(A_i)) ] + lambda * ||eta||^2.
double riesz_loss(const BetaModel& beta, const std::vector<Observation>& batch,
                  const FunctionalSpec& spec, const OperatorParams& s_hat,
                  double lambda_reg, const QuadratureWeights& w);

struct RieszConfig {
  TrainConfig train;
  double lambda_reg = 0.1;
};

// With rc.train.patience > 0 and a non-empty validation set, training stops
// once the validation Riesz loss has not improved for `patience` consecutive
// epochs, and the best-epoch weights are restored (the Riesz objective needs
// only inputs and observation locations, so no labels are consumed).
BetaModel train_riesz(const std::vector<Observation>& data, BetaMode mode,
                      const FunctionalSpec& spec,
                      std::shared_ptr<const OperatorParams> s_hat,
                      const RieszConfig& rc, std::uint64_t seed,
                      const std::vector<Observation>& val = {});

}  // namespace dope
