#pragma once

#include <string>

#include <json.hpp>

#include "dope/estimator.hpp"

namespace dope {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FunctionalSpec <-> {"kind": ..., params...}
nlohmann::json spec_to_json(const FunctionalSpec& spec);
FunctionalSpec spec_from_json(const nlohmann::json& j);

// Dataset JSON. PK: {dgp, grid: {T, delta}, samples: [{r, log_cl, log_v,
// obs_indices, y, p, latent_u?}]}. Darcy: {dgp, grid: {H, W}, samples: [{a,
// obs_indices, y, q, latent_u?}]}. latent_u is written only with_oracle.
nlohmann::json dataset_to_json(const Dataset& data, bool with_oracle);
Dataset dataset_from_json(const nlohmann::json& j);

nlohmann::json report_to_json(const EstimateReport& report);
EstimateReport report_from_json(const nlohmann::json& j);

// Parameter checkpoint, keyed by the backbone config hash. Loading a file
// whose stored hash disagrees with the hash recomputed from its own config
// block (i.e. a tampered or incompatible file) throws CheckpointError.
void save_checkpoint(const OperatorParams& params, const std::string& path);
OperatorParams load_checkpoint(const std::string& path);

}  // namespace dope
