#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dope/serialize.hpp"

namespace dope {

struct ResultRow {
  std::string method;
  std::string functional;
  double sweep_value = 0.0;
  int repeat = 0;
  double theta_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double truth = 0.0;
  int covered = 0;  // 1 iff ci_low <= truth <= ci_high
  double wall_time_s = 0.0;
};

bool operator==(const ResultRow& a, const ResultRow& b);

// RFC-4180 CSV with a header in ResultRow field order.
std::string emit_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_csv(const std::string& text);

enum class SweepKind { Rho, Kappa, Delta, N2 };

const char* sweep_kind_name(SweepKind k);
SweepKind sweep_kind_from_name(const std::string& name);

struct ExperimentConfig {
  DgpKind dgp = DgpKind::Pk;
  FunctionalSpec functional = FunctionalSpec::auc();
  SweepKind sweep = SweepKind::Rho;
  std::vector<double> sweep_values;
  std::vector<std::string> methods;  // plugin, dope-unstructured, dope-structured, dope-oracle
  int repeats = 50;
  int n_train = 256;  // nuisance training pool
  int n_eval = 64;    // estimation sample
  int n_unlabeled = 64;  // PPI pool (N2 sweep scales this by the sweep value)
  int folds = 2;
  TrainConfig train;
  double lambda_reg = 0.1;
  double fixed_rho = 0.25;  // PK design irregularity for delta/n2 sweeps
  std::uint64_t base_seed = 1;
  std::uint64_t truth_seed = 900001;  // disjoint from estimation seeds
  int truth_pool = 2000;
  std::string out_csv = "results.csv";
  std::string out_plot;      // optional SVG path
  std::string cache_dir = ".";

  void validate() const;
  BackboneConfig backbone() const;  // preset implied by the DGP
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);

// theta_0 = mean of g(S_0(A)) over a dedicated 2000-sample pool, cached on
// disk keyed by (dgp, functional, pool config).
double ground_truth(DgpKind dgp, const FunctionalSpec& spec,
                    std::uint64_t truth_seed, int pool_size,
                    const std::string& cache_dir);

// Per-fold trained solution operators plus their training complements. The
// expensive part of cross-fitting, shared across methods (and, for Darcy
// functional sweeps where the data do not depend on the sweep value, across
// sweep points).
struct CrossfitFolds {
  FoldAssignment folds;
  std::vector<std::shared_ptr<const OperatorParams>> s_hat;    // per fold
  std::vector<std::vector<Observation>> train_sets;            // per fold
  std::vector<std::vector<Observation>> val_sets;              // per fold, may be empty
};

CrossfitFolds prepare_folds(const Dataset& eval_data,
                            const std::vector<Observation>& train_pool,
                            const BackboneConfig& backbone, int folds,
                            const TrainConfig& tc, std::uint64_t seed,
                            const std::vector<Observation>& val = {});

// method: plugin | dope-unstructured | dope-structured | dope-oracle
EstimateReport estimate_with_folds(const CrossfitFolds& cf, const Dataset& eval_data,
                                   const FunctionalSpec& spec, const std::string& method,
                                   const TrainConfig& tc, double lambda_reg,
                                   std::uint64_t seed);

// One repeat of the method matrix on a shared dataset: the per-fold solution
// operator is trained once and reused by every method.
std::vector<EstimateReport> run_method_matrix(const Dataset& eval_data,
                                              const std::vector<Observation>& train_pool,
                                              const FunctionalSpec& spec,
                                              const BackboneConfig& backbone,
                                              const std::vector<std::string>& methods,
                                              int folds, const TrainConfig& tc,
                                              double lambda_reg, std::uint64_t seed);

std::vector<ResultRow> run_experiment(const ExperimentConfig& config);

// RMSE over repeats with a delta-method standard error.
std::pair<double, double> aggregate_rmse(const std::vector<ResultRow>& rows,
                                         double truth);
double aggregate_coverage(const std::vector<ResultRow>& rows);

enum class PlotKind { Rmse, Coverage };

// Self-contained SVG line plot of the per-(method, sweep value) aggregate.
// The plotted values are embedded as data attributes so they can be parsed
// back exactly.
void emit_plot(const std::vector<ResultRow>& rows, PlotKind kind,
               const std::string& path);

struct PlotPoint {
  std::string series;
  double x = 0.0;
  double y = 0.0;
};
std::vector<PlotPoint> parse_plot(const std::string& path);

}  // namespace dope
