#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dope/darcy.hpp"
#include "dope/harness.hpp"
#include "dope/pk.hpp"
#include "dope/selfcheck.hpp"

namespace {

using namespace dope;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out.good()) throw std::runtime_error("write failed for '" + path + "'");
}

Dataset generate(const std::string& dgp, double rho, int n, std::uint64_t seed) {
  if (dgp == "pk") return pk::generate_dataset(n, rho, seed);
  if (dgp == "darcy") return darcy::generate_dataset(n, seed);
  throw CLI::ValidationError("--dgp", "must be 'pk' or 'darcy'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased estimation of functionals of neural-operator predictions"};
  app.require_subcommand(1);

  std::string config_path, out_path, dgp = "pk", method = "dope-unstructured";
  std::uint64_t seed = 1;
  double rho = 0.25, kappa = 0.0;
  int n = 64;
  bool with_oracle = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--out", out_path, "output path");
  };

  auto* gen = app.add_subcommand("generate", "write a dataset JSON file");
  add_common(gen);
  gen->add_option("--dgp", dgp, "data-generating process: pk or darcy");
  gen->add_option("--rho", rho, "PK design irregularity in [0, 1]");
  gen->add_option("--kappa", kappa, "Darcy functional sweep value (metadata only)");
  gen->add_option("--n", n, "number of samples");
  gen->add_flag("--with-oracle", with_oracle, "include latent trajectories");

  auto* train = app.add_subcommand("train", "train a solution operator, write a checkpoint");
  add_common(train);
  train->add_option("--config", config_path, "dataset JSON to train on");
  train->add_option("--dgp", dgp, "DGP used when no --config dataset is given");
  train->add_option("--rho", rho, "PK design irregularity");
  train->add_option("--n", n, "training-set size when generating");

  auto* est = app.add_subcommand("estimate", "cross-fitted estimate on a dataset, write a report JSON");
  add_common(est);
  est->add_option("--config", config_path, "dataset JSON")->required();
  est->add_option("--method", method,
                  "plugin | dope-unstructured | dope-structured | dope-oracle");
  est->add_option("--kappa", kappa, "Darcy functional sweep value");

  auto* exp = app.add_subcommand("experiment", "run a sweep described by a config file");
  add_common(exp);
  exp->add_option("--config", config_path, "experiment config JSON")->required();

  auto* verify = app.add_subcommand("verify", "run the invariant/oracle self-checks");
  (void)verify;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      if (out_path.empty()) throw std::runtime_error("generate requires --out");
      Dataset data = generate(dgp, rho, n, seed);
      write_text(out_path, dataset_to_json(data, with_oracle).dump());
      std::cout << "wrote " << data.samples.size() << " samples to " << out_path
                << "\n";
    } else if (train->parsed()) {
      if (out_path.empty()) throw std::runtime_error("train requires --out");
      Dataset data = config_path.empty() ? generate(dgp, rho, n, seed)
                                         : dataset_from_json(read_json_file(config_path));
      const bool is_pk = data.dgp == DgpKind::Pk;
      const int rows = is_pk ? 1 : data.grid2d.height;
      const int cols = is_pk ? data.grid1d.delta : data.grid2d.width;
      auto backbone =
          is_pk ? BackboneConfig::fno1d_pk() : BackboneConfig::fno2d_darcy();
      auto params = train_solution_operator(data.samples, backbone, rows, cols,
                                            TrainConfig{}, seed);
      save_checkpoint(params, out_path);
      std::cout << "checkpoint " << params.config.hash() << " -> " << out_path
                << " (final loss " << params.meta.final_loss << ")\n";
    } else if (est->parsed()) {
      Dataset data = dataset_from_json(read_json_file(config_path));
      const bool is_pk = data.dgp == DgpKind::Pk;
      auto backbone =
          is_pk ? BackboneConfig::fno1d_pk() : BackboneConfig::fno2d_darcy();
      FunctionalSpec spec = is_pk ? FunctionalSpec::auc()
                                  : FunctionalSpec::smooth_excess_from_sweep(kappa);
      auto reports = run_method_matrix(data, {}, spec, backbone, {method}, 2,
                                       TrainConfig{}, 0.1, seed);
      const auto j = report_to_json(reports.at(0));
      if (out_path.empty())
        std::cout << j.dump(2) << "\n";
      else
        write_text(out_path, j.dump());
      std::cout << method << ": theta_hat = " << reports[0].theta_hat << " +- "
                << reports[0].se() << "\n";
    } else if (exp->parsed()) {
      auto config = config_from_json(read_json_file(config_path));
      if (!out_path.empty()) config.out_csv = out_path;
      auto rows = run_experiment(config);
      std::cout << rows.size() << " rows -> " << config.out_csv << "\n";
    } else if (verify->parsed()) {
      if (!run_selfcheck(std::cout)) return 2;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
