#include "dope/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "dope/darcy.hpp"
#include "dope/pk.hpp"

namespace dope {

using nlohmann::json;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view role,
                          std::uint64_t a = 0) {
  return detail::mix(detail::mix(detail::splitmix64(seed), detail::hash_label(role)), a);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// Splits one RFC-4180 record starting at `pos`; advances `pos` past it.
std::vector<std::string> csv_record(const std::string& text, size_t& pos) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  while (pos < text.size()) {
    char c = text[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          cur += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      fields.push_back(std::move(cur));
      return fields;
    } else {
      cur += c;
    }
    ++pos;
  }
  fields.push_back(std::move(cur));
  return fields;
}

constexpr const char* kCsvHeader =
    "method,functional,sweep_value,repeat,theta_hat,se,ci_low,ci_high,truth,"
    "covered,wall_time_s";

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    out << content;
    if (!out.good()) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move '" + tmp + "' into place");
}

}  // namespace

bool operator==(const ResultRow& a, const ResultRow& b) {
  return a.method == b.method && a.functional == b.functional &&
         a.sweep_value == b.sweep_value && a.repeat == b.repeat &&
         a.theta_hat == b.theta_hat && a.se == b.se && a.ci_low == b.ci_low &&
         a.ci_high == b.ci_high && a.truth == b.truth && a.covered == b.covered &&
         a.wall_time_s == b.wall_time_s;
}

std::string emit_csv(const std::vector<ResultRow>& rows) {
  std::string out = kCsvHeader;
  out += "\r\n";
  for (const auto& r : rows) {
    out += csv_quote(r.method) + ',' + csv_quote(r.functional) + ',' +
           fmt_double(r.sweep_value) + ',' + std::to_string(r.repeat) + ',' +
           fmt_double(r.theta_hat) + ',' + fmt_double(r.se) + ',' +
           fmt_double(r.ci_low) + ',' + fmt_double(r.ci_high) + ',' +
           fmt_double(r.truth) + ',' + std::to_string(r.covered) + ',' +
           fmt_double(r.wall_time_s) + "\r\n";
  }
  return out;
}

std::vector<ResultRow> parse_csv(const std::string& text) {
  size_t pos = 0;
  auto header = csv_record(text, pos);
  if (header.size() != 11) throw std::invalid_argument("CSV: bad header");
  std::vector<ResultRow> rows;
  while (pos < text.size()) {
    auto f = csv_record(text, pos);
    if (f.size() == 1 && f[0].empty()) continue;  // trailing newline
    if (f.size() != 11) throw std::invalid_argument("CSV: bad record");
    ResultRow r;
    r.method = f[0];
    r.functional = f[1];
    r.sweep_value = std::stod(f[2]);
    r.repeat = std::stoi(f[3]);
    r.theta_hat = std::stod(f[4]);
    r.se = std::stod(f[5]);
    r.ci_low = std::stod(f[6]);
    r.ci_high = std::stod(f[7]);
    r.truth = std::stod(f[8]);
    r.covered = std::stoi(f[9]);
    r.wall_time_s = std::stod(f[10]);
    rows.push_back(std::move(r));
  }
  return rows;
}

const char* sweep_kind_name(SweepKind k) {
  switch (k) {
    case SweepKind::Rho: return "rho";
    case SweepKind::Kappa: return "kappa";
    case SweepKind::Delta: return "delta";
    case SweepKind::N2: return "n2";
  }
  throw std::logic_error("unreachable");
}

SweepKind sweep_kind_from_name(const std::string& name) {
  if (name == "rho") return SweepKind::Rho;
  if (name == "kappa") return SweepKind::Kappa;
  if (name == "delta") return SweepKind::Delta;
  if (name == "n2") return SweepKind::N2;
  throw std::invalid_argument("unknown sweep kind '" + name + "'");
}

void ExperimentConfig::validate() const {
  if (repeats < 1) throw std::invalid_argument("config: repeats must be >= 1");
  if (sweep_values.empty()) throw std::invalid_argument("config: empty sweep");
  if (methods.empty()) throw std::invalid_argument("config: no methods");
  for (double v : sweep_values) {
    switch (sweep) {
      case SweepKind::Rho:
      case SweepKind::Kappa:
        if (v < 0.0 || v > 1.0)
          throw std::invalid_argument("config: sweep value outside [0, 1]");
        break;
      case SweepKind::Delta:
        if (v < 0.0 || v > 0.5)
          throw std::invalid_argument("config: delta outside [0, 0.5]");
        break;
      case SweepKind::N2:
        if (v < 0.0 || v != std::floor(v))
          throw std::invalid_argument("config: n2 must be a nonnegative integer");
        break;
    }
  }
  if (sweep == SweepKind::Kappa && dgp != DgpKind::Darcy)
    throw std::invalid_argument("config: kappa sweep requires the darcy dgp");
  if (sweep == SweepKind::Rho && dgp != DgpKind::Pk)
    throw std::invalid_argument("config: rho sweep requires the pk dgp");
  if (n_eval < 2 * folds || n_train < 0 || folds < 2)
    throw std::invalid_argument("config: invalid split sizes");
  if (train.epochs < 0 || train.batch < 1 || train.patience < 0 ||
      train.min_epochs < 0)
    throw std::invalid_argument("config: invalid training settings");
  functional.validate();
}

BackboneConfig ExperimentConfig::backbone() const {
  return dgp == DgpKind::Pk ? BackboneConfig::fno1d_pk()
                            : BackboneConfig::fno2d_darcy();
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  const std::string dgp = j.at("dgp").get<std::string>();
  if (dgp == "pk") c.dgp = DgpKind::Pk;
  else if (dgp == "darcy") c.dgp = DgpKind::Darcy;
  else throw std::invalid_argument("config: unknown dgp '" + dgp + "'");
  c.functional = spec_from_json(j.at("functional"));
  c.sweep = sweep_kind_from_name(j.at("sweep").get<std::string>());
  c.sweep_values = j.at("sweep_values").get<std::vector<double>>();
  c.methods = j.at("methods").get<std::vector<std::string>>();
  c.repeats = j.value("repeats", c.repeats);
  c.n_train = j.value("n_train", c.n_train);
  c.n_eval = j.value("n_eval", c.n_eval);
  c.n_unlabeled = j.value("n_unlabeled", c.n_unlabeled);
  c.folds = j.value("folds", c.folds);
  c.train.epochs = j.value("epochs", c.train.epochs);
  c.train.batch = j.value("batch", c.train.batch);
  c.train.patience = j.value("patience", c.train.patience);
  c.train.min_epochs = j.value("min_epochs", c.train.min_epochs);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.fixed_rho = j.value("fixed_rho", c.fixed_rho);
  c.base_seed = j.value("base_seed", c.base_seed);
  c.truth_seed = j.value("truth_seed", c.truth_seed);
  c.truth_pool = j.value("truth_pool", c.truth_pool);
  c.out_csv = j.value("out_csv", c.out_csv);
  c.out_plot = j.value("out_plot", c.out_plot);
  c.cache_dir = j.value("cache_dir", c.cache_dir);
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["dgp"] = c.dgp == DgpKind::Pk ? "pk" : "darcy";
  j["functional"] = spec_to_json(c.functional);
  j["sweep"] = sweep_kind_name(c.sweep);
  j["sweep_values"] = c.sweep_values;
  j["methods"] = c.methods;
  j["repeats"] = c.repeats;
  j["n_train"] = c.n_train;
  j["n_eval"] = c.n_eval;
  j["n_unlabeled"] = c.n_unlabeled;
  j["folds"] = c.folds;
  j["epochs"] = c.train.epochs;
  j["batch"] = c.train.batch;
  j["patience"] = c.train.patience;
  j["min_epochs"] = c.train.min_epochs;
  j["lambda_reg"] = c.lambda_reg;
  j["fixed_rho"] = c.fixed_rho;
  j["base_seed"] = c.base_seed;
  j["truth_seed"] = c.truth_seed;
  j["truth_pool"] = c.truth_pool;
  j["out_csv"] = c.out_csv;
  j["out_plot"] = c.out_plot;
  j["cache_dir"] = c.cache_dir;
  return j;
}

double ground_truth(DgpKind dgp, const FunctionalSpec& spec,
                    std::uint64_t truth_seed, int pool_size,
                    const std::string& cache_dir) {
  json key;
  key["dgp"] = dgp == DgpKind::Pk ? "pk" : "darcy";
  key["functional"] = spec_to_json(spec);
  key["truth_seed"] = truth_seed;
  key["pool_size"] = pool_size;
  const std::string key_str = key.dump();
  char name[64];
  std::snprintf(name, sizeof(name), "truth_%016" PRIx64 ".json",
                detail::hash_label(key_str));
  const std::string path = cache_dir + "/" + name;

  {
    std::ifstream in(path);
    if (in) {
      json cached;
      in >> cached;
      if (cached.value("key", "") == key_str) return cached.at("theta").get<double>();
    }
  }

  Dataset pool = dgp == DgpKind::Pk
                     ? pk::generate_dataset(pool_size, 0.0, truth_seed)
                     : darcy::generate_dataset(pool_size, truth_seed);
  double theta = 0.0;
  for (const auto& obs : pool.samples)
    theta += functional_value(spec, obs.latent_for_oracle(), pool.quadrature);
  theta /= pool_size;

  json out;
  out["key"] = key_str;
  out["theta"] = theta;
  write_atomic(path, out.dump());
  return theta;
}

CrossfitFolds prepare_folds(const Dataset& eval_data,
                            const std::vector<Observation>& train_pool,
                            const BackboneConfig& backbone, int folds,
                            const TrainConfig& tc, std::uint64_t seed,
                            const std::vector<Observation>& val) {
  const int n = static_cast<int>(eval_data.samples.size());
  CrossfitFolds cf;
  cf.folds = FoldAssignment::make(n, folds, seed);
  const int rows = eval_data.dgp == DgpKind::Darcy ? eval_data.grid2d.height : 1;
  const int cols = eval_data.dgp == DgpKind::Darcy ? eval_data.grid2d.width
                                                   : eval_data.grid1d.delta;
  for (int j = 0; j < folds; ++j) {
    std::vector<Observation> train_set;
    for (int i = 0; i < n; ++i)
      if (cf.folds.fold_of[i] != j) train_set.push_back(eval_data.samples[i]);
    train_set.insert(train_set.end(), train_pool.begin(), train_pool.end());
    // each fold early-stops on its own disjoint slice of the validation split
    // so that the per-fold trainings stay independent
    const std::size_t lo = j * val.size() / folds;
    const std::size_t hi = (j + 1) * val.size() / folds;
    std::vector<Observation> fold_val(val.begin() + lo, val.begin() + hi);
    auto s = train_solution_operator(train_set, backbone, rows, cols, tc,
                                     derive_seed(seed, "s-hat", j), fold_val);
    cf.s_hat.push_back(std::make_shared<const OperatorParams>(std::move(s)));
    cf.train_sets.push_back(std::move(train_set));
    cf.val_sets.push_back(std::move(fold_val));
  }
  return cf;
}

EstimateReport estimate_with_folds(const CrossfitFolds& cf, const Dataset& eval_data,
                                   const FunctionalSpec& spec, const std::string& method,
                                   const TrainConfig& tc, double lambda_reg,
                                   std::uint64_t seed) {
  const int n = static_cast<int>(eval_data.samples.size());
  const int J = cf.folds.J;

  EstimateReport r;
  r.method = method;
  r.seed = seed;
  r.config_hash = cf.s_hat.at(0)->config.hash();
  r.fold_of = cf.folds.fold_of;
  r.pseudo_outcomes.resize(n);

  if (method == "plugin") {
    for (int i = 0; i < n; ++i) {
      const auto& s = *cf.s_hat[cf.folds.fold_of[i]];
      r.pseudo_outcomes[i] = functional_value(
          spec, operator_predict(s, eval_data.samples[i].channels),
          eval_data.quadrature);
    }
    r.theta_hat = r.pseudo_outcomes.mean();
    const double sv =
        (r.pseudo_outcomes.array() - r.theta_hat).square().sum() / (n - 1.0);
    r.variance_hat = sv / n;
    const double half = 1.959963984540054 * r.se();
    r.ci_low = r.theta_hat - half;
    r.ci_high = r.theta_hat + half;
    r.check_invariants();
    return r;
  }

  BetaMode mode;
  if (method == "dope-unstructured") mode = BetaMode::Unstructured;
  else if (method == "dope-structured") mode = BetaMode::Structured;
  else if (method == "dope-oracle") mode = BetaMode::Oracle;
  else throw std::invalid_argument("unknown method '" + method + "'");

  for (int j = 0; j < J; ++j) {
    BetaModel beta;
    if (mode == BetaMode::Oracle) {
      beta = train_riesz({}, BetaMode::Oracle, spec, nullptr, {}, 0);
      r.fold_beta_loss.push_back(0.0);
    } else {
      RieszConfig rc;
      rc.train = tc;
      rc.lambda_reg = lambda_reg;
      beta = train_riesz(cf.train_sets[j], mode, spec, cf.s_hat[j], rc,
                         derive_seed(seed, "beta", j),
                         j < int(cf.val_sets.size()) ? cf.val_sets[j]
                                                     : std::vector<Observation>{});
      r.fold_beta_loss.push_back(beta.backbone.meta.final_loss);
    }
    r.fold_s_loss.push_back(cf.s_hat[j]->meta.final_loss);
    for (int i = 0; i < n; ++i)
      if (cf.folds.fold_of[i] == j)
        r.pseudo_outcomes[i] = pseudo_outcome(*cf.s_hat[j], beta,
                                              eval_data.samples[i], spec,
                                              eval_data.quadrature);
  }

  auto [v, ci] = variance_and_ci(r.pseudo_outcomes);
  r.theta_hat = r.pseudo_outcomes.mean();
  r.variance_hat = v;
  r.ci_low = ci.first;
  r.ci_high = ci.second;
  r.check_invariants();
  return r;
}

std::vector<EstimateReport> run_method_matrix(const Dataset& eval_data,
                                              const std::vector<Observation>& train_pool,
                                              const FunctionalSpec& spec,
                                              const BackboneConfig& backbone,
                                              const std::vector<std::string>& methods,
                                              int folds, const TrainConfig& tc,
                                              double lambda_reg, std::uint64_t seed) {
  CrossfitFolds cf = prepare_folds(eval_data, train_pool, backbone, folds, tc, seed);
  std::vector<EstimateReport> reports;
  for (const auto& m : methods)
    reports.push_back(estimate_with_folds(cf, eval_data, spec, m, tc, lambda_reg, seed));
  return reports;
}

namespace {

struct RepeatData {
  Dataset eval;
  std::vector<Observation> train_pool;
  std::vector<Observation> val;  // early-stopping validation split (optional)
};

RepeatData generate_repeat(const ExperimentConfig& cfg, double rho,
                           std::uint64_t seed) {
  RepeatData d;
  if (cfg.dgp == DgpKind::Pk) {
    d.eval = pk::generate_dataset(cfg.n_eval, rho, derive_seed(seed, "eval"));
    if (cfg.n_train > 0)
      d.train_pool =
          pk::generate_dataset(cfg.n_train, rho, derive_seed(seed, "train")).samples;
    if (cfg.train.patience > 0)
      d.val = pk::generate_dataset(cfg.n_eval, rho, derive_seed(seed, "val")).samples;
  } else {
    d.eval = darcy::generate_dataset(cfg.n_eval, derive_seed(seed, "eval"));
    if (cfg.n_train > 0)
      d.train_pool =
          darcy::generate_dataset(cfg.n_train, derive_seed(seed, "train")).samples;
    if (cfg.train.patience > 0)
      d.val = darcy::generate_dataset(cfg.n_eval, derive_seed(seed, "val")).samples;
  }
  return d;
}

ResultRow make_row(const EstimateReport& rep, const FunctionalSpec& spec,
                   double sweep_value, int repeat, double truth, double wall_s) {
  ResultRow row;
  row.method = rep.method;
  row.functional = functional_kind_name(spec.kind);
  row.sweep_value = sweep_value;
  row.repeat = repeat;
  row.theta_hat = rep.theta_hat;
  row.se = rep.se();
  row.ci_low = rep.ci_low;
  row.ci_high = rep.ci_high;
  row.truth = truth;
  row.covered = (rep.ci_low <= truth && truth <= rep.ci_high) ? 1 : 0;
  row.wall_time_s = wall_s;
  return row;
}

ResultRow error_row(const std::string& method, const FunctionalSpec& spec,
                    double sweep_value, int repeat, double truth) {
  ResultRow row;
  row.method = method;
  row.functional = functional_kind_name(spec.kind);
  row.sweep_value = sweep_value;
  row.repeat = repeat;
  row.theta_hat = std::nan("");
  row.se = std::nan("");
  row.ci_low = std::nan("");
  row.ci_high = std::nan("");
  row.truth = truth;
  row.covered = 0;
  row.wall_time_s = 0.0;
  return row;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// rho / kappa sweeps: full method matrix with cross-fitting
void run_sweep_crossfit(const ExperimentConfig& cfg, std::vector<ResultRow>& rows) {
  for (size_t si = 0; si < cfg.sweep_values.size(); ++si) {
    const double sv = cfg.sweep_values[si];
    const FunctionalSpec spec = cfg.sweep == SweepKind::Kappa
                                    ? FunctionalSpec::smooth_excess_from_sweep(sv)
                                    : cfg.functional;
    const double truth = ground_truth(cfg.dgp, spec, cfg.truth_seed,
                                      cfg.truth_pool, cfg.cache_dir);
    const double rho = cfg.sweep == SweepKind::Rho ? sv : cfg.fixed_rho;
    for (int rep = 0; rep < cfg.repeats; ++rep) {
      const std::uint64_t seed = cfg.base_seed + 1000 * std::uint64_t(rep) + si;
      std::optional<RepeatData> data;
      std::optional<CrossfitFolds> cf;
      for (const auto& m : cfg.methods) {
        const double t0 = now_s();
        try {
          if (!data) data = generate_repeat(cfg, rho, seed);
          if (!cf)
            cf = prepare_folds(data->eval, data->train_pool, cfg.backbone(),
                               cfg.folds, cfg.train, seed, data->val);
          auto rep_out = estimate_with_folds(*cf, data->eval, spec, m, cfg.train,
                                             cfg.lambda_reg, seed);
          rows.push_back(make_row(rep_out, spec, sv, rep, truth, now_s() - t0));
        } catch (const std::exception&) {
          rows.push_back(error_row(m, spec, sv, rep, truth));
        }
      }
    }
  }
}

// delta sweep: one fit per repeat, corrupted at each delta (both nuisances)
void run_sweep_delta(const ExperimentConfig& cfg, std::vector<ResultRow>& rows) {
  const FunctionalSpec spec = cfg.functional;
  const double truth = ground_truth(cfg.dgp, spec, cfg.truth_seed, cfg.truth_pool,
                                    cfg.cache_dir);
  const int rows_g = cfg.dgp == DgpKind::Darcy ? 17 : 1;
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t seed = cfg.base_seed + 1000 * std::uint64_t(rep);
    std::optional<RepeatData> data;
    OperatorParams s_hat;
    std::shared_ptr<const OperatorParams> s_ptr;
    BetaModel beta_u, beta_s;
    bool fitted = false;
    for (size_t si = 0; si < cfg.sweep_values.size(); ++si) {
      const double delta = cfg.sweep_values[si];
      for (const auto& m : cfg.methods) {
        const double t0 = now_s();
        try {
          if (!data) data = generate_repeat(cfg, cfg.fixed_rho, seed);
          if (!fitted) {
            const int cols_g = data->eval.quadrature.size() / rows_g;
            s_hat = train_solution_operator(data->train_pool, cfg.backbone(),
                                            rows_g, cols_g, cfg.train,
                                            derive_seed(seed, "s-hat"));
            s_ptr = std::make_shared<const OperatorParams>(s_hat);
            RieszConfig rc;
            rc.train = cfg.train;
            rc.lambda_reg = cfg.lambda_reg;
            beta_u = train_riesz(data->train_pool, BetaMode::Unstructured, spec,
                                 s_ptr, rc, derive_seed(seed, "beta-u"));
            beta_s = train_riesz(data->train_pool, BetaMode::Structured, spec,
                                 s_ptr, rc, derive_seed(seed, "beta-s"));
            fitted = true;
          }
          SurrogateFn s_cor = corrupt_surrogate(*s_ptr, delta);
          EstimateReport out;
          if (m == "plugin") {
            out = plugin_estimate(s_cor, data->eval.samples, spec,
                                  data->eval.quadrature);
          } else {
            const BetaModel& bm = m == "dope-structured" ? beta_s : beta_u;
            if (m != "dope-structured" && m != "dope-unstructured")
              throw std::invalid_argument("unknown method '" + m + "'");
            BetaFn b_cor = corrupt_beta(bm, spec, data->eval.quadrature, delta);
            const int n = static_cast<int>(data->eval.samples.size());
            out.method = m;
            out.seed = seed;
            out.pseudo_outcomes.resize(n);
            for (int i = 0; i < n; ++i)
              out.pseudo_outcomes[i] = pseudo_outcome(
                  s_cor, b_cor, data->eval.samples[i], spec, data->eval.quadrature);
            auto [v, ci] = variance_and_ci(out.pseudo_outcomes);
            out.theta_hat = out.pseudo_outcomes.mean();
            out.variance_hat = v;
            out.ci_low = ci.first;
            out.ci_high = ci.second;
            out.check_invariants();
          }
          rows.push_back(make_row(out, spec, delta, rep, truth, now_s() - t0));
        } catch (const std::exception&) {
          rows.push_back(error_row(m, spec, delta, rep, truth));
        }
      }
    }
  }
}

// n2 sweep: PPI with a fresh unlabeled pool of size n2 per sweep value
void run_sweep_n2(const ExperimentConfig& cfg, std::vector<ResultRow>& rows) {
  const FunctionalSpec spec = cfg.functional;
  const double truth = ground_truth(cfg.dgp, spec, cfg.truth_seed, cfg.truth_pool,
                                    cfg.cache_dir);
  const int rows_g = cfg.dgp == DgpKind::Darcy ? 17 : 1;
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t seed = cfg.base_seed + 1000 * std::uint64_t(rep);
    std::optional<RepeatData> data;
    OperatorParams s_hat;
    std::shared_ptr<const OperatorParams> s_ptr;
    BetaModel beta;
    bool fitted = false;
    for (size_t si = 0; si < cfg.sweep_values.size(); ++si) {
      const int n2 = static_cast<int>(cfg.sweep_values[si]);
      for (const auto& m : cfg.methods) {
        const double t0 = now_s();
        try {
          if (!data) data = generate_repeat(cfg, cfg.fixed_rho, seed);
          BetaMode mode;
          if (m == "dope-unstructured") mode = BetaMode::Unstructured;
          else if (m == "dope-structured") mode = BetaMode::Structured;
          else if (m == "dope-oracle") mode = BetaMode::Oracle;
          else throw std::invalid_argument("unknown method '" + m + "'");
          if (!fitted) {
            const int cols_g = data->eval.quadrature.size() / rows_g;
            s_hat = train_solution_operator(data->train_pool, cfg.backbone(),
                                            rows_g, cols_g, cfg.train,
                                            derive_seed(seed, "s-hat"));
            s_ptr = std::make_shared<const OperatorParams>(s_hat);
            if (mode != BetaMode::Oracle) {
              RieszConfig rc;
              rc.train = cfg.train;
              rc.lambda_reg = cfg.lambda_reg;
              beta = train_riesz(data->train_pool, mode, spec, s_ptr, rc,
                                 derive_seed(seed, "beta"));
            } else {
              beta = train_riesz({}, BetaMode::Oracle, spec, nullptr, {}, 0);
            }
            fitted = true;
          }
          std::vector<Observation> unlabeled;
          if (n2 > 0) {
            auto pool = cfg.dgp == DgpKind::Pk
                            ? pk::generate_dataset(n2, cfg.fixed_rho,
                                                   derive_seed(seed, "unlabeled", si))
                            : darcy::generate_dataset(n2,
                                                      derive_seed(seed, "unlabeled", si));
            unlabeled = std::move(pool.samples);
            for (auto& obs : unlabeled) obs.drop_latent();
          }
          auto out = ppi_estimate(data->eval.samples, unlabeled,
                                  surrogate_from(*s_ptr),
                                  beta_from(beta, data->eval.quadrature), spec,
                                  data->eval.quadrature);
          out.method = m + "-ppi";
          rows.push_back(make_row(out, spec, double(n2), rep, truth, now_s() - t0));
        } catch (const std::exception&) {
          rows.push_back(error_row(m + "-ppi", spec, double(n2), rep, truth));
        }
      }
    }
  }
}

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::vector<ResultRow> rows;
  switch (config.sweep) {
    case SweepKind::Rho:
    case SweepKind::Kappa:
      run_sweep_crossfit(config, rows);
      break;
    case SweepKind::Delta:
      run_sweep_delta(config, rows);
      break;
    case SweepKind::N2:
      run_sweep_n2(config, rows);
      break;
  }
  write_atomic(config.out_csv, emit_csv(rows));
  if (!config.out_plot.empty())
    emit_plot(rows, PlotKind::Rmse, config.out_plot);
  return rows;
}

std::pair<double, double> aggregate_rmse(const std::vector<ResultRow>& rows,
                                         double truth) {
  std::vector<double> sq;
  for (const auto& r : rows)
    if (std::isfinite(r.theta_hat))
      sq.push_back((r.theta_hat - truth) * (r.theta_hat - truth));
  const int n = static_cast<int>(sq.size());
  if (n < 2) throw std::invalid_argument("aggregate_rmse: need >= 2 usable rows");
  double m = 0.0;
  for (double e : sq) m += e / n;
  double var = 0.0;
  for (double e : sq) var += (e - m) * (e - m) / (n - 1.0);
  const double rmse = std::sqrt(m);
  const double se = rmse > 0.0 ? std::sqrt(var / n) / (2.0 * rmse) : 0.0;
  return {rmse, se};
}

double aggregate_coverage(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate_coverage: no rows");
  double c = 0.0;
  for (const auto& r : rows) c += r.covered;
  return c / double(rows.size());
}

namespace {

// (method, sweep_value) -> aggregate
struct SeriesPoint {
  std::string series;
  double x, y;
};

std::vector<SeriesPoint> aggregate_for_plot(const std::vector<ResultRow>& rows,
                                            PlotKind kind) {
  std::vector<std::string> methods;
  std::vector<double> xs;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    if (std::find(xs.begin(), xs.end(), r.sweep_value) == xs.end())
      xs.push_back(r.sweep_value);
  }
  std::sort(xs.begin(), xs.end());
  std::vector<SeriesPoint> pts;
  for (const auto& m : methods) {
    for (double x : xs) {
      std::vector<ResultRow> cell;
      for (const auto& r : rows)
        if (r.method == m && r.sweep_value == x) cell.push_back(r);
      if (cell.empty()) continue;
      double y;
      if (kind == PlotKind::Rmse) {
        if (cell.size() < 2) continue;
        y = aggregate_rmse(cell, cell[0].truth).first;
      } else {
        y = aggregate_coverage(cell);
      }
      pts.push_back({m, x, y});
    }
  }
  return pts;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

}  // namespace

void emit_plot(const std::vector<ResultRow>& rows, PlotKind kind,
               const std::string& path) {
  auto pts = aggregate_for_plot(rows, kind);
  if (pts.empty())
    throw std::invalid_argument("emit_plot: nothing to plot");

  double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
  for (const auto& p : pts) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double W = 640, H = 480, L = 70, R = 20, T = 30, B = 50;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b"};
  std::vector<std::string> series;
  for (const auto& p : pts)
    if (std::find(series.begin(), series.end(), p.series) == series.end())
      series.push_back(p.series);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
      << "\" height=\"" << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R
      << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\""
      << H - B << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"14\">sweep value</text>\n";
  svg << "<text x=\"18\" y=\"" << (T + H - B) / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
      << (T + H - B) / 2 << ")\">"
      << (kind == PlotKind::Rmse ? "RMSE" : "coverage") << "</text>\n";
  // axis extents
  svg << "<text x=\"" << L << "\" y=\"" << H - B + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt_double(xmin)
      << "</text>\n";
  svg << "<text x=\"" << W - R << "\" y=\"" << H - B + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt_double(xmax)
      << "</text>\n";
  svg << "<text x=\"" << L - 6 << "\" y=\"" << H - B
      << "\" font-size=\"11\" text-anchor=\"end\">" << fmt_double(ymin)
      << "</text>\n";
  svg << "<text x=\"" << L - 6 << "\" y=\"" << T + 4
      << "\" font-size=\"11\" text-anchor=\"end\">" << fmt_double(ymax)
      << "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    std::ostringstream pl;
    for (const auto& p : pts)
      if (p.series == series[s]) pl << px(p.x) << ',' << py(p.y) << ' ';
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" "
        << "points=\"" << pl.str() << "\"/>\n";
    for (const auto& p : pts)
      if (p.series == series[s])
        svg << "<circle cx=\"" << px(p.x) << "\" cy=\"" << py(p.y)
            << "\" r=\"3\" fill=\"" << color << "\" data-series=\""
            << xml_escape(p.series) << "\" data-x=\"" << fmt_double(p.x)
            << "\" data-y=\"" << fmt_double(p.y) << "\"/>\n";
    // legend
    const double ly = T + 16.0 * double(s);
    svg << "<rect x=\"" << W - R - 170 << "\" y=\"" << ly << "\" width=\"12\" "
        << "height=\"12\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << W - R - 152 << "\" y=\"" << ly + 10
        << "\" font-size=\"12\">" << xml_escape(series[s]) << "</text>\n";
  }
  svg << "</svg>\n";
  write_atomic(path, svg.str());
}

std::vector<PlotPoint> parse_plot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::regex re("data-series=\"([^\"]*)\" data-x=\"([^\"]*)\" data-y=\"([^\"]*)\"");
  std::vector<PlotPoint> pts;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re);
       it != std::sregex_iterator(); ++it) {
    PlotPoint p;
    p.series = (*it)[1];
    p.x = std::stod((*it)[2]);
    p.y = std::stod((*it)[3]);
    pts.push_back(std::move(p));
  }
  return pts;
}

}  // namespace dope
