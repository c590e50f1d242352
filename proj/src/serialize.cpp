#include "dope/serialize.hpp"

#include <fstream>

#include "dope/darcy.hpp"
#include "dope/pk.hpp"

namespace dope {

using nlohmann::json;

namespace {

json vec_to_json(const Vec& v) {
  std::vector<double> out(v.data(), v.data() + v.size());
  return json(out);
}

Vec vec_from_json(const json& j) {
  auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(data.data(), Eigen::Index(data.size()));
}

json observation_common(const Observation& obs, bool with_oracle) {
  json s;
  s["obs_indices"] = obs.obs_indices;
  s["y"] = vec_to_json(obs.y);
  if (with_oracle && obs.has_latent())
    s["latent_u"] = vec_to_json(obs.latent_for_oracle());
  return s;
}

DesignWeights design_from_p(const json& p_json, const QuadratureWeights& w) {
  DesignWeights d;
  d.p = vec_from_json(p_json);
  if (d.p.size() != w.values.size())
    throw ShapeError("dataset_from_json: design length mismatch");
  d.xi = w.values.array() / d.p.array();
  d.validate(w);
  return d;
}

Vec maybe_latent(const json& s) {
  if (s.contains("latent_u")) return vec_from_json(s["latent_u"]);
  return Vec();
}

}  // namespace

json spec_to_json(const FunctionalSpec& spec) {
  json j;
  j["kind"] = functional_kind_name(spec.kind);
  switch (spec.kind) {
    case FunctionalKind::Auc:
      break;
    case FunctionalKind::Tat:
      j["kappa"] = spec.kappa;
      j["c_star"] = spec.c_star;
      break;
    case FunctionalKind::SoftCmax:
      j["lambda"] = spec.lambda;
      break;
    case FunctionalKind::SmoothExcess:
      j["kappa_star"] = spec.kappa_star;
      j["c"] = spec.c;
      break;
  }
  return j;
}

FunctionalSpec spec_from_json(const json& j) {
  FunctionalSpec spec;
  spec.kind = functional_kind_from_name(j.at("kind").get<std::string>());
  if (j.contains("kappa")) spec.kappa = j["kappa"].get<double>();
  if (j.contains("c_star")) spec.c_star = j["c_star"].get<double>();
  if (j.contains("lambda")) spec.lambda = j["lambda"].get<double>();
  if (j.contains("kappa_star")) spec.kappa_star = j["kappa_star"].get<double>();
  if (j.contains("c")) spec.c = j["c"].get<double>();
  spec.validate();
  return spec;
}

json dataset_to_json(const Dataset& data, bool with_oracle) {
  json j;
  json samples = json::array();
  if (data.dgp == DgpKind::Pk) {
    j["dgp"] = "pk";
    j["grid"] = {{"T", data.grid1d.horizon}, {"delta", data.grid1d.delta}};
    for (const auto& obs : data.samples) {
      json s = observation_common(obs, with_oracle);
      s["r"] = vec_to_json(obs.channels.col(0));
      s["log_cl"] = obs.channels(0, 1);
      s["log_v"] = obs.channels(0, 2);
      s["p"] = vec_to_json(obs.design.p);
      samples.push_back(std::move(s));
    }
  } else {
    j["dgp"] = "darcy";
    j["grid"] = {{"H", data.grid2d.height}, {"W", data.grid2d.width}};
    for (const auto& obs : data.samples) {
      json s = observation_common(obs, with_oracle);
      s["a"] = vec_to_json(obs.channels.col(0));
      s["q"] = vec_to_json(obs.design.p);
      samples.push_back(std::move(s));
    }
  }
  j["samples"] = std::move(samples);
  return j;
}

Dataset dataset_from_json(const json& j) {
  Dataset data;
  const std::string dgp = j.at("dgp").get<std::string>();
  if (dgp == "pk") {
    data.dgp = DgpKind::Pk;
    data.grid1d = Grid1D(j.at("grid").at("T").get<double>(),
                         j.at("grid").at("delta").get<int>());
    data.quadrature = trapezoid_weights_1d(data.grid1d.delta);
    for (const auto& s : j.at("samples")) {
      Mat channels = pk::input_channels(vec_from_json(s.at("r")),
                                        s.at("log_cl").get<double>(),
                                        s.at("log_v").get<double>(), data.grid1d);
      data.samples.emplace_back(std::move(channels), maybe_latent(s),
                                s.at("obs_indices").get<std::vector<int>>(),
                                vec_from_json(s.at("y")),
                                design_from_p(s.at("p"), data.quadrature));
    }
  } else if (dgp == "darcy") {
    data.dgp = DgpKind::Darcy;
    data.grid2d = Grid2D(j.at("grid").at("H").get<int>(),
                         j.at("grid").at("W").get<int>());
    data.quadrature = trapezoid_weights_2d(data.grid2d.height, data.grid2d.width);
    for (const auto& s : j.at("samples")) {
      Mat channels = darcy::input_channels(vec_from_json(s.at("a")), data.grid2d);
      data.samples.emplace_back(std::move(channels), maybe_latent(s),
                                s.at("obs_indices").get<std::vector<int>>(),
                                vec_from_json(s.at("y")),
                                design_from_p(s.at("q"), data.quadrature));
    }
  } else {
    throw std::invalid_argument("dataset_from_json: unknown dgp '" + dgp + "'");
  }
  return data;
}

json report_to_json(const EstimateReport& report) {
  json j;
  j["method"] = report.method;
  j["theta_hat"] = report.theta_hat;
  j["variance_hat"] = report.variance_hat;
  j["se"] = report.se();
  j["ci_low"] = report.ci_low;
  j["ci_high"] = report.ci_high;
  j["pseudo_outcomes"] = vec_to_json(report.pseudo_outcomes);
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  j["fold_of"] = report.fold_of;
  j["degenerate_ci"] = report.degenerate_ci;
  j["fold_s_loss"] = report.fold_s_loss;
  j["fold_beta_loss"] = report.fold_beta_loss;
  return j;
}

EstimateReport report_from_json(const json& j) {
  EstimateReport r;
  r.method = j.at("method").get<std::string>();
  r.theta_hat = j.at("theta_hat").get<double>();
  r.variance_hat = j.at("variance_hat").get<double>();
  r.ci_low = j.at("ci_low").get<double>();
  r.ci_high = j.at("ci_high").get<double>();
  r.pseudo_outcomes = vec_from_json(j.at("pseudo_outcomes"));
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.fold_of = j.at("fold_of").get<std::vector<int>>();
  r.degenerate_ci = j.at("degenerate_ci").get<bool>();
  r.fold_s_loss = j.at("fold_s_loss").get<std::vector<double>>();
  r.fold_beta_loss = j.at("fold_beta_loss").get<std::vector<double>>();
  return r;
}

namespace {

json backbone_to_json(const BackboneConfig& c) {
  json j;
  switch (c.kind) {
    case BackboneKind::Fno1d: j["kind"] = "fno1d"; break;
    case BackboneKind::Fno2d: j["kind"] = "fno2d"; break;
    case BackboneKind::DeepONet: j["kind"] = "deeponet"; break;
  }
  j["fno"] = {{"in_channels", c.fno.in_channels},
              {"hidden_channels", c.fno.hidden_channels},
              {"out_channels", c.fno.out_channels},
              {"n_layers", c.fno.n_layers},
              {"modes", c.fno.modes}};
  j["deeponet"] = {{"in_channels", c.deeponet.in_channels},
                   {"branch_hidden", c.deeponet.branch_hidden},
                   {"trunk_hidden", c.deeponet.trunk_hidden},
                   {"latent", c.deeponet.latent},
                   {"out_channels", c.deeponet.out_channels}};
  return j;
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig c;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fno1d") c.kind = BackboneKind::Fno1d;
  else if (kind == "fno2d") c.kind = BackboneKind::Fno2d;
  else if (kind == "deeponet") c.kind = BackboneKind::DeepONet;
  else throw CheckpointError("unknown backbone kind '" + kind + "'");
  const json& f = j.at("fno");
  c.fno = {f.at("in_channels").get<int>(), f.at("hidden_channels").get<int>(),
           f.at("out_channels").get<int>(), f.at("n_layers").get<int>(),
           f.at("modes").get<int>()};
  const json& d = j.at("deeponet");
  c.deeponet = {d.at("in_channels").get<int>(), d.at("branch_hidden").get<int>(),
                d.at("trunk_hidden").get<int>(), d.at("latent").get<int>(),
                d.at("out_channels").get<int>()};
  return c;
}

}  // namespace

void save_checkpoint(const OperatorParams& params, const std::string& path) {
  json j;
  j["format_version"] = 1;
  j["config_hash"] = params.config.hash();
  j["config"] = backbone_to_json(params.config);
  j["grid_rows"] = params.grid_rows;
  j["grid_cols"] = params.grid_cols;
  j["meta"] = {{"epochs_run", params.meta.epochs_run},
               {"final_loss", params.meta.final_loss},
               {"seed", params.meta.seed}};
  json weights = json::array();
  for (const Mat& w : params.weights) {
    std::vector<double> flat(w.data(), w.data() + w.size());
    weights.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"data", flat}});
  }
  j["weights"] = std::move(weights);
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out << j.dump();
  if (!out.good()) throw CheckpointError("write failed for '" + path + "'");
}

OperatorParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint '" + path + "': " + e.what());
  }
  if (j.value("format_version", 0) != 1)
    throw CheckpointError("unsupported checkpoint version in '" + path + "'");
  OperatorParams params;
  params.config = backbone_from_json(j.at("config"));
  if (j.at("config_hash").get<std::string>() != params.config.hash())
    throw CheckpointError("config hash mismatch in '" + path + "'");
  params.grid_rows = j.at("grid_rows").get<int>();
  params.grid_cols = j.at("grid_cols").get<int>();
  params.meta.epochs_run = j.at("meta").at("epochs_run").get<int>();
  params.meta.final_loss = j.at("meta").at("final_loss").get<double>();
  params.meta.seed = j.at("meta").at("seed").get<std::uint64_t>();
  for (const auto& wj : j.at("weights")) {
    auto flat = wj.at("data").get<std::vector<double>>();
    const auto rows = wj.at("rows").get<Eigen::Index>();
    const auto cols = wj.at("cols").get<Eigen::Index>();
    if (Eigen::Index(flat.size()) != rows * cols)
      throw CheckpointError("weight shape mismatch in '" + path + "'");
    params.weights.emplace_back(Eigen::Map<const Mat>(flat.data(), rows, cols));
  }
  return params;
}

}  // namespace dope
