#include "dope/riesz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dope {

const char* beta_mode_name(BetaMode mode) {
  switch (mode) {
    case BetaMode::Unstructured: return "unstructured";
    case BetaMode::Structured: return "structured";
    case BetaMode::Oracle: return "oracle";
  }
  throw std::logic_error("unknown beta mode");
}

Vec oracle_beta(const DesignWeights& design, const FunctionalSpec& spec,
                const Vec& latent_u, const QuadratureWeights& w) {
  design.validate(w);
  if (latent_u.size() != design.xi.size())
    throw ShapeError("oracle_beta: latent grid size mismatch");
  return design.xi.cwiseProduct(riesz_representer_wg(spec, latent_u, w));
}

Vec BetaModel::evaluate(const Observation& obs, const QuadratureWeights& w) const {
  switch (mode) {
    case BetaMode::Oracle:
      return oracle_beta(obs.design, spec, obs.latent_for_oracle(), w);
    case BetaMode::Unstructured:
      return operator_predict(backbone, obs.channels);
    case BetaMode::Structured: {
      if (!s_hat) throw ConfigError("structured beta: missing trained S-hat");
      Vec log_xi = operator_predict(backbone, obs.channels);
      Vec xi = log_xi.array().min(10.0).max(-10.0).exp();
      Vec u_hat = operator_predict(*s_hat, obs.channels);
      return xi.cwiseProduct(riesz_representer_wg(spec, u_hat, w));
    }
  }
  throw std::logic_error("unknown beta mode");
}

double BetaModel::parameter_sq_norm() const {
  double s = 0.0;
  for (const Mat& m : backbone.weights) s += m.squaredNorm();
  return s;
}

double riesz_loss(const BetaModel& beta, const std::vector<Observation>& batch,
                  const FunctionalSpec& spec, const OperatorParams& s_hat,
                  double lambda_reg, const QuadratureWeights& w) {
  if (batch.empty()) throw std::invalid_argument("riesz_loss: empty batch");
  double acc = 0.0;
  for (const Observation& obs : batch) {
    Vec b = beta.evaluate(obs, w);
    double quad = 0.0;
    for (int k = 0; k < obs.num_obs(); ++k)
      quad += b[obs.obs_indices[k]] * b[obs.obs_indices[k]];
    quad /= obs.num_obs();
    Vec u_hat = operator_predict(s_hat, obs.channels);
    acc += quad - 2.0 * functional_jvp(spec, u_hat, b, w);
  }
  const double loss = acc / double(batch.size()) +
                      lambda_reg * beta.parameter_sq_norm();
  if (!std::isfinite(loss)) throw TrainingError("riesz_loss: non-finite value");
  return loss;
}

BetaModel train_riesz(const std::vector<Observation>& data, BetaMode mode,
                      const FunctionalSpec& spec,
                      std::shared_ptr<const OperatorParams> s_hat,
                      const RieszConfig& rc, std::uint64_t seed,
                      const std::vector<Observation>& val) {
  spec.validate();
  BetaModel model;
  model.mode = mode;
  model.spec = spec;
  if (mode == BetaMode::Oracle) return model;  // closed form, nothing to fit

  if (!s_hat) throw ConfigError("train_riesz: S-hat required");
  if (data.empty()) throw TrainingError("train_riesz: empty dataset");
  const int n = s_hat->grid_size();
  const QuadratureWeights w =
      s_hat->grid_rows > 1 ? trapezoid_weights_2d(s_hat->grid_rows, s_hat->grid_cols)
                           : trapezoid_weights_1d(s_hat->grid_cols);

  model.backbone = init_operator(s_hat->config, s_hat->grid_rows, s_hat->grid_cols,
                                 detail::mix(seed, detail::hash_label("riesz")));
  model.s_hat = s_hat;
  model.backbone.meta.seed = seed;

  // per-sample constants: the linear term's gradient vector (and for the
  // structured head, w_g at S-hat) depend only on the trained S-hat
  const int nsamp = static_cast<int>(data.size());
  std::vector<Vec> grad_g(nsamp), wg_hat(nsamp);
  for (int i = 0; i < nsamp; ++i) {
    Vec u_hat = operator_predict(*s_hat, data[i].channels);
    grad_g[i] = functional_gradient(spec, u_hat, w);
    if (mode == BetaMode::Structured)
      wg_hat[i] = riesz_representer_wg(spec, u_hat, w);
  }

  std::vector<Mat*> weight_ptrs;
  for (Mat& m : model.backbone.weights) weight_ptrs.push_back(&m);
  Adam opt(weight_ptrs, rc.train.adam);

  const bool early_stop = rc.train.patience > 0 && !val.empty();
  double epoch_loss = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1, since_best = 0, epochs_run = 0;
  std::vector<Mat> best_weights;
  for (int epoch = 0; epoch < rc.train.epochs; ++epoch) {
    auto shuffle_rng = make_stream(seed, "riesz-shuffle", epoch);
    std::vector<int> order(nsamp);
    std::iota(order.begin(), order.end(), 0);
    for (int i = nsamp - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    epoch_loss = 0.0;
    for (int start = 0; start < nsamp; start += rc.train.batch) {
      const int bsz = std::min(rc.train.batch, nsamp - start);
      Mat stacked(Eigen::Index(bsz) * n, model.backbone.config.in_channels());
      Mat lin_coef = Mat::Zero(Eigen::Index(bsz) * n, 1);  // -2/bsz * grad g
      Mat wg_full(Eigen::Index(bsz) * n, 1);
      std::vector<int> gather;
      std::vector<double> quad_wts;
      for (int b = 0; b < bsz; ++b) {
        const int i = order[start + b];
        const Observation& obs = data[i];
        stacked.middleRows(Eigen::Index(b) * n, n) = obs.channels;
        lin_coef.middleRows(Eigen::Index(b) * n, n) =
            (-2.0 / bsz) * grad_g[i];
        if (mode == BetaMode::Structured)
          wg_full.middleRows(Eigen::Index(b) * n, n) = wg_hat[i];
        const double qw = 1.0 / (double(bsz) * obs.num_obs());
        for (int k = 0; k < obs.num_obs(); ++k) {
          gather.push_back(b * n + obs.obs_indices[k]);
          quad_wts.push_back(qw);
        }
      }
      Tape tape;
      auto ids = register_params(tape, model.backbone, true);
      int raw = operator_forward(tape, model.backbone, ids, tape.constant(stacked),
                                 bsz);
      int beta_node = raw;
      if (mode == BetaMode::Structured)
        beta_node = tape.cmul(tape.exp_clamp(raw), tape.constant(wg_full));
      int quad = tape.sum_all(
          tape.cmul(tape.constant(Eigen::Map<const Vec>(quad_wts.data(),
                                                        Eigen::Index(quad_wts.size()))),
                    tape.square(tape.row_gather(beta_node, gather))));
      int lin = tape.sum_all(tape.cmul(tape.constant(lin_coef), beta_node));
      int loss = tape.add(quad, lin);
      for (int id : ids)
        loss = tape.add(loss, tape.scale(tape.sum_all(tape.square(id)), rc.lambda_reg));
      const double loss_val = tape.val(loss)(0, 0);
      if (!std::isfinite(loss_val))
        throw TrainingError("train_riesz: non-finite loss at epoch " +
                            std::to_string(epoch));
      epoch_loss += loss_val * bsz / nsamp;
      tape.backward(loss);
      std::vector<Mat> grads;
      grads.reserve(ids.size());
      for (int id : ids) grads.push_back(tape.grad(id));
      opt.step(grads);
    }
    epochs_run = epoch + 1;
    if (early_stop && epoch + 1 >= rc.train.min_epochs) {
      const double val_loss = riesz_loss(model, val, spec, *s_hat, rc.lambda_reg, w);
      if (val_loss < best_val) {
        best_val = val_loss;
        best_epoch = epoch;
        best_weights = model.backbone.weights;
        since_best = 0;
      } else if (++since_best >= rc.train.patience) {
        break;
      }
    }
  }
  if (early_stop && best_epoch >= 0) {
    model.backbone.weights = std::move(best_weights);
    epochs_run = best_epoch + 1;
  }
  model.backbone.meta.epochs_run = epochs_run;
  model.backbone.meta.final_loss = epoch_loss;
  return model;
}

}  // namespace dope
