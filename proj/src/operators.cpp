#include "dope/operators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace dope {

namespace {

Mat uniform_fan_in(RngStream& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

Mat gaussian(RngStream& rng, int rows, int cols, double sd) {
  Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = sd * rng.normal();
  return m;
}

int modes_total(const BackboneConfig& cfg) {
  return cfg.kind == BackboneKind::Fno2d ? cfg.fno.modes * cfg.fno.modes
                                         : cfg.fno.modes;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void FnoConfig::validate(int grid_rows, int grid_cols) const {
  if (in_channels < 1 || hidden_channels < 1 || out_channels < 1 || n_layers < 1 ||
      modes < 1)
    throw ConfigError("fno: all counts must be >= 1");
  const int min_axis = grid_rows > 1 ? std::min(grid_rows, grid_cols) : grid_cols;
  if (min_axis < 2 * modes)
    throw ConfigError("fno: grid size smaller than 2*modes");
}

void DeepONetConfig::validate() const {
  if (in_channels < 1 || branch_hidden < 1 || trunk_hidden < 1 || latent < 1)
    throw ConfigError("deeponet: all counts must be >= 1");
  if (out_channels != 1) throw ConfigError("deeponet: out_channels must be 1");
}

BackboneConfig BackboneConfig::fno1d_pk() {
  BackboneConfig c;
  c.kind = BackboneKind::Fno1d;
  c.fno = {4, 32, 1, 3, 12};
  return c;
}

BackboneConfig BackboneConfig::fno2d_darcy() {
  BackboneConfig c;
  c.kind = BackboneKind::Fno2d;
  c.fno = {3, 24, 1, 3, 8};
  return c;
}

BackboneConfig BackboneConfig::deeponet_pk() {
  BackboneConfig c;
  c.kind = BackboneKind::DeepONet;
  c.deeponet = {4, 32, 32, 32, 1};
  return c;
}

int BackboneConfig::in_channels() const {
  return kind == BackboneKind::DeepONet ? deeponet.in_channels : fno.in_channels;
}

int BackboneConfig::out_channels() const {
  return kind == BackboneKind::DeepONet ? deeponet.out_channels : fno.out_channels;
}

std::string BackboneConfig::hash() const {
  std::ostringstream ss;
  ss << static_cast<int>(kind) << '|';
  if (kind == BackboneKind::DeepONet)
    ss << deeponet.in_channels << ',' << deeponet.branch_hidden << ','
       << deeponet.trunk_hidden << ',' << deeponet.latent << ','
       << deeponet.out_channels;
  else
    ss << fno.in_channels << ',' << fno.hidden_channels << ',' << fno.out_channels
       << ',' << fno.n_layers << ',' << fno.modes;
  std::ostringstream out;
  out << std::hex << fnv1a(ss.str());
  return out.str();
}

std::shared_ptr<const Mat> dft_forward_1d(int n, int modes) {
  static std::map<std::pair<int, int>, std::shared_ptr<const Mat>> cache;
  auto key = std::make_pair(n, modes);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  Mat L(2 * modes, n);
  for (int m = 0; m < modes; ++m)
    for (int t = 0; t < n; ++t) {
      const double th = 2.0 * M_PI * m * t / n;
      L(m, t) = std::cos(th);
      L(modes + m, t) = -std::sin(th);
    }
  auto p = std::make_shared<const Mat>(std::move(L));
  cache[key] = p;
  return p;
}

std::shared_ptr<const Mat> dft_inverse_1d(int n, int modes) {
  static std::map<std::pair<int, int>, std::shared_ptr<const Mat>> cache;
  auto key = std::make_pair(n, modes);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  Mat L(n, 2 * modes);
  for (int m = 0; m < modes; ++m) {
    const double cm = (m == 0 ? 1.0 : 2.0) / n;
    for (int t = 0; t < n; ++t) {
      const double th = 2.0 * M_PI * m * t / n;
      L(t, m) = cm * std::cos(th);
      L(t, modes + m) = -cm * std::sin(th);
    }
  }
  auto p = std::make_shared<const Mat>(std::move(L));
  cache[key] = p;
  return p;
}

std::shared_ptr<const Mat> dft_forward_2d(int rows, int cols, int modes) {
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const Mat>> cache;
  auto key = std::make_tuple(rows, cols, modes);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const int mt = modes * modes;
  Mat L(2 * mt, rows * cols);
  for (int kx = 0; kx < modes; ++kx)
    for (int ky = 0; ky < modes; ++ky) {
      const int k = kx * modes + ky;
      for (int p = 0; p < rows; ++p)
        for (int q = 0; q < cols; ++q) {
          const double th =
              2.0 * M_PI * (double(kx) * p / rows + double(ky) * q / cols);
          L(k, p * cols + q) = std::cos(th);
          L(mt + k, p * cols + q) = -std::sin(th);
        }
    }
  auto ptr = std::make_shared<const Mat>(std::move(L));
  cache[key] = ptr;
  return ptr;
}

std::shared_ptr<const Mat> dft_inverse_2d(int rows, int cols, int modes) {
  static std::map<std::tuple<int, int, int>, std::shared_ptr<const Mat>> cache;
  auto key = std::make_tuple(rows, cols, modes);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const int mt = modes * modes;
  const double norm = 1.0 / (double(rows) * cols);
  Mat L(rows * cols, 2 * mt);
  for (int kx = 0; kx < modes; ++kx)
    for (int ky = 0; ky < modes; ++ky) {
      const int k = kx * modes + ky;
      const double ck = (kx == 0 && ky == 0 ? 1.0 : 2.0) * norm;
      for (int p = 0; p < rows; ++p)
        for (int q = 0; q < cols; ++q) {
          const double th =
              2.0 * M_PI * (double(kx) * p / rows + double(ky) * q / cols);
          L(p * cols + q, k) = ck * std::cos(th);
          L(p * cols + q, mt + k) = -ck * std::sin(th);
        }
    }
  auto ptr = std::make_shared<const Mat>(std::move(L));
  cache[key] = ptr;
  return ptr;
}

OperatorParams init_operator(const BackboneConfig& config, int grid_rows,
                             int grid_cols, std::uint64_t seed) {
  if (grid_rows < 1 || grid_cols < 1) throw ConfigError("init: empty grid");
  OperatorParams p;
  p.config = config;
  p.grid_rows = grid_rows;
  p.grid_cols = grid_cols;
  p.meta.seed = seed;
  auto rng = make_stream(seed, "op-init");

  if (config.kind == BackboneKind::DeepONet) {
    const auto& d = config.deeponet;
    d.validate();
    const int n = grid_rows * grid_cols;
    const int coord_dim = grid_rows > 1 ? 2 : 1;
    p.weights.push_back(uniform_fan_in(rng, n * d.in_channels, d.branch_hidden,
                                       n * d.in_channels));
    p.weights.push_back(uniform_fan_in(rng, 1, d.branch_hidden, n * d.in_channels));
    p.weights.push_back(uniform_fan_in(rng, d.branch_hidden, d.latent, d.branch_hidden));
    p.weights.push_back(uniform_fan_in(rng, 1, d.latent, d.branch_hidden));
    p.weights.push_back(uniform_fan_in(rng, coord_dim, d.trunk_hidden, coord_dim));
    p.weights.push_back(uniform_fan_in(rng, 1, d.trunk_hidden, coord_dim));
    p.weights.push_back(uniform_fan_in(rng, d.trunk_hidden, d.latent, d.trunk_hidden));
    p.weights.push_back(uniform_fan_in(rng, 1, d.latent, d.trunk_hidden));
    p.weights.push_back(Mat::Zero(1, 1));  // output bias
    return p;
  }

  const auto& f = config.fno;
  f.validate(grid_rows, grid_cols);
  const int mt = modes_total(config);
  const int H = f.hidden_channels;
  p.weights.push_back(uniform_fan_in(rng, f.in_channels, H, f.in_channels));
  p.weights.push_back(uniform_fan_in(rng, 1, H, f.in_channels));
  const double spec_sd = 1.0 / (double(H) * mt);
  for (int l = 0; l < f.n_layers; ++l) {
    p.weights.push_back(gaussian(rng, mt * H, H, spec_sd));
    p.weights.push_back(gaussian(rng, mt * H, H, spec_sd));
    p.weights.push_back(uniform_fan_in(rng, H, H, H));
    p.weights.push_back(uniform_fan_in(rng, 1, H, H));
  }
  p.weights.push_back(uniform_fan_in(rng, H, f.out_channels, H));
  p.weights.push_back(uniform_fan_in(rng, 1, f.out_channels, H));
  return p;
}

std::vector<int> register_params(Tape& tape, const OperatorParams& params,
                                 bool trainable) {
  std::vector<int> ids;
  ids.reserve(params.weights.size());
  for (const Mat& w : params.weights) ids.push_back(tape.leaf(w, trainable));
  return ids;
}

int operator_forward(Tape& tape, const OperatorParams& params,
                     const std::vector<int>& param_ids, int input_node, int batch) {
  const int n = params.grid_size();
  const Mat& input = tape.val(input_node);
  if (input.rows() != Eigen::Index(batch) * n ||
      input.cols() != params.config.in_channels())
    throw ConfigError("forward: input shape does not match config/grid");

  if (params.config.kind == BackboneKind::DeepONet) {
    const auto& w = param_ids;
    // branch: flattened discretized input -> latent embedding per sample
    int flat = tape.flatten_blocks(input_node, batch);
    int bh = tape.gelu(tape.add_row_broadcast(tape.matmul(flat, w[0]), w[1]));
    int branch = tape.add_row_broadcast(tape.matmul(bh, w[2]), w[3]);
    // trunk: grid coordinates (trailing input channels) -> latent per point
    const int coord_dim = params.grid_rows > 1 ? 2 : 1;
    int coords = tape.constant(input.topRows(n).rightCols(coord_dim));
    int th = tape.gelu(tape.add_row_broadcast(tape.matmul(coords, w[4]), w[5]));
    int trunk = tape.add_row_broadcast(tape.matmul(th, w[6]), w[7]);
    // u(b, x_r) = <branch_b, trunk_r> + bias
    std::vector<int> rep_b(batch * n), rep_r(batch * n);
    for (int b = 0; b < batch; ++b)
      for (int r = 0; r < n; ++r) {
        rep_b[b * n + r] = b;
        rep_r[b * n + r] = r;
      }
    int prod = tape.cmul(tape.row_gather(branch, rep_b), tape.row_gather(trunk, rep_r));
    return tape.add_row_broadcast(tape.row_sum(prod), w[8]);
  }

  const auto& f = params.config.fno;
  const int mt = modes_total(params.config);
  std::shared_ptr<const Mat> Lf, Li;
  if (params.config.kind == BackboneKind::Fno1d) {
    Lf = dft_forward_1d(n, f.modes);
    Li = dft_inverse_1d(n, f.modes);
  } else {
    Lf = dft_forward_2d(params.grid_rows, params.grid_cols, f.modes);
    Li = dft_inverse_2d(params.grid_rows, params.grid_cols, f.modes);
  }
  int h = tape.add_row_broadcast(tape.matmul(input_node, param_ids[0]), param_ids[1]);
  for (int l = 0; l < f.n_layers; ++l) {
    const int wr = param_ids[2 + 4 * l], wi = param_ids[3 + 4 * l];
    const int sw = param_ids[4 + 4 * l], sb = param_ids[5 + 4 * l];
    int spec = tape.block_linear(
        tape.complex_mode_mix(tape.block_linear(h, Lf, batch), wr, wi, batch, mt),
        Li, batch);
    int skip = tape.add_row_broadcast(tape.matmul(h, sw), sb);
    h = tape.gelu(tape.add(spec, skip));
  }
  const int pw = param_ids[2 + 4 * f.n_layers], pb = param_ids[3 + 4 * f.n_layers];
  return tape.add_row_broadcast(tape.matmul(h, pw), pb);
}

Vec operator_predict(const OperatorParams& params, const Mat& channels) {
  Tape tape;
  auto ids = register_params(tape, params, false);
  int out = operator_forward(tape, params, ids, tape.constant(channels), 1);
  return tape.val(out).col(0);
}

OperatorParams train_solution_operator(const std::vector<Observation>& data,
                                       const BackboneConfig& config, int grid_rows,
                                       int grid_cols, const TrainConfig& tc,
                                       std::uint64_t seed,
                                       const std::vector<Observation>& val) {
  if (data.empty()) throw TrainingError("train: empty dataset");
  const int n = grid_rows * grid_cols;
  for (const auto& obs : data)
    if (obs.channels.rows() != n || obs.channels.cols() != config.in_channels())
      throw TrainingError("train: observation channels do not match config/grid");
  for (const auto& obs : val)
    if (obs.channels.rows() != n || obs.channels.cols() != config.in_channels())
      throw TrainingError("train: validation channels do not match config/grid");
  const bool early_stop = tc.patience > 0 && !val.empty();

  OperatorParams params = init_operator(config, grid_rows, grid_cols, seed);
  if (tc.epochs == 0) return params;

  std::vector<Mat*> weight_ptrs;
  for (Mat& w : params.weights) weight_ptrs.push_back(&w);
  Adam opt(weight_ptrs, tc.adam);

  const int nsamp = static_cast<int>(data.size());
  double epoch_loss = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1, since_best = 0, epochs_run = 0;
  std::vector<Mat> best_weights;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    auto shuffle_rng = make_stream(seed, "op-shuffle", epoch);
    std::vector<int> order(nsamp);
    std::iota(order.begin(), order.end(), 0);
    for (int i = nsamp - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);

    epoch_loss = 0.0;
    for (int start = 0; start < nsamp; start += tc.batch) {
      const int bsz = std::min(tc.batch, nsamp - start);
      Mat stacked(Eigen::Index(bsz) * n, config.in_channels());
      std::vector<int> gather;
      std::vector<double> ys, wts;
      for (int b = 0; b < bsz; ++b) {
        const Observation& obs = data[order[start + b]];
        stacked.middleRows(Eigen::Index(b) * n, n) = obs.channels;
        const double wk = 1.0 / (double(bsz) * obs.num_obs());
        for (int k = 0; k < obs.num_obs(); ++k) {
          gather.push_back(b * n + obs.obs_indices[k]);
          ys.push_back(obs.y[k]);
          wts.push_back(wk);
        }
      }
      Tape tape;
      auto ids = register_params(tape, params, true);
      int out = operator_forward(tape, params, ids, tape.constant(stacked), bsz);
      int pred = tape.row_gather(out, gather);
      Mat ymat = Eigen::Map<const Vec>(ys.data(), Eigen::Index(ys.size()));
      Mat wmat = Eigen::Map<const Vec>(wts.data(), Eigen::Index(wts.size()));
      int resid = tape.sub(pred, tape.constant(ymat));
      int loss = tape.sum_all(tape.cmul(tape.constant(wmat), tape.square(resid)));
      const double loss_val = tape.val(loss)(0, 0);
      if (!std::isfinite(loss_val))
        throw TrainingError("train: non-finite loss at epoch " +
                            std::to_string(epoch));
      epoch_loss += loss_val * bsz / nsamp;
      tape.backward(loss);
      std::vector<Mat> grads;
      grads.reserve(ids.size());
      for (int id : ids) grads.push_back(tape.grad(id));
      opt.step(grads);
    }
    epochs_run = epoch + 1;
    if (early_stop && epoch + 1 >= tc.min_epochs) {
      double val_mse = 0.0;
      std::int64_t cnt = 0;
      for (const auto& obs : val) {
        const Vec pred = operator_predict(params, obs.channels);
        for (int k = 0; k < obs.num_obs(); ++k) {
          const double d = pred[obs.obs_indices[k]] - obs.y[k];
          val_mse += d * d;
          ++cnt;
        }
      }
      val_mse /= static_cast<double>(cnt);
      if (val_mse < best_val) {
        best_val = val_mse;
        best_epoch = epoch;
        best_weights = params.weights;
        since_best = 0;
      } else if (++since_best >= tc.patience) {
        break;
      }
    }
  }
  if (early_stop && best_epoch >= 0) {
    params.weights = std::move(best_weights);
    epochs_run = best_epoch + 1;
  }
  params.meta.epochs_run = epochs_run;
  params.meta.final_loss = epoch_loss;
  return params;
}

}  // namespace dope
