#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dope/adam.hpp"
#include "dope/data.hpp"
#include "dope/rng.hpp"
#include "dope/tape.hpp"

namespace dope {

enum class BackboneKind { Fno1d, Fno2d, DeepONet };

struct FnoConfig {
  int in_channels = 4;
  int hidden_channels = 32;
  int out_channels = 1;
  int n_layers = 3;
  int modes = 12;  // retained nonnegative modes per spatial axis
  void validate(int grid_rows, int grid_cols) const;
};

struct DeepONetConfig {
  int in_channels = 4;
  int branch_hidden = 32;
  int trunk_hidden = 32;
  int latent = 32;
  int out_channels = 1;
  void validate() const;
};

struct BackboneConfig {
  BackboneKind kind = BackboneKind::Fno1d;
  FnoConfig fno;
  DeepONetConfig deeponet;

  static BackboneConfig fno1d_pk();      // 4 -> 32 -> 1, 3 layers, 12 modes
  static BackboneConfig fno2d_darcy();   // 3 -> 24 -> 1, 3 layers, 8x8 modes
  static BackboneConfig deeponet_pk();   // 4-channel input, widths 32, latent 32
  int in_channels() const;
  int out_channels() const;
  std::string hash() const;  // config fingerprint for checkpoint compatibility
};

struct TrainMeta {
  int epochs_run = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
};

// Trained (or freshly initialized) backbone. Weights are plain matrices in a
// fixed per-kind layout; estimation code treats them as read-only.
struct OperatorParams {
  BackboneConfig config;
  int grid_rows = 0;  // 1 for the PK grid, H for Darcy
  int grid_cols = 0;  // number of time points for PK, W for Darcy
  std::vector<Mat> weights;
  TrainMeta meta;

  int grid_size() const { return grid_rows * grid_cols; }
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

OperatorParams init_operator(const BackboneConfig& config, int grid_rows,
                             int grid_cols, std::uint64_t seed);

// Registers the parameter matrices on the tape (leaves if trainable, constants
// otherwise) and returns their node ids in weight order.
std::vector<int> register_params(Tape& tape, const OperatorParams& params,
                                 bool trainable);

// Forward pass for a vertical stack of `batch` inputs, each grid_size x C_in.
// Returns the node holding the (batch * grid_size) x C_out output.
int operator_forward(Tape& tape, const OperatorParams& params,
                     const std::vector<int>& param_ids, int input_node, int batch);

// Single-input evaluation on the canonical grid (the only evaluation path;
// observed locations are read by indexing this output).
Vec operator_predict(const OperatorParams& params, const Mat& channels);

struct TrainConfig {
  int epochs = 20;  // upper bound when early stopping is active
  int batch = 8;
  // With patience > 0 and a non-empty validation set, training stops once the
  // validation MSE (at observed locations) has not improved for `patience`
  // consecutive epochs, and the best-epoch weights are restored. patience == 0
  // keeps the fixed epoch budget. Early stopping cannot trigger before
  // `min_epochs` epochs have run (a warmup floor against noisy early stops).
  int patience = 0;
  int min_epochs = 0;
  AdamConfig adam;
};

OperatorParams train_solution_operator(const std::vector<Observation>& data,
                                       const BackboneConfig& config, int grid_rows,
                                       int grid_cols, const TrainConfig& tc,
                                       std::uint64_t seed,
                                       const std::vector<Observation>& val = {});

// Dense truncated-DFT matrices shared by the spectral layers (cached).
// forward: (2*modes_total) x n; inverse: n x (2*modes_total).
std::shared_ptr<const Mat> dft_forward_1d(int n, int modes);
std::shared_ptr<const Mat> dft_inverse_1d(int n, int modes);
std::shared_ptr<const Mat> dft_forward_2d(int rows, int cols, int modes);
std::shared_ptr<const Mat> dft_inverse_2d(int rows, int cols, int modes);

}  // namespace dope
