#pragma once

#include <vector>

#include "dope/grid.hpp"

namespace dope {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // decoupled: applied to parameters, not moments
};

// Adam with decoupled weight decay over a list of parameter matrices.
class Adam {
 public:
  explicit Adam(const std::vector<Mat*>& params, AdamConfig cfg = {});

  // One update given gradients aligned with the parameter list.
  void step(const std::vector<Mat>& grads);

  int steps_taken() const { return t_; }

 private:
  std::vector<Mat*> params_;
  std::vector<Mat> m_, v_;
  AdamConfig cfg_;
  int t_ = 0;
};

struct OptimizerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dope
