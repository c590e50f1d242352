#include "dope/adam.hpp"

#include <cmath>

namespace dope {

Adam::Adam(const std::vector<Mat*>& params, AdamConfig cfg)
    : params_(params), cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (Mat* p : params_) {
    m_.push_back(Mat::Zero(p->rows(), p->cols()));
    v_.push_back(Mat::Zero(p->rows(), p->cols()));
  }
}

void Adam::step(const std::vector<Mat>& grads) {
  if (grads.size() != params_.size())
    throw OptimizerError("adam: gradient list does not match parameter list");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    const Mat& g = grads[i];
    Mat& p = *params_[i];
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw OptimizerError("adam: gradient shape mismatch");
    if (!g.allFinite()) throw OptimizerError("adam: non-finite gradient");
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    p -= cfg_.lr * cfg_.weight_decay * p;
    p.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
    if (!p.allFinite()) throw OptimizerError("adam: parameter became non-finite");
  }
}

}  // namespace dope
