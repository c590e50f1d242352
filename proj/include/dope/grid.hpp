#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace dope {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct InvalidGridError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Uniform grid on [0, T] with points t_d = (d-1)/(delta-1) * T.
struct Grid1D {
  double horizon = 1.0;
  int delta = 2;
  Vec points;

  Grid1D() = default;
  Grid1D(double T, int delta_) : horizon(T), delta(delta_) {
    if (delta < 2) throw InvalidGridError("Grid1D: need at least 2 points, got " + std::to_string(delta));
    points.resize(delta);
    for (int d = 0; d < delta; ++d) points[d] = double(d) / double(delta - 1) * T;
  }

  double spacing() const { return horizon / double(delta - 1); }
};

// Tensor-product grid on [0,1]^2, row-major flattened index q + W*p.
struct Grid2D {
  int height = 2;
  int width = 2;

  Grid2D() = default;
  Grid2D(int H, int W) : height(H), width(W) {
    if (H < 2 || W < 2) throw InvalidGridError("Grid2D: need at least 2 points per axis");
  }

  int size() const { return height * width; }
  int flat(int p, int q) const { return q + width * p; }
  double x(int p) const { return double(p) / double(height - 1); }
  double y(int q) const { return double(q) / double(width - 1); }
};

struct QuadratureWeights {
  Vec values;  // positive, sum to 1

  int size() const { return int(values.size()); }
};

// Normalized trapezoid rule: boundary 1/(2(delta-1)), interior 1/(delta-1).
QuadratureWeights trapezoid_weights_1d(int delta);

// Product of 1D trapezoid weights, normalized to sum to 1.
QuadratureWeights trapezoid_weights_2d(int H, int W);

// <f, h>_w = sum_d w_d f_d h_d
double inner_product(const Vec& f, const Vec& h, const QuadratureWeights& w);

}  // namespace dope
