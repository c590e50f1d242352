#include "dope/grid.hpp"

namespace dope {

QuadratureWeights trapezoid_weights_1d(int delta) {
  if (delta < 2) throw InvalidGridError("trapezoid_weights_1d: delta must be >= 2");
  QuadratureWeights w;
  w.values = Vec::Constant(delta, 1.0 / double(delta - 1));
  w.values[0] *= 0.5;
  w.values[delta - 1] *= 0.5;
  return w;
}

QuadratureWeights trapezoid_weights_2d(int H, int W) {
  if (H < 2 || W < 2) throw InvalidGridError("trapezoid_weights_2d: H and W must be >= 2");
  Vec wx = Vec::Ones(H);
  wx[0] = wx[H - 1] = 0.5;
  Vec wy = Vec::Ones(W);
  wy[0] = wy[W - 1] = 0.5;
  QuadratureWeights w;
  w.values.resize(H * W);
  for (int p = 0; p < H; ++p)
    for (int q = 0; q < W; ++q) w.values[q + W * p] = wx[p] * wy[q];
  w.values /= w.values.sum();
  return w;
}

double inner_product(const Vec& f, const Vec& h, const QuadratureWeights& w) {
  if (f.size() != h.size() || f.size() != w.values.size())
    throw ShapeError("inner_product: length mismatch");
  return (w.values.array() * f.array() * h.array()).sum();
}

}  // namespace dope
