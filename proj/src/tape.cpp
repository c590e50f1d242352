#include "dope/tape.hpp"

#include <cmath>
#include <utility>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace dope {

namespace {

#ifdef __GLIBC__
// Intermediate matrices in training graphs run to a few hundred KB; with the
// default mmap threshold every allocation round-trips through mmap and page
// faults. Keeping them on the heap roughly halves training time.
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 128 << 20);
  }
} const malloc_tuning;
#endif

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

int Tape::push(Mat v, bool requires_grad, std::function<void()> back,
               std::function<void()> fwd) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  n.fwd = std::move(fwd);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Mat v, bool requires_grad) {
  return push(std::move(v), requires_grad);
}

Mat& Tape::accum(int i) {
  Node& n = nodes_[i];
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

const Mat& Tape::grad(int i) const {
  if (!nodes_[i].has_grad) throw TapeError("gradient not computed for node");
  return nodes_[i].grad;
}

int Tape::add(int a, int b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    throw TapeError("add: shape mismatch");
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  int out = push(nodes_[a].value + nodes_[b].value, rg);
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) accum(a) += g;
    if (nodes_[b].requires_grad) accum(b) += g;
  };
  nodes_[out].fwd = [this, a, b, out] {
    nodes_[out].dot = nodes_[a].dot + nodes_[b].dot;
  };
  return out;
}

int Tape::sub(int a, int b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    throw TapeError("sub: shape mismatch");
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  int out = push(nodes_[a].value - nodes_[b].value, rg);
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) accum(a) += g;
    if (nodes_[b].requires_grad) accum(b) -= g;
  };
  nodes_[out].fwd = [this, a, b, out] {
    nodes_[out].dot = nodes_[a].dot - nodes_[b].dot;
  };
  return out;
}

int Tape::cmul(int a, int b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols())
    throw TapeError("cmul: shape mismatch");
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  int out = push(nodes_[a].value.cwiseProduct(nodes_[b].value), rg);
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) accum(a) += g.cwiseProduct(nodes_[b].value);
    if (nodes_[b].requires_grad) accum(b) += g.cwiseProduct(nodes_[a].value);
  };
  nodes_[out].fwd = [this, a, b, out] {
    nodes_[out].dot = nodes_[a].dot.cwiseProduct(nodes_[b].value) +
                      nodes_[a].value.cwiseProduct(nodes_[b].dot);
  };
  return out;
}

int Tape::scale(int x, double s) {
  const bool rg = nodes_[x].requires_grad;
  int out = push(s * nodes_[x].value, rg);
  nodes_[out].back = [this, x, out, s] {
    if (nodes_[x].requires_grad) accum(x) += s * nodes_[out].grad;
  };
  nodes_[out].fwd = [this, x, out, s] { nodes_[out].dot = s * nodes_[x].dot; };
  return out;
}

int Tape::matmul(int a, int b) {
  if (nodes_[a].value.cols() != nodes_[b].value.rows())
    throw TapeError("matmul: inner dimension mismatch");
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  int out = push(nodes_[a].value * nodes_[b].value, rg);
  nodes_[out].back = [this, a, b, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[a].requires_grad) accum(a) += g * nodes_[b].value.transpose();
    if (nodes_[b].requires_grad) accum(b) += nodes_[a].value.transpose() * g;
  };
  nodes_[out].fwd = [this, a, b, out] {
    nodes_[out].dot =
        nodes_[a].dot * nodes_[b].value + nodes_[a].value * nodes_[b].dot;
  };
  return out;
}

int Tape::add_row_broadcast(int x, int bias) {
  if (nodes_[bias].value.rows() != 1 ||
      nodes_[bias].value.cols() != nodes_[x].value.cols())
    throw TapeError("add_row_broadcast: bias must be 1 x cols(x)");
  const bool rg = nodes_[x].requires_grad || nodes_[bias].requires_grad;
  Mat v = nodes_[x].value;
  v.rowwise() += nodes_[bias].value.row(0);
  int out = push(std::move(v), rg);
  nodes_[out].back = [this, x, bias, out] {
    const Mat& g = nodes_[out].grad;
    if (nodes_[x].requires_grad) accum(x) += g;
    if (nodes_[bias].requires_grad) accum(bias) += g.colwise().sum();
  };
  nodes_[out].fwd = [this, x, bias, out] {
    nodes_[out].dot = nodes_[x].dot;
    nodes_[out].dot.rowwise() += nodes_[bias].dot.row(0);
  };
  return out;
}

int Tape::gelu(int x) {
  const auto v = nodes_[x].value.array();
  // tanh(z) = 1 - 2/(exp(2z)+1): exp vectorizes for doubles, tanh does not
  Eigen::ArrayXXd th =
      1.0 - 2.0 / ((2.0 * kGeluC * (v + kGeluA * v.cube())).exp() + 1.0);
  Mat y = (0.5 * v * (1.0 + th)).matrix();
  // local derivative, cached so backward/forward passes skip the tanh
  auto deriv = std::make_shared<Mat>(
      (0.5 * (1.0 + th) +
       0.5 * v * (1.0 - th.square()) * kGeluC * (1.0 + 3.0 * kGeluA * v.square()))
          .matrix());
  const bool rg = nodes_[x].requires_grad;
  int out = push(std::move(y), rg);
  nodes_[out].back = [this, x, out, deriv] {
    if (nodes_[x].requires_grad)
      accum(x) += nodes_[out].grad.cwiseProduct(*deriv);
  };
  nodes_[out].fwd = [this, x, out, deriv] {
    nodes_[out].dot = nodes_[x].dot.cwiseProduct(*deriv);
  };
  return out;
}

int Tape::square(int x) {
  const bool rg = nodes_[x].requires_grad;
  int out = push(nodes_[x].value.array().square().matrix(), rg);
  nodes_[out].back = [this, x, out] {
    if (nodes_[x].requires_grad)
      accum(x) += 2.0 * nodes_[out].grad.cwiseProduct(nodes_[x].value);
  };
  nodes_[out].fwd = [this, x, out] {
    nodes_[out].dot = 2.0 * nodes_[x].dot.cwiseProduct(nodes_[x].value);
  };
  return out;
}

int Tape::exp_clamp(int x, double limit) {
  const Mat& v = nodes_[x].value;
  Mat y = v.array().min(limit).max(-limit).exp().matrix();
  const bool rg = nodes_[x].requires_grad;
  int out = push(std::move(y), rg);
  auto local_deriv = [this, x, out, limit](Eigen::Index i, Eigen::Index j) {
    const double t = nodes_[x].value(i, j);
    return std::abs(t) < limit ? nodes_[out].value(i, j) : 0.0;
  };
  nodes_[out].back = [this, x, out, local_deriv] {
    if (!nodes_[x].requires_grad) return;
    const Mat& g = nodes_[out].grad;
    Mat& gx = accum(x);
    for (Eigen::Index j = 0; j < g.cols(); ++j)
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        gx(i, j) += local_deriv(i, j) * g(i, j);
  };
  nodes_[out].fwd = [this, x, out, local_deriv] {
    const Mat& d = nodes_[x].dot;
    Mat& od = nodes_[out].dot;
    od.resize(d.rows(), d.cols());
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        od(i, j) = local_deriv(i, j) * d(i, j);
  };
  return out;
}

int Tape::row_sum(int x) {
  const bool rg = nodes_[x].requires_grad;
  int out = push(nodes_[x].value.rowwise().sum(), rg);
  nodes_[out].back = [this, x, out] {
    if (nodes_[x].requires_grad)
      accum(x) += nodes_[out].grad.col(0).replicate(1, nodes_[x].value.cols());
  };
  nodes_[out].fwd = [this, x, out] {
    nodes_[out].dot = nodes_[x].dot.rowwise().sum();
  };
  return out;
}

int Tape::sum_all(int x) {
  const bool rg = nodes_[x].requires_grad;
  Mat s(1, 1);
  s(0, 0) = nodes_[x].value.sum();
  int out = push(std::move(s), rg);
  nodes_[out].back = [this, x, out] {
    if (nodes_[x].requires_grad) accum(x).array() += nodes_[out].grad(0, 0);
  };
  nodes_[out].fwd = [this, x, out] {
    nodes_[out].dot.resize(1, 1);
    nodes_[out].dot(0, 0) = nodes_[x].dot.sum();
  };
  return out;
}

int Tape::mean_all(int x) {
  const double n = static_cast<double>(nodes_[x].value.size());
  return scale(sum_all(x), 1.0 / n);
}

int Tape::row_gather(int x, std::vector<int> rows) {
  const Mat& v = nodes_[x].value;
  for (int r : rows)
    if (r < 0 || r >= v.rows()) throw TapeError("row_gather: index out of range");
  Mat y(static_cast<Eigen::Index>(rows.size()), v.cols());
  for (size_t k = 0; k < rows.size(); ++k) y.row(k) = v.row(rows[k]);
  const bool rg = nodes_[x].requires_grad;
  auto shared_rows = std::make_shared<std::vector<int>>(std::move(rows));
  int out = push(std::move(y), rg);
  nodes_[out].back = [this, x, out, shared_rows] {
    if (!nodes_[x].requires_grad) return;
    const Mat& g = nodes_[out].grad;
    Mat& gx = accum(x);
    for (size_t k = 0; k < shared_rows->size(); ++k)
      gx.row((*shared_rows)[k]) += g.row(k);
  };
  nodes_[out].fwd = [this, x, out, shared_rows] {
    const Mat& d = nodes_[x].dot;
    Mat& od = nodes_[out].dot;
    od.resize(static_cast<Eigen::Index>(shared_rows->size()), d.cols());
    for (size_t k = 0; k < shared_rows->size(); ++k)
      od.row(k) = d.row((*shared_rows)[k]);
  };
  return out;
}

int Tape::flatten_blocks(int x, int batch) {
  const Mat& v = nodes_[x].value;
  if (batch <= 0 || v.rows() % batch != 0)
    throw TapeError("flatten_blocks: rows not divisible by batch");
  const Eigen::Index R = v.rows() / batch;
  const Eigen::Index C = v.cols();
  auto apply = [batch, R, C](const Mat& src) {
    Mat dst(batch, R * C);
    for (int b = 0; b < batch; ++b)
      for (Eigen::Index r = 0; r < R; ++r)
        for (Eigen::Index c = 0; c < C; ++c) dst(b, r * C + c) = src(b * R + r, c);
    return dst;
  };
  const bool rg = nodes_[x].requires_grad;
  int out = push(apply(v), rg);
  nodes_[out].back = [this, x, out, batch, R, C] {
    if (!nodes_[x].requires_grad) return;
    const Mat& g = nodes_[out].grad;
    Mat& gx = accum(x);
    for (int b = 0; b < batch; ++b)
      for (Eigen::Index r = 0; r < R; ++r)
        for (Eigen::Index c = 0; c < C; ++c) gx(b * R + r, c) += g(b, r * C + c);
  };
  nodes_[out].fwd = [this, x, out, apply] { nodes_[out].dot = apply(nodes_[x].dot); };
  return out;
}

int Tape::block_linear(int x, std::shared_ptr<const Mat> L, int batch) {
  const Mat& v = nodes_[x].value;
  if (batch <= 0 || v.rows() % batch != 0)
    throw TapeError("block_linear: rows not divisible by batch");
  const Eigen::Index in_r = v.rows() / batch;
  if (L->cols() != in_r) throw TapeError("block_linear: map width mismatch");
  const Eigen::Index out_r = L->rows();
  auto apply = [L, batch, in_r, out_r](const Mat& src) {
    Mat dst(out_r * batch, src.cols());
    for (int b = 0; b < batch; ++b)
      dst.middleRows(b * out_r, out_r).noalias() =
          (*L) * src.middleRows(b * in_r, in_r);
    return dst;
  };
  const bool rg = nodes_[x].requires_grad;
  int out = push(apply(v), rg);
  nodes_[out].back = [this, x, out, L, batch, in_r, out_r] {
    if (!nodes_[x].requires_grad) return;
    const Mat& g = nodes_[out].grad;
    Mat& gx = accum(x);
    for (int b = 0; b < batch; ++b)
      gx.middleRows(b * in_r, in_r).noalias() +=
          L->transpose() * g.middleRows(b * out_r, out_r);
  };
  nodes_[out].fwd = [this, x, out, apply] {
    nodes_[out].dot = apply(nodes_[x].dot);
  };
  return out;
}

int Tape::complex_mode_mix(int x, int wr, int wi, int batch, int modes) {
  const Mat& v = nodes_[x].value;
  const Mat& Wr = nodes_[wr].value;
  const Mat& Wi = nodes_[wi].value;
  if (v.rows() != Eigen::Index(2) * modes * batch)
    throw TapeError("complex_mode_mix: row count mismatch");
  const Eigen::Index C = v.cols();
  if (Wr.rows() != Eigen::Index(modes) * C || Wi.rows() != Eigen::Index(modes) * C ||
      Wr.cols() != Wi.cols())
    throw TapeError("complex_mode_mix: weight shape mismatch");
  const Eigen::Index Co = Wr.cols();

  auto rrow = [modes](int b, int m) { return Eigen::Index(b) * 2 * modes + m; };
  auto irow = [modes](int b, int m) {
    return Eigen::Index(b) * 2 * modes + modes + m;
  };

  // (xr + i xi)(Wr + i Wi) applied per mode, with batch rows gathered so each
  // mode is one small GEMM
  auto apply = [batch, modes, C, rrow, irow](const Mat& xr_xi, const Mat& Wr2,
                                             const Mat& Wi2) {
    const Eigen::Index Co2 = Wr2.cols();
    Mat y(Eigen::Index(2) * modes * batch, Co2);
    Mat Fr(batch, C), Fi(batch, C);
    for (int m = 0; m < modes; ++m) {
      for (int b = 0; b < batch; ++b) {
        Fr.row(b) = xr_xi.row(rrow(b, m));
        Fi.row(b) = xr_xi.row(irow(b, m));
      }
      const auto Wrm = Wr2.middleRows(Eigen::Index(m) * C, C);
      const auto Wim = Wi2.middleRows(Eigen::Index(m) * C, C);
      Mat Or = Fr * Wrm - Fi * Wim;
      Mat Oi = Fr * Wim + Fi * Wrm;
      for (int b = 0; b < batch; ++b) {
        y.row(rrow(b, m)) = Or.row(b);
        y.row(irow(b, m)) = Oi.row(b);
      }
    }
    return y;
  };

  const bool rg =
      nodes_[x].requires_grad || nodes_[wr].requires_grad || nodes_[wi].requires_grad;
  int out = push(apply(v, Wr, Wi), rg);
  nodes_[out].back = [this, x, wr, wi, out, batch, modes, C, rrow, irow] {
    const Mat& v2 = nodes_[x].value;
    const Mat& Wr2 = nodes_[wr].value;
    const Mat& Wi2 = nodes_[wi].value;
    const Mat& g = nodes_[out].grad;
    Mat Fr(batch, C), Fi(batch, C);
    Mat Gr(batch, g.cols()), Gi(batch, g.cols());
    for (int m = 0; m < modes; ++m) {
      for (int b = 0; b < batch; ++b) {
        Fr.row(b) = v2.row(rrow(b, m));
        Fi.row(b) = v2.row(irow(b, m));
        Gr.row(b) = g.row(rrow(b, m));
        Gi.row(b) = g.row(irow(b, m));
      }
      const auto Wrm = Wr2.middleRows(Eigen::Index(m) * C, C);
      const auto Wim = Wi2.middleRows(Eigen::Index(m) * C, C);
      if (nodes_[x].requires_grad) {
        Mat gFr = Gr * Wrm.transpose() + Gi * Wim.transpose();
        Mat gFi = -Gr * Wim.transpose() + Gi * Wrm.transpose();
        Mat& gx = accum(x);
        for (int b = 0; b < batch; ++b) {
          gx.row(rrow(b, m)) += gFr.row(b);
          gx.row(irow(b, m)) += gFi.row(b);
        }
      }
      if (nodes_[wr].requires_grad)
        accum(wr).middleRows(Eigen::Index(m) * C, C).noalias() +=
            Fr.transpose() * Gr + Fi.transpose() * Gi;
      if (nodes_[wi].requires_grad)
        accum(wi).middleRows(Eigen::Index(m) * C, C).noalias() +=
            Fr.transpose() * Gi - Fi.transpose() * Gr;
    }
  };
  nodes_[out].fwd = [this, x, wr, wi, out, apply] {
    // product rule for the bilinear form
    nodes_[out].dot = apply(nodes_[x].dot, nodes_[wr].value, nodes_[wi].value) +
                      apply(nodes_[x].value, nodes_[wr].dot, nodes_[wi].dot);
  };
  return out;
}

void Tape::backward(int root) {
  if (nodes_[root].value.rows() != 1 || nodes_[root].value.cols() != 1)
    throw TapeError("backward: root must be a scalar node");
  if (!nodes_[root].requires_grad)
    throw TapeError("backward: root does not depend on any parameter");
  accum(root)(0, 0) = 1.0;
  for (int i = root; i >= 0; --i)
    if (nodes_[i].has_grad && nodes_[i].back) nodes_[i].back();
}

Mat Tape::jvp(int root, const std::vector<std::pair<int, Mat>>& seeds) {
  for (int i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    if (!n.fwd) n.dot = Mat::Zero(n.value.rows(), n.value.cols());
  }
  for (const auto& [idx, tangent] : seeds) {
    if (idx < 0 || idx > root) throw TapeError("jvp: seed index out of range");
    if (nodes_[idx].fwd) throw TapeError("jvp: seeds must attach to leaves");
    if (tangent.rows() != nodes_[idx].value.rows() ||
        tangent.cols() != nodes_[idx].value.cols())
      throw TapeError("jvp: tangent shape mismatch");
    nodes_[idx].dot = tangent;
  }
  for (int i = 0; i <= root; ++i)
    if (nodes_[i].fwd) nodes_[i].fwd();
  return nodes_[root].dot;
}

}  // namespace dope
