#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dope/grid.hpp"

namespace dope {

// Reverse-mode autodiff over dense matrices. Nodes are created in topological
// order by construction; backward() walks the node list in reverse. Batched
// inputs are stacked vertically: a batch of B fields with R points and C
// channels lives in a (B*R) x C matrix, so channel mixing is a single GEMM.
class Tape {
 public:
  int leaf(Mat v, bool requires_grad = true);
  int constant(Mat v) { return leaf(std::move(v), false); }

  int add(int a, int b);
  int sub(int a, int b);
  int cmul(int a, int b);                 // elementwise product
  int scale(int x, double s);
  int matmul(int a, int b);
  int add_row_broadcast(int x, int bias); // bias is 1 x C, added to every row
  int gelu(int x);                        // tanh approximation
  int square(int x);
  int exp_clamp(int x, double limit = 10.0);
  int row_sum(int x);                     // (R x C) -> (R x 1)
  int sum_all(int x);                     // -> 1 x 1
  int mean_all(int x);                    // -> 1 x 1
  int row_gather(int x, std::vector<int> rows);

  // Reinterprets a (batch*R) x C stack as batch rows of length R*C, with
  // entry (b, r*C + c) taken from (b*R + r, c).
  int flatten_blocks(int x, int batch);

  // Applies the constant map L independently to each of the `batch` vertical
  // blocks of x: block'_b = L * block_b. Used for truncated spectral
  // transforms, where L is a dense DFT (or inverse DFT) matrix.
  int block_linear(int x, std::shared_ptr<const Mat> L, int batch);

  // Complex per-mode channel mixing. x holds, per batch block, `modes` rows of
  // real parts followed by `modes` rows of imaginary parts (each 1 x C). wr and
  // wi are (modes*C) x C', one C x C' complex matrix per mode. The output has
  // the same real/imaginary row layout with C' channels.
  int complex_mode_mix(int x, int wr, int wi, int batch, int modes);

  void backward(int root);  // root must be 1 x 1

  // Forward-mode directional derivative of `root` with tangent seeds attached
  // to leaves; unseeded leaves and constants carry a zero tangent.
  Mat jvp(int root, const std::vector<std::pair<int, Mat>>& seeds);

  const Mat& val(int i) const { return nodes_[i].value; }
  const Mat& grad(int i) const;
  bool requires_grad(int i) const { return nodes_[i].requires_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Mat dot;  // forward-mode tangent
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void()> back;  // empty for leaves/constants
    std::function<void()> fwd;   // tangent propagation rule
  };

  Mat& accum(int i);  // grad buffer, zero-initialized on first touch
  int push(Mat v, bool requires_grad, std::function<void()> back = {},
           std::function<void()> fwd = {});

  std::vector<Node> nodes_;
};

struct TapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dope
