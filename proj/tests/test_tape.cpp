#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "dope/adam.hpp"
#include "dope/rng.hpp"
#include "dope/tape.hpp"

using namespace dope;

namespace {

Mat random_mat(RngStream& rng, int r, int c, double sd = 1.0) {
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = sd * rng.normal();
  return m;
}

// central-difference check of d(loss)/d(entry) for every entry of every leaf
template <typename BuildLoss>
void fd_check(std::vector<Mat> leaves, BuildLoss build, double tol = 5e-6,
              double h = 1e-5) {
  Tape tape;
  std::vector<int> ids;
  for (auto& m : leaves) ids.push_back(tape.leaf(m));
  int loss = build(tape, ids);
  tape.backward(loss);
  for (size_t l = 0; l < leaves.size(); ++l) {
    const Mat& g = tape.grad(ids[l]);
    for (Eigen::Index j = 0; j < leaves[l].cols(); ++j)
      for (Eigen::Index i = 0; i < leaves[l].rows(); ++i) {
        auto eval = [&](double eps) {
          Tape t2;
          std::vector<int> ids2;
          for (size_t k = 0; k < leaves.size(); ++k) {
            Mat m = leaves[k];
            if (k == l) m(i, j) += eps;
            ids2.push_back(t2.leaf(m));
          }
          return t2.val(build(t2, ids2))(0, 0);
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        CHECK(g(i, j) == doctest::Approx(fd).epsilon(tol).scale(1.0));
      }
  }
}

}  // namespace

TEST_CASE("scalar chain rule on a polynomial") {
  // f(x) = (3x^2 - 2x)^2 at x = 1.5 -> f = 14.0625, f' = 2(3x^2-2x)(6x-2) = 52.5
  Tape t;
  Mat x0(1, 1);
  x0(0, 0) = 1.5;
  int x = t.leaf(x0);
  int inner = t.sub(t.scale(t.square(x), 3.0), t.scale(x, 2.0));
  int f = t.sum_all(t.square(inner));
  CHECK(t.val(f)(0, 0) == doctest::Approx(14.0625));
  t.backward(f);
  CHECK(t.grad(x)(0, 0) == doctest::Approx(52.5));
}

TEST_CASE("product rule via cmul") {
  Tape t;
  Mat a0(1, 1), b0(1, 1);
  a0(0, 0) = 2.0;
  b0(0, 0) = -3.0;
  int a = t.leaf(a0), b = t.leaf(b0);
  int f = t.sum_all(t.cmul(a, b));
  t.backward(f);
  CHECK(t.grad(a)(0, 0) == doctest::Approx(-3.0));
  CHECK(t.grad(b)(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("matmul gradients match finite differences") {
  auto rng = make_stream(1, "tape-mm");
  fd_check({random_mat(rng, 3, 4), random_mat(rng, 4, 2)},
           [](Tape& t, const std::vector<int>& v) {
             return t.mean_all(t.square(t.matmul(v[0], v[1])));
           });
}

TEST_CASE("mlp block: matmul + bias broadcast + gelu") {
  auto rng = make_stream(2, "tape-mlp");
  fd_check({random_mat(rng, 5, 3), random_mat(rng, 3, 4), random_mat(rng, 1, 4),
            random_mat(rng, 4, 1)},
           [](Tape& t, const std::vector<int>& v) {
             int h = t.gelu(t.add_row_broadcast(t.matmul(v[0], v[1]), v[2]));
             return t.mean_all(t.square(t.matmul(h, v[3])));
           });
}

TEST_CASE("gelu values at reference points") {
  Tape t;
  Mat x(3, 1);
  x << 0.0, 1.0, -1.0;
  int y = t.gelu(t.leaf(x));
  CHECK(t.val(y)(0, 0) == doctest::Approx(0.0));
  CHECK(t.val(y)(1, 0) == doctest::Approx(0.841192).epsilon(1e-5));
  CHECK(t.val(y)(2, 0) == doctest::Approx(-0.158808).epsilon(1e-5));
}

TEST_CASE("exp_clamp: value, gradient, and dead zone beyond the limit") {
  Tape t;
  Mat x(3, 1);
  x << 0.5, 12.0, -12.0;
  int xi = t.leaf(x);
  int y = t.exp_clamp(xi);
  CHECK(t.val(y)(0, 0) == doctest::Approx(std::exp(0.5)));
  CHECK(t.val(y)(1, 0) == doctest::Approx(std::exp(10.0)));
  CHECK(t.val(y)(2, 0) == doctest::Approx(std::exp(-10.0)));
  int f = t.sum_all(y);
  t.backward(f);
  CHECK(t.grad(xi)(0, 0) == doctest::Approx(std::exp(0.5)));
  CHECK(t.grad(xi)(1, 0) == 0.0);
  CHECK(t.grad(xi)(2, 0) == 0.0);

  auto rng = make_stream(3, "tape-ec");
  fd_check({random_mat(rng, 4, 2)}, [](Tape& t2, const std::vector<int>& v) {
    return t2.mean_all(t2.exp_clamp(v[0]));
  });
}

TEST_CASE("row_gather forwards selected rows and scatter-adds backward") {
  Tape t;
  Mat x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  int xi = t.leaf(x);
  int y = t.row_gather(xi, {2, 0, 2});
  CHECK(t.val(y)(0, 0) == 5);
  CHECK(t.val(y)(1, 1) == 2);
  int f = t.sum_all(y);
  t.backward(f);
  CHECK(t.grad(xi)(0, 0) == 1.0);
  CHECK(t.grad(xi)(1, 0) == 0.0);
  CHECK(t.grad(xi)(2, 1) == 2.0);  // gathered twice
  CHECK_THROWS_AS(t.row_gather(xi, {4}), TapeError);
}

TEST_CASE("block_linear applies the map per batch block") {
  auto rng = make_stream(4, "tape-bl");
  auto L = std::make_shared<Mat>(random_mat(rng, 3, 5));
  Mat x = random_mat(rng, 10, 2);  // batch 2, block height 5
  Tape t;
  int xi = t.leaf(x);
  int y = t.block_linear(xi, L, 2);
  CHECK(t.val(y).rows() == 6);
  Mat want0 = (*L) * x.topRows(5);
  Mat want1 = (*L) * x.bottomRows(5);
  CHECK((t.val(y).topRows(3) - want0).norm() < 1e-14);
  CHECK((t.val(y).bottomRows(3) - want1).norm() < 1e-14);

  fd_check({x}, [&](Tape& t2, const std::vector<int>& v) {
    return t2.mean_all(t2.square(t2.block_linear(v[0], L, 2)));
  });
}

TEST_CASE("complex_mode_mix matches explicit complex arithmetic") {
  auto rng = make_stream(5, "tape-cm");
  const int B = 2, M = 3, C = 4, Co = 2;
  Mat x = random_mat(rng, B * 2 * M, C);
  Mat wr = random_mat(rng, M * C, Co);
  Mat wi = random_mat(rng, M * C, Co);
  Tape t;
  int xi = t.leaf(x), wri = t.leaf(wr), wii = t.leaf(wi);
  int y = t.complex_mode_mix(xi, wri, wii, B, M);
  for (int b = 0; b < B; ++b)
    for (int m = 0; m < M; ++m) {
      Eigen::RowVectorXd fr = x.row(b * 2 * M + m), fi = x.row(b * 2 * M + M + m);
      Mat Wr = wr.middleRows(m * C, C), Wi = wi.middleRows(m * C, C);
      Eigen::RowVectorXd wantr = fr * Wr - fi * Wi;
      Eigen::RowVectorXd wanti = fr * Wi + fi * Wr;
      CHECK((t.val(y).row(b * 2 * M + m) - wantr).norm() < 1e-13);
      CHECK((t.val(y).row(b * 2 * M + M + m) - wanti).norm() < 1e-13);
    }

  fd_check({x, wr, wi}, [&](Tape& t2, const std::vector<int>& v) {
    return t2.mean_all(t2.square(t2.complex_mode_mix(v[0], v[1], v[2], B, M)));
  });
}

TEST_CASE("constants receive no gradient and spare the backward pass") {
  Tape t;
  int c = t.constant(Mat::Ones(2, 2));
  int x = t.leaf(Mat::Ones(2, 2));
  int f = t.sum_all(t.cmul(c, x));
  t.backward(f);
  CHECK(t.grad(x)(0, 0) == 1.0);
  CHECK_THROWS_AS(t.grad(c), TapeError);
}

TEST_CASE("gradient accumulates across reused nodes") {
  // f = sum(x) + sum(x) -> df/dx = 2
  Tape t;
  int x = t.leaf(Mat::Ones(2, 2));
  int f = t.add(t.sum_all(x), t.sum_all(x));
  t.backward(f);
  CHECK(t.grad(x)(1, 1) == 2.0);
}

TEST_CASE("row_sum, mean_all, sub against finite differences") {
  auto rng = make_stream(6, "tape-rs");
  fd_check({random_mat(rng, 4, 3), random_mat(rng, 4, 3)},
           [](Tape& t, const std::vector<int>& v) {
             int d = t.sub(v[0], v[1]);
             return t.mean_all(t.square(t.row_sum(d)));
           });
}

TEST_CASE("jvp: linearity, zero tangent, and transpose consistency") {
  auto rng = make_stream(7, "tape-jvp");
  // linear map: jvp equals the map applied to the tangent
  Mat A = random_mat(rng, 3, 4);
  Mat x = random_mat(rng, 4, 1);
  Mat v = random_mat(rng, 4, 1);
  {
    Tape t;
    int xi = t.leaf(x);
    int y = t.matmul(t.constant(A), xi);
    int s = t.sum_all(y);
    Mat d = t.jvp(s, {{xi, v}});
    CHECK(d(0, 0) == doctest::Approx((A * v).sum()).epsilon(1e-12));
    CHECK(t.jvp(s, {{xi, Mat::Zero(4, 1)}})(0, 0) == 0.0);
  }

  // nonlinear composite: <reverse gradient, v> == jvp along v, 1e-10 relative
  const int B = 2, M = 3, C = 4;
  std::vector<Mat> leaves = {random_mat(rng, B * 2 * M, C),
                             random_mat(rng, M * C, C), random_mat(rng, M * C, C),
                             random_mat(rng, C, 2), random_mat(rng, 1, 2)};
  auto build = [&](Tape& t, const std::vector<int>& id) {
    int mix = t.complex_mode_mix(id[0], id[1], id[2], B, M);
    int h = t.gelu(t.add_row_broadcast(t.matmul(mix, id[3]), id[4]));
    return t.mean_all(t.square(h));
  };
  Tape t;
  std::vector<int> ids;
  for (auto& m : leaves) ids.push_back(t.leaf(m));
  int loss = build(t, ids);
  t.backward(loss);
  std::vector<std::pair<int, Mat>> seeds;
  double dot_rev = 0.0;
  for (size_t l = 0; l < leaves.size(); ++l) {
    Mat tv = random_mat(rng, int(leaves[l].rows()), int(leaves[l].cols()));
    dot_rev += (t.grad(ids[l]).cwiseProduct(tv)).sum();
    seeds.emplace_back(ids[l], std::move(tv));
  }
  const double dot_fwd = t.jvp(loss, seeds)(0, 0);
  CHECK(std::abs(dot_fwd - dot_rev) <= 1e-10 * std::max(1.0, std::abs(dot_rev)));
}

TEST_CASE("jvp: every op participates and matches reverse mode") {
  auto rng = make_stream(8, "tape-jvp2");
  std::vector<Mat> leaves = {random_mat(rng, 8, 3), random_mat(rng, 8, 3)};
  auto L = std::make_shared<Mat>(random_mat(rng, 2, 4));
  auto build = [&](Tape& t, const std::vector<int>& id) {
    int a = t.cmul(t.sub(id[0], id[1]), t.add(id[0], id[1]));
    int b = t.block_linear(t.scale(a, 0.7), L, 2);
    int c = t.row_gather(t.exp_clamp(b, 3.0), {0, 3, 1});
    return t.mean_all(t.square(t.row_sum(c)));
  };
  Tape t;
  std::vector<int> ids;
  for (auto& m : leaves) ids.push_back(t.leaf(m));
  int loss = build(t, ids);
  t.backward(loss);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<std::pair<int, Mat>> seeds;
    double dot_rev = 0.0;
    for (size_t l = 0; l < leaves.size(); ++l) {
      Mat tv = random_mat(rng, 8, 3);
      dot_rev += (t.grad(ids[l]).cwiseProduct(tv)).sum();
      seeds.emplace_back(ids[l], std::move(tv));
    }
    const double dot_fwd = t.jvp(loss, seeds)(0, 0);
    CHECK(std::abs(dot_fwd - dot_rev) <= 1e-10 * std::max(1.0, std::abs(dot_rev)));
  }
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape t;
  int x = t.leaf(Mat::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(x), TapeError);
}

TEST_CASE("adam: first step moves each coordinate by about lr") {
  Mat p = Mat::Zero(2, 2);
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  Adam opt({&p}, cfg);
  Mat g(2, 2);
  g << 0.3, -2.0, 11.0, -0.04;
  opt.step({g});
  for (int i = 0; i < 4; ++i) {
    const double step = p(i / 2, i % 2);
    CHECK(std::abs(std::abs(step) - cfg.lr) < 1e-5);
    CHECK(step * g(i / 2, i % 2) < 0.0);  // opposite sign of gradient
  }
}

TEST_CASE("adam: zero gradient with zero weight decay is a no-op") {
  Mat p(1, 2);
  p << 3.0, -4.0;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  Adam opt({&p}, cfg);
  opt.step({Mat::Zero(1, 2)});
  CHECK(p(0, 0) == 3.0);
  CHECK(p(0, 1) == -4.0);
}

TEST_CASE("adam: decoupled weight decay shrinks parameters toward zero") {
  Mat p(1, 1);
  p(0, 0) = 10.0;
  AdamConfig cfg;
  cfg.weight_decay = 0.1;
  Adam opt({&p}, cfg);
  opt.step({Mat::Zero(1, 1)});
  CHECK(p(0, 0) == doctest::Approx(10.0 * (1.0 - cfg.lr * cfg.weight_decay)));
}

TEST_CASE("adam: converges on a quadratic") {
  Mat p(1, 1);
  p(0, 0) = 5.0;
  AdamConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  Adam opt({&p}, cfg);
  for (int i = 0; i < 2000; ++i) {
    Mat g(1, 1);
    g(0, 0) = 2.0 * (p(0, 0) - 1.0);
    opt.step({g});
  }
  CHECK(p(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("adam: rejects non-finite gradients and shape mismatches") {
  Mat p = Mat::Zero(2, 2);
  Adam opt({&p});
  Mat bad = Mat::Zero(2, 2);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step({bad}), OptimizerError);
  CHECK_THROWS_AS(opt.step({Mat::Zero(1, 2)}), OptimizerError);
  CHECK_THROWS_AS(opt.step(std::vector<Mat>{}), OptimizerError);
}
