#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dope/operators.hpp"
#include "dope/pk.hpp"

using namespace dope;

namespace {

Mat random_channels(RngStream& rng, int n, int c) {
  Mat m(n, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < n; ++i) m(i, j) = rng.normal();
  return m;
}

// small configs keep the finite-difference sweeps fast
BackboneConfig tiny_fno1d() {
  BackboneConfig c;
  c.kind = BackboneKind::Fno1d;
  c.fno = {2, 3, 1, 2, 3};
  return c;
}

BackboneConfig tiny_fno2d() {
  BackboneConfig c;
  c.kind = BackboneKind::Fno2d;
  c.fno = {3, 3, 1, 2, 2};
  return c;
}

BackboneConfig tiny_deeponet() {
  BackboneConfig c;
  c.kind = BackboneKind::DeepONet;
  c.deeponet = {2, 4, 4, 3, 1};
  return c;
}

void fd_gradient_check(const BackboneConfig& cfg, int rows, int cols,
                       std::uint64_t seed) {
  OperatorParams params = init_operator(cfg, rows, cols, seed);
  auto rng = make_stream(seed, "fd-input");
  const int n = rows * cols;
  const int B = 2;
  Mat input = random_channels(rng, B * n, cfg.in_channels());

  auto loss_value = [&](const OperatorParams& p) {
    Tape t;
    auto ids = register_params(t, p, false);
    int out = operator_forward(t, p, ids, t.constant(input), B);
    Mat target = Mat::Zero(t.val(out).rows(), t.val(out).cols());
    return (t.val(out) - target).squaredNorm() / double(t.val(out).size());
  };

  Tape t;
  auto ids = register_params(t, params, true);
  int out = operator_forward(t, params, ids, t.constant(input), B);
  int loss = t.mean_all(t.square(out));
  t.backward(loss);

  const double h = 1e-6;
  for (size_t wi = 0; wi < params.weights.size(); ++wi) {
    const Mat& g = t.grad(ids[wi]);
    // probe a handful of entries per weight to keep runtime bounded
    auto probe = make_stream(seed, "fd-probe", wi);
    const int trials = std::min<int>(6, int(params.weights[wi].size()));
    for (int trial = 0; trial < trials; ++trial) {
      const int i = probe.uniform_int(0, int(params.weights[wi].rows()) - 1);
      const int j = probe.uniform_int(0, int(params.weights[wi].cols()) - 1);
      OperatorParams pp = params, pm = params;
      pp.weights[wi](i, j) += h;
      pm.weights[wi](i, j) -= h;
      const double fd = (loss_value(pp) - loss_value(pm)) / (2 * h);
      const double denom = std::max({1.0, std::abs(fd), std::abs(g(i, j))});
      CHECK(std::abs(g(i, j) - fd) / denom < 1e-5);
    }
  }
}

}  // namespace

TEST_CASE("pk preset shapes: (4,128) in -> (1,128) out") {
  auto cfg = BackboneConfig::fno1d_pk();
  OperatorParams p = init_operator(cfg, 1, 128, 7);
  auto rng = make_stream(7, "shape");
  Vec out = operator_predict(p, random_channels(rng, 128, 4));
  CHECK(out.size() == 128);
  CHECK(out.allFinite());
}

TEST_CASE("darcy preset shapes: (3,17x17) in -> 289 out") {
  auto cfg = BackboneConfig::fno2d_darcy();
  OperatorParams p = init_operator(cfg, 17, 17, 7);
  auto rng = make_stream(8, "shape2");
  Vec out = operator_predict(p, random_channels(rng, 289, 3));
  CHECK(out.size() == 289);
  CHECK(out.allFinite());
}

TEST_CASE("mode truncation: energy beyond retained modes dies in the spectral path") {
  // apply the forward/inverse pair directly: a pure mode-20 signal with 12
  // retained modes must map to exactly zero
  auto Lf = dft_forward_1d(128, 12);
  auto Li = dft_inverse_1d(128, 12);
  Vec sig(128);
  for (int t = 0; t < 128; ++t) sig[t] = std::cos(2.0 * M_PI * 20.0 * t / 128.0);
  Vec through = (*Li) * ((*Lf) * sig);
  CHECK(through.cwiseAbs().maxCoeff() < 1e-12);

  // a retained mode passes through unchanged (c_m bookkeeping)
  for (int m : {0, 1, 5, 11}) {
    Vec keep(128);
    for (int t = 0; t < 128; ++t) keep[t] = std::cos(2.0 * M_PI * m * t / 128.0);
    Vec back = (*Li) * ((*Lf) * keep);
    CHECK((back - keep).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("2d transform pair: retained modes reconstruct, others vanish") {
  auto Lf = dft_forward_2d(17, 17, 8);
  auto Li = dft_inverse_2d(17, 17, 8);
  Vec keep(289), drop(289);
  for (int p = 0; p < 17; ++p)
    for (int q = 0; q < 17; ++q) {
      keep[p * 17 + q] = std::cos(2.0 * M_PI * (3.0 * p + 5.0 * q) / 17.0);
      drop[p * 17 + q] = std::cos(2.0 * M_PI * (11.0 * p + 2.0 * q) / 17.0);
    }
  CHECK(((*Li) * ((*Lf) * keep) - keep).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(((*Li) * ((*Lf) * drop)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fno-1d gradients match finite differences") {
  fd_gradient_check(tiny_fno1d(), 1, 16, 11);
}

TEST_CASE("fno-2d gradients match finite differences") {
  fd_gradient_check(tiny_fno2d(), 5, 5, 12);
}

TEST_CASE("deeponet gradients match finite differences") {
  fd_gradient_check(tiny_deeponet(), 1, 6, 13);
}

TEST_CASE("deeponet: output length equals query count, branch linearity") {
  auto cfg = tiny_deeponet();
  OperatorParams p = init_operator(cfg, 1, 24, 3);
  auto rng = make_stream(3, "don");
  Mat a = random_channels(rng, 24, 2);
  Vec out = operator_predict(p, a);
  CHECK(out.size() == 24);

  // with the trunk fixed, output is affine in the branch embedding: replacing
  // branch weights W by (W1+W2)/2 with shared bias gives the average output
  OperatorParams p1 = p, p2 = p, pm = p;
  auto perturb = make_stream(4, "don2");
  for (int wi : {0, 2}) {
    Mat d = random_channels(perturb, int(p.weights[wi].rows()), int(p.weights[wi].cols()));
    p1.weights[wi] = p.weights[wi] + d;
    p2.weights[wi] = p.weights[wi] - d;
  }
  // the branch output is affine in its final-layer weights only; test via w[2]
  p1 = p;
  p2 = p;
  Mat d2 = random_channels(perturb, int(p.weights[2].rows()), int(p.weights[2].cols()));
  p1.weights[2] = p.weights[2] + d2;
  p2.weights[2] = p.weights[2] - d2;
  Vec o1 = operator_predict(p1, a), o2 = operator_predict(p2, a);
  CHECK((0.5 * (o1 + o2) - out).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(init_operator(tiny_fno1d(), 1, 4, 0), ConfigError);  // grid < 2*modes
  BackboneConfig bad = tiny_fno1d();
  bad.fno.n_layers = 0;
  CHECK_THROWS_AS(init_operator(bad, 1, 16, 0), ConfigError);
  BackboneConfig don = tiny_deeponet();
  don.deeponet.out_channels = 2;
  CHECK_THROWS_AS(init_operator(don, 1, 8, 0), ConfigError);
}

TEST_CASE("config hash separates configs and is stable") {
  auto a = BackboneConfig::fno1d_pk();
  auto b = BackboneConfig::fno2d_darcy();
  CHECK(a.hash() == BackboneConfig::fno1d_pk().hash());
  CHECK(a.hash() != b.hash());
  auto c = a;
  c.fno.modes = 13;
  CHECK(a.hash() != c.hash());
}

TEST_CASE("epochs=0 returns the initialization unchanged") {
  Dataset data = pk::generate_dataset(4, 0.25, 5);
  TrainConfig tc;
  tc.epochs = 0;
  auto cfg = BackboneConfig::fno1d_pk();
  OperatorParams trained =
      train_solution_operator(data.samples, cfg, 1, 128, tc, 99);
  OperatorParams fresh = init_operator(cfg, 1, 128, 99);
  REQUIRE(trained.weights.size() == fresh.weights.size());
  for (size_t i = 0; i < fresh.weights.size(); ++i)
    CHECK((trained.weights[i] - fresh.weights[i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(trained.meta.epochs_run == 0);
}

TEST_CASE("single-sample overfit: loss < 1e-4 within 500 epochs") {
  Dataset data = pk::generate_dataset(1, 0.0, 17);
  TrainConfig tc;
  tc.epochs = 500;
  tc.batch = 1;
  auto cfg = BackboneConfig::fno1d_pk();
  OperatorParams trained =
      train_solution_operator(data.samples, cfg, 1, 128, tc, 21);
  CHECK(trained.meta.final_loss < 1e-4);
}

TEST_CASE("training makes progress across seeds") {
  Dataset data = pk::generate_dataset(16, 0.25, 23);
  auto cfg = BackboneConfig::fno1d_pk();
  TrainConfig short_tc;
  short_tc.epochs = 2;
  int improved = 0;
  const int n_seeds = 10;
  for (int s = 0; s < n_seeds; ++s) {
    OperatorParams init = init_operator(cfg, 1, 128, 100 + s);
    // initial loss: mean squared residual at observed points
    double init_loss = 0.0;
    for (const auto& obs : data.samples) {
      Vec pred = operator_predict(init, obs.channels);
      double l = 0.0;
      for (int k = 0; k < obs.num_obs(); ++k)
        l += std::pow(obs.y[k] - pred[obs.obs_indices[k]], 2);
      init_loss += l / obs.num_obs() / double(data.samples.size());
    }
    OperatorParams trained =
        train_solution_operator(data.samples, cfg, 1, 128, short_tc, 100 + s);
    if (trained.meta.final_loss < init_loss) ++improved;
  }
  CHECK(improved == n_seeds);
}

TEST_CASE("determinism: identical seeds give identical parameters") {
  Dataset data = pk::generate_dataset(8, 0.5, 31);
  auto cfg = BackboneConfig::fno1d_pk();
  TrainConfig tc;
  tc.epochs = 1;
  OperatorParams a = train_solution_operator(data.samples, cfg, 1, 128, tc, 5);
  OperatorParams b = train_solution_operator(data.samples, cfg, 1, 128, tc, 5);
  for (size_t i = 0; i < a.weights.size(); ++i)
    CHECK((a.weights[i] - b.weights[i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.meta.final_loss == b.meta.final_loss);
}

TEST_CASE("output finiteness on random inputs") {
  auto cfg = BackboneConfig::fno1d_pk();
  OperatorParams p = init_operator(cfg, 1, 128, 41);
  auto rng = make_stream(41, "finite");
  for (int i = 0; i < 1000; ++i) {
    Vec out = operator_predict(p, random_channels(rng, 128, 4));
    CHECK(out.allFinite());
  }
}

TEST_CASE("prediction path: indexed reads equal grid evaluation") {
  Dataset data = pk::generate_dataset(2, 0.25, 47);
  auto cfg = BackboneConfig::fno1d_pk();
  OperatorParams p = init_operator(cfg, 1, 128, 47);
  const auto& obs = data.samples[0];
  Vec grid_eval = operator_predict(p, obs.channels);
  // single code path: the only way to evaluate at indices is via the grid
  for (int k = 0; k < obs.num_obs(); ++k)
    CHECK(std::isfinite(grid_eval[obs.obs_indices[k]]));
}

TEST_CASE("early stopping: best-epoch weights restored, budget respected") {
  Dataset data = pk::generate_dataset(8, 0.5, 61);
  Dataset val = pk::generate_dataset(8, 0.5, 62);
  auto cfg = BackboneConfig::fno1d_pk();
  TrainConfig tc;
  tc.epochs = 12;
  tc.patience = 1;
  OperatorParams es =
      train_solution_operator(data.samples, cfg, 1, 128, tc, 7, val.samples);
  CHECK(es.meta.epochs_run >= 1);
  CHECK(es.meta.epochs_run <= tc.epochs);

  // the returned weights equal a fixed-budget run truncated at the best epoch
  TrainConfig fixed;
  fixed.epochs = es.meta.epochs_run;
  fixed.batch = tc.batch;
  OperatorParams ref = train_solution_operator(data.samples, cfg, 1, 128, fixed, 7);
  for (size_t i = 0; i < es.weights.size(); ++i)
    CHECK((es.weights[i] - ref.weights[i]).cwiseAbs().maxCoeff() == 0.0);

  // patience == 0 ignores the validation set entirely
  TrainConfig noes;
  noes.epochs = 12;
  OperatorParams a =
      train_solution_operator(data.samples, cfg, 1, 128, noes, 7, val.samples);
  OperatorParams b = train_solution_operator(data.samples, cfg, 1, 128, noes, 7);
  for (size_t i = 0; i < a.weights.size(); ++i)
    CHECK((a.weights[i] - b.weights[i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.meta.epochs_run == 12);
}

TEST_CASE("early stopping respects the min_epochs warmup floor") {
  Dataset data = pk::generate_dataset(8, 0.5, 61);
  Dataset val = pk::generate_dataset(8, 0.5, 62);
  auto cfg = BackboneConfig::fno1d_pk();
  TrainConfig tc;
  tc.epochs = 12;
  tc.patience = 1;
  tc.min_epochs = 12;
  OperatorParams es =
      train_solution_operator(data.samples, cfg, 1, 128, tc, 7, val.samples);
  // stopping cannot trigger before the floor, so the full budget runs
  CHECK(es.meta.epochs_run == 12);
}
