#include <doctest.h>

#include <cmath>

#include "mmsf/fusion.hpp"
#include "mmsf/grad_check.hpp"

using namespace mmsf;
using namespace mmsf::fusion;
using D = num::Mat<double>;

namespace {

struct LeafFfm {
  FfmVars<double> vars;
};

FfmVars<double> leaf_ffm(ad::Tape<double>& t, int d, int r, Rng& rng, bool bias = true) {
  FfmVars<double> v;
  v.has_bias = bias;
  int bneck = std::max(1, d / r);
  v.w_down = t.leaf(num::random_normal<double>(d, bneck, 0.5, rng));
  v.w_up = t.leaf(num::random_normal<double>(bneck, d, 0.5, rng));
  if (bias) {
    v.b_down = t.leaf(num::random_normal<double>(1, bneck, 0.2, rng));
    v.b_up = t.leaf(num::random_normal<double>(1, d, 0.2, rng));
  }
  v.w_lin = t.leaf(num::random_normal<double>(1, d, 0.4, rng));
  v.b_lin = t.leaf(num::random_normal<double>(1, d, 0.2, rng));
  v.gamma = t.leaf(num::random_normal<double>(1, d, 0.3, rng));
  v.beta = t.leaf(num::random_normal<double>(1, d, 0.3, rng));
  return v;
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("fusion_mode parses tokens and rejects unknowns") {
  CHECK(fusion_mode("none") == FusionMode::None);
  CHECK(fusion_mode("linear") == FusionMode::Linear);
  CHECK(fusion_mode("se") == FusionMode::Se);
  CHECK_THROWS_AS(fusion_mode("cross"), ConfigError);
}

TEST_CASE("mode none is exact concatenation, bit for bit") {
  ad::Tape<double> t;
  Rng rng(3);
  auto f1m = num::random_normal<double>(4, 3, 1.0, rng);
  auto f2m = num::random_normal<double>(4, 2, 1.0, rng);
  FusionConfig cfg;
  cfg.mode = FusionMode::None;
  FfmVars<double> vars;  // unused in this mode
  ad::Var out = ffm(t, t.leaf(f1m), t.leaf(f2m), cfg, vars);
  CHECK(t.val(out).cols == 5);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(t.val(out)(i, j) == f1m(i, j));
    for (int j = 0; j < 2; ++j) CHECK(t.val(out)(i, 3 + j) == f2m(i, j));
  }
}

TEST_CASE("linear mode with identity affine reduces to layer_norm(concat)") {
  ad::Tape<double> t;
  Rng rng(5);
  auto f1m = num::random_normal<double>(2, 3, 1.0, rng);
  auto f2m = num::random_normal<double>(2, 3, 1.0, rng);
  FusionConfig cfg;
  cfg.mode = FusionMode::Linear;
  FfmVars<double> vars;
  vars.w_lin = t.leaf(D::full(1, 6, 1.0));  // identity channel weights
  vars.b_lin = t.leaf(D::zeros(1, 6));
  vars.gamma = t.leaf(D::full(1, 6, 1.0));
  vars.beta = t.leaf(D::zeros(1, 6));
  ad::Var out = ffm(t, t.leaf(f1m), t.leaf(f2m), cfg, vars);

  ad::Var cc = ad::concat_cols(t, t.leaf(f1m), t.leaf(f2m));
  ad::Var want = ad::layer_norm_rows(t, cc, t.leaf(D::full(1, 6, 1.0)),
                                     t.leaf(D::zeros(1, 6)), 1e-5);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK(t.val(out)(i, j) == doctest::Approx(t.val(want)(i, j)).epsilon(1e-12));
}

TEST_CASE("se gates forced to 1 reduce to layer_norm(concat)") {
  ad::Tape<double> t;
  Rng rng(7);
  auto f1m = num::random_normal<double>(3, 4, 1.0, rng);
  auto f2m = num::random_normal<double>(3, 2, 1.0, rng);
  FusionConfig cfg;  // se
  cfg.reduction = 2;
  FfmVars<double> vars;
  vars.w_down = t.leaf(D::zeros(6, 3));
  vars.b_down = t.leaf(D::zeros(1, 3));
  vars.w_up = t.leaf(D::zeros(3, 6));
  vars.b_up = t.leaf(D::full(1, 6, 40.0));  // sigmoid(40) = 1 to double precision
  vars.gamma = t.leaf(D::full(1, 6, 1.0));
  vars.beta = t.leaf(D::zeros(1, 6));
  ad::Var out = ffm(t, t.leaf(f1m), t.leaf(f2m), cfg, vars);
  ad::Var cc = ad::concat_cols(t, t.leaf(f1m), t.leaf(f2m));
  ad::Var want = ad::layer_norm_rows(t, cc, t.leaf(D::full(1, 6, 1.0)),
                                     t.leaf(D::zeros(1, 6)), 1e-5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j)
      CHECK(std::fabs(t.val(out)(i, j) - t.val(want)(i, j)) < 1e-12);
}

TEST_CASE("se path matches a step-by-step hand evaluation (d1=8, d2=4)") {
  ad::Tape<double> t;
  Rng rng(11);
  auto f1m = num::random_normal<double>(1, 8, 1.0, rng);
  auto f2m = num::random_normal<double>(1, 4, 1.0, rng);
  FusionConfig cfg;
  cfg.reduction = 4;  // bottleneck 3
  auto vars = leaf_ffm(t, 12, 4, rng);
  ad::Var out = ffm(t, t.leaf(f1m), t.leaf(f2m), cfg, vars);

  // hand: concat -> bottleneck relu -> up -> sigmoid -> gate -> layer_norm
  D x(1, 12);
  for (int j = 0; j < 8; ++j) x(0, j) = f1m(0, j);
  for (int j = 0; j < 4; ++j) x(0, 8 + j) = f2m(0, j);
  D z = num::matmul(x, t.val(vars.w_down));
  for (int j = 0; j < 3; ++j) z(0, j) = std::max(0.0, z(0, j) + t.val(vars.b_down)(0, j));
  D u = num::matmul(z, t.val(vars.w_up));
  D gated(1, 12);
  for (int j = 0; j < 12; ++j) {
    double g = 1.0 / (1.0 + std::exp(-(u(0, j) + t.val(vars.b_up)(0, j))));
    CHECK(g > 0.0);
    CHECK(g < 1.0);
    gated(0, j) = x(0, j) * g;
  }
  D want = num::layer_norm(gated, t.val(vars.gamma), t.val(vars.beta), 1e-5);
  for (int j = 0; j < 12; ++j)
    CHECK(t.val(out)(0, j) == doctest::Approx(want(0, j)).epsilon(1e-12));
}

TEST_CASE("row i of the output depends only on rows i of the inputs") {
  ad::Tape<double> t;
  Rng rng(13);
  auto vars = leaf_ffm(t, 6, 2, rng);
  FusionConfig cfg;
  cfg.reduction = 2;
  auto f1a = num::random_normal<double>(3, 4, 1.0, rng);
  auto f2a = num::random_normal<double>(3, 2, 1.0, rng);
  ad::Var outa = ffm(t, t.leaf(f1a), t.leaf(f2a), cfg, vars);
  // change rows 0 and 2; row 1 must be unchanged
  auto f1b = f1a;
  auto f2b = f2a;
  Rng rng2(14);
  for (int j = 0; j < 4; ++j) {
    f1b(0, j) = rng2.normal();
    f1b(2, j) = rng2.normal();
  }
  for (int j = 0; j < 2; ++j) f2b(2, j) = rng2.normal();
  ad::Var outb = ffm(t, t.leaf(f1b), t.leaf(f2b), cfg, vars);
  for (int j = 0; j < 6; ++j)
    CHECK(t.val(outa)(1, j) == doctest::Approx(t.val(outb)(1, j)));
}

TEST_CASE("ffm weights pass grad_check end to end") {
  FusionConfig cfg;
  cfg.reduction = 2;
  double worst = 0;
  for (int p = 0; p < 10; ++p) {
    Rng rng(700 + uint64_t(p));
    // f1 (2x3), f2 (2x2), w_down (5x2), b_down, w_up (2x5), b_up, gamma, beta
    std::vector<D> inputs = {num::random_normal<double>(2, 3, 1.0, rng),
                             num::random_normal<double>(2, 2, 1.0, rng),
                             num::random_normal<double>(5, 2, 0.5, rng),
                             num::random_normal<double>(1, 2, 0.2, rng),
                             num::random_normal<double>(2, 5, 0.5, rng),
                             num::random_normal<double>(1, 5, 0.2, rng),
                             num::random_normal<double>(1, 5, 0.4, rng),
                             num::random_normal<double>(1, 5, 0.4, rng)};
    auto rep = ad::grad_check<double>(
        [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          FfmVars<double> vars;
          vars.w_down = v[2];
          vars.b_down = v[3];
          vars.w_up = v[4];
          vars.b_up = v[5];
          vars.gamma = v[6];
          vars.beta = v[7];
          ad::Var out = ffm(t, v[0], v[1], cfg, vars);
          Rng r2(3);
          return ad::mse_vs_const(t, out, num::random_normal<double>(2, 5, 1.0, r2));
        },
        inputs);
    REQUIRE(rep.analytic_finite);
    worst = std::max(worst, rep.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

}  // TEST_SUITE
