#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsf/grad_check.hpp"
#include "mmsf/mil.hpp"

using namespace mmsf;
using namespace mmsf::mil;
using D = num::Mat<double>;

namespace {

// Naive reference recurrence, written independently of the scan op.
D naive_scan(const D& u, const D& dt, const D& b, const D& c, const D& a, const D& dsk) {
  int n = u.rows, di = u.cols, ds = a.cols;
  D y(n, di);
  std::vector<double> h(size_t(di) * size_t(ds), 0.0);
  for (int t = 0; t < n; ++t)
    for (int ch = 0; ch < di; ++ch) {
      double acc = 0;
      for (int s = 0; s < ds; ++s) {
        double abar = std::exp(dt(t, ch) * a(ch, s));
        double& hs = h[size_t(ch) * size_t(ds) + size_t(s)];
        hs = abar * hs + dt(t, ch) * b(t, s) * u(t, ch);
        acc += c(t, s) * hs;
      }
      y(t, ch) = acc + dsk(0, ch) * u(t, ch);
    }
  return y;
}

MambaBlockVars<double> leaf_block(ad::Tape<double>& t, int d, const SsmBlockConfig& cfg,
                                  Rng& rng) {
  int di = d * cfg.expand, ds = cfg.state_dim;
  MambaBlockVars<double> w;
  w.ln_gamma = t.leaf(D::full(1, d, 1.0));
  w.ln_beta = t.leaf(D::zeros(1, d));
  w.w_in = t.leaf(num::random_normal<double>(d, 3 * di + 2 * ds, 0.3, rng));
  w.b_in = t.leaf(num::random_normal<double>(1, 3 * di + 2 * ds, 0.1, rng));
  w.conv_k = t.leaf(num::random_normal<double>(cfg.conv_width, di, 0.3, rng));
  w.conv_b = t.leaf(num::random_normal<double>(1, di, 0.1, rng));
  {
    D alog(di, ds);
    for (int ch = 0; ch < di; ++ch)
      for (int s = 0; s < ds; ++s) alog(ch, s) = std::log(double(s + 1));
    w.a_log = t.leaf(std::move(alog));
  }
  w.dt_bias = t.leaf(D::full(1, di, std::log(std::expm1(0.05))));
  w.d_skip = t.leaf(D::full(1, di, 1.0));
  w.w_out = t.leaf(num::random_normal<double>(di, d, 0.3, rng));
  w.b_out = t.leaf(num::random_normal<double>(1, d, 0.1, rng));
  return w;
}

}  // namespace

TEST_SUITE("mil") {

TEST_CASE("aps: under-full bag selects everything") {
  ad::Tape<double> t;
  Rng rng(2);
  ad::Var f = t.leaf(num::random_normal<double>(3, 4, 1.0, rng));
  ad::Var w = t.leaf(num::random_normal<double>(4, 1, 0.5, rng));
  ad::Var b = t.leaf(D::zeros(1, 1));
  auto out = aps(t, f, 512, w, b);
  CHECK(out.indices_by_score.size() == 3);
  CHECK(out.raster_indices == std::vector<int>{0, 1, 2});
  CHECK(t.val(out.selected).rows == 3);
  for (double s : t.val(out.scores).data) {
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("aps: planted scores (0.9, 0.1, 0.8) with lambda 2 pick indices 0, 2") {
  ad::Tape<double> t;
  // d = 1 features equal to the logit of the wanted scores, w = 1, b = 0
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  ad::Var f = t.leaf(D::col_vec({logit(0.9), logit(0.1), logit(0.8)}));
  ad::Var w = t.leaf(D::full(1, 1, 1.0));
  ad::Var b = t.leaf(D::zeros(1, 1));
  auto out = aps(t, f, 2, w, b);
  CHECK(out.indices_by_score == std::vector<int>{0, 2});
  CHECK(out.raster_indices == std::vector<int>{0, 2});
  CHECK(t.val(out.scores)(0, 0) == doctest::Approx(0.9));
  CHECK(t.val(out.scores)(1, 0) == doctest::Approx(0.1));
  // selected rows are scaled by their scores, in raster order
  CHECK(t.val(out.selected)(0, 0) == doctest::Approx(logit(0.9) * 0.9));
  CHECK(t.val(out.selected)(1, 0) == doctest::Approx(logit(0.8) * 0.8));
}

TEST_CASE("aps: all-equal scores break ties by ascending index") {
  ad::Tape<double> t;
  ad::Var f = t.leaf(D::full(4, 2, 0.5));
  ad::Var w = t.leaf(D::zeros(2, 1));
  ad::Var b = t.leaf(D::zeros(1, 1));
  auto out = aps(t, f, 2, w, b);
  CHECK(out.indices_by_score == std::vector<int>{0, 1});
}

TEST_CASE("aps equals a full-sort oracle on random inputs up to N = 10^4") {
  for (int n : {17, 257, 10000}) {
    ad::Tape<double> t;
    Rng rng(900 + uint64_t(n));
    ad::Var f = t.leaf(num::random_normal<double>(n, 3, 1.0, rng));
    ad::Var w = t.leaf(num::random_normal<double>(3, 1, 0.7, rng));
    ad::Var b = t.leaf(D::full(1, 1, 0.1));
    int lambda = std::min(n, 512);
    auto out = aps(t, f, lambda, w, b);

    const auto& s = t.val(out.scores);
    std::vector<int> oracle(static_cast<size_t>(n), 0);
    std::iota(oracle.begin(), oracle.end(), 0);
    std::stable_sort(oracle.begin(), oracle.end(), [&](int a2, int b2) {
      if (s(a2, 0) != s(b2, 0)) return s(a2, 0) > s(b2, 0);
      return a2 < b2;
    });
    oracle.resize(size_t(lambda));
    CHECK(out.indices_by_score == oracle);
  }
}

TEST_CASE("ssm_scan: zero transition is memoryless") {
  ad::Tape<double> t;
  Rng rng(8);
  int n = 6, di = 3, ds = 2;
  auto u = num::random_normal<double>(n, di, 1.0, rng);
  auto dt = D::full(n, di, 1.0);
  auto b = D::full(n, ds, 1.0);
  auto c = D::full(n, ds, 0.5);
  auto a = D::full(di, ds, -1e4);  // abar = exp(-1e4) = 0
  auto dsk = D::zeros(1, di);
  ad::Var y = ssm_scan(t, t.leaf(u), t.leaf(dt), t.leaf(b), t.leaf(c), t.leaf(a),
                       t.leaf(dsk));
  // y[t,c] = sum_s c * (dt * b * u) = 2 * 0.5 * u = u
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < di; ++ch)
      CHECK(t.val(y)(i, ch) == doctest::Approx(u(i, ch)).epsilon(1e-12));
}

TEST_CASE("ssm_scan scalar hand case: decay 1/2 gives y = 1, 0.5, 0.25") {
  ad::Tape<double> t;
  auto u = D::col_vec({1, 0, 0});
  auto dt = D::full(3, 1, 1.0);
  auto b = D::full(3, 1, 1.0);
  auto c = D::full(3, 1, 1.0);
  auto a = D::full(1, 1, std::log(0.5));  // abar = 0.5
  auto dsk = D::zeros(1, 1);
  ad::Var y = ssm_scan(t, t.leaf(u), t.leaf(dt), t.leaf(b), t.leaf(c), t.leaf(a),
                       t.leaf(dsk));
  CHECK(t.val(y)(0, 0) == doctest::Approx(1.0));
  CHECK(t.val(y)(1, 0) == doctest::Approx(0.5));
  CHECK(t.val(y)(2, 0) == doctest::Approx(0.25));
}

TEST_CASE("ssm_scan equals the naive recurrence (64-bit, T up to 512)") {
  for (uint64_t seed = 0; seed < 6; ++seed) {
    Rng rng(1000 + seed);
    int n = 1 + int(rng.below(512));
    int di = 1 + int(rng.below(6));
    int ds = 1 + int(rng.below(4));
    auto u = num::random_normal<double>(n, di, 1.0, rng);
    auto dt = num::random_uniform<double>(n, di, 0.01, 0.5, rng);
    auto b = num::random_normal<double>(n, ds, 1.0, rng);
    auto c = num::random_normal<double>(n, ds, 1.0, rng);
    auto a = num::random_uniform<double>(di, ds, -2.0, -0.05, rng);
    auto dsk = num::random_normal<double>(1, di, 1.0, rng);
    ad::Tape<double> t;
    ad::Var y = ssm_scan(t, t.leaf(u), t.leaf(dt), t.leaf(b), t.leaf(c), t.leaf(a),
                         t.leaf(dsk));
    D want = naive_scan(u, dt, b, c, a, dsk);
    double worst = 0;
    for (size_t i = 0; i < want.size(); ++i)
      worst = std::max(worst, std::fabs(t.val(y).data[i] - want.data[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("ssm_scan in float stays within 1e-6 of the double naive recurrence") {
  for (uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(2000 + seed);
    int n = 64;
    int di = 4, ds = 3;
    auto u = num::random_normal<double>(n, di, 1.0, rng);
    auto dt = num::random_uniform<double>(n, di, 0.01, 0.5, rng);
    auto b = num::random_normal<double>(n, ds, 1.0, rng);
    auto c = num::random_normal<double>(n, ds, 1.0, rng);
    auto a = num::random_uniform<double>(di, ds, -2.0, -0.05, rng);
    auto dsk = num::random_normal<double>(1, di, 1.0, rng);
    ad::Tape<float> t;
    ad::Var y = ssm_scan(t, t.leaf(u.cast<float>()), t.leaf(dt.cast<float>()),
                         t.leaf(b.cast<float>()), t.leaf(c.cast<float>()),
                         t.leaf(a.cast<float>()), t.leaf(dsk.cast<float>()));
    D want = naive_scan(u, dt, b, c, a, dsk);
    double worst = 0;
    for (size_t i = 0; i < want.size(); ++i)
      worst = std::max(worst, std::fabs(double(t.val(y).data[i]) - want.data[i]));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("mamba block: zero output projection is the identity (residual)") {
  SsmBlockConfig cfg;
  cfg.depth = 1;
  cfg.state_dim = 2;
  cfg.conv_width = 2;
  cfg.expand = 2;
  ad::Tape<double> t;
  Rng rng(17);
  auto w = leaf_block(t, 3, cfg, rng);
  w.w_out = t.leaf(D::zeros(6, 3));
  w.b_out = t.leaf(D::zeros(1, 3));
  auto x = num::random_normal<double>(5, 3, 1.0, rng);
  ad::Var y = mamba_block(t, t.leaf(x), cfg, w);
  for (size_t i = 0; i < x.size(); ++i) CHECK(t.val(y).data[i] == x.data[i]);
}

TEST_CASE("mamba block preserves shape; single-token case matches staged evaluation") {
  SsmBlockConfig cfg;
  cfg.state_dim = 2;
  cfg.conv_width = 3;
  cfg.expand = 2;
  ad::Tape<double> t;
  Rng rng(19);
  int d = 2, di = 4;
  auto w = leaf_block(t, d, cfg, rng);
  auto x = num::random_normal<double>(1, d, 1.0, rng);
  ad::Var y = mamba_block(t, t.leaf(x), cfg, w);
  CHECK(t.val(y).rows == 1);
  CHECK(t.val(y).cols == d);

  // staged hand composition for T = 1
  D xn = num::layer_norm(x, t.val(w.ln_gamma), t.val(w.ln_beta), 1e-5);
  D proj = num::matmul(xn, t.val(w.w_in));
  for (int j = 0; j < proj.cols; ++j) proj(0, j) += t.val(w.b_in)(0, j);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  D xs(1, di), z(1, di), dtr(1, di), bsel(1, 2), csel(1, 2);
  for (int j = 0; j < di; ++j) xs(0, j) = proj(0, j);
  for (int j = 0; j < di; ++j) z(0, j) = proj(0, di + j);
  for (int j = 0; j < di; ++j) dtr(0, j) = proj(0, 2 * di + j);
  for (int j = 0; j < 2; ++j) bsel(0, j) = proj(0, 3 * di + j);
  for (int j = 0; j < 2; ++j) csel(0, j) = proj(0, 3 * di + 2 + j);
  // causal conv at t=0 uses only tap 0
  for (int j = 0; j < di; ++j) {
    double v = t.val(w.conv_k)(0, j) * xs(0, j) + t.val(w.conv_b)(0, j);
    xs(0, j) = v * sig(v);  // silu
  }
  D yhand(1, di);
  for (int ch = 0; ch < di; ++ch) {
    double dtv = std::log1p(std::exp(dtr(0, ch) + t.val(w.dt_bias)(0, ch)));
    double acc = 0;
    for (int s = 0; s < 2; ++s) {
      double h = dtv * bsel(0, s) * xs(0, ch);  // h_0 (no history)
      acc += csel(0, s) * h;
    }
    double g = z(0, ch) * sig(z(0, ch));
    yhand(0, ch) = (acc + t.val(w.d_skip)(0, ch) * xs(0, ch)) * g;
  }
  D want = num::matmul(yhand, t.val(w.w_out));
  for (int j = 0; j < d; ++j) want(0, j) += t.val(w.b_out)(0, j) + x(0, j);
  for (int j = 0; j < d; ++j)
    CHECK(t.val(y)(0, j) == doctest::Approx(want(0, j)).epsilon(1e-10));
}

TEST_CASE("mil_encode: depth 0 passthrough, single row, mean-pooling oracle") {
  SsmBlockConfig cfg;
  cfg.depth = 0;
  ad::Tape<double> t;
  Rng rng(23);
  MilVars<double> vars;
  vars.inst_w = t.leaf(num::random_normal<double>(4, 2, 0.5, rng));
  vars.inst_b = t.leaf(num::random_normal<double>(1, 2, 0.2, rng));
  auto f = num::random_normal<double>(8, 4, 1.0, rng);
  auto out = mil_encode(t, t.leaf(f), cfg, vars);
  // depth 0: refined = input
  for (size_t i = 0; i < f.size(); ++i) CHECK(t.val(out.refined).data[i] == f.data[i]);
  CHECK(t.val(out.inst_logits).rows == 8);
  CHECK(t.val(out.inst_logits).cols == 2);
  // z_bag equals an independently computed column mean
  for (int c = 0; c < 4; ++c) {
    double mean = 0;
    for (int i = 0; i < 8; ++i) mean += f(i, c);
    CHECK(t.val(out.z_bag)(0, c) == doctest::Approx(mean / 8.0).epsilon(1e-12));
  }

  // single-row bag: z_bag equals the refined row even with blocks
  SsmBlockConfig cfg1;
  cfg1.depth = 2;
  cfg1.state_dim = 2;
  cfg1.conv_width = 2;
  cfg1.expand = 2;
  MilVars<double> v1;
  for (int b = 0; b < 2; ++b) v1.blocks.push_back(leaf_block(t, 4, cfg1, rng));
  v1.inst_w = vars.inst_w;
  v1.inst_b = vars.inst_b;
  auto one = num::random_normal<double>(1, 4, 1.0, rng);
  auto o1 = mil_encode(t, t.leaf(one), cfg1, v1);
  for (int c = 0; c < 4; ++c)
    CHECK(t.val(o1.z_bag)(0, c) == doctest::Approx(t.val(o1.refined)(0, c)));
}

TEST_CASE("mil_encode is deterministic for fixed weights and inputs") {
  SsmBlockConfig cfg;
  cfg.depth = 2;
  cfg.state_dim = 3;
  cfg.conv_width = 2;
  cfg.expand = 2;
  auto run = [&]() {
    ad::Tape<double> t;
    Rng rng(31);
    MilVars<double> vars;
    for (int b = 0; b < 2; ++b) vars.blocks.push_back(leaf_block(t, 3, cfg, rng));
    vars.inst_w = t.leaf(num::random_normal<double>(3, 2, 0.5, rng));
    vars.inst_b = t.leaf(D::zeros(1, 2));
    auto f = num::random_normal<double>(6, 3, 1.0, rng);
    auto out = mil_encode(t, t.leaf(f), cfg, vars);
    return t.val(out.z_bag);
  };
  auto a = run();
  auto b = run();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("full mil path passes grad_check on a small bag") {
  SsmBlockConfig cfg;
  cfg.depth = 1;
  cfg.state_dim = 2;
  cfg.conv_width = 2;
  cfg.expand = 2;
  int d = 3, di = 6, n = 5;
  double worst = 0;
  for (int p = 0; p < 10; ++p) {
    Rng rng(3100 + uint64_t(p));
    std::vector<D> inputs = {
        num::random_normal<double>(n, d, 1.0, rng),          // features
        num::random_normal<double>(d, 1, 0.5, rng),          // aps w
        num::random_normal<double>(1, 1, 0.2, rng),          // aps b
        D::full(1, d, 1.0),                                  // ln gamma
        D::zeros(1, d),                                      // ln beta
        num::random_normal<double>(d, 3 * di + 4, 0.3, rng), // w_in
        num::random_normal<double>(1, 3 * di + 4, 0.1, rng), // b_in
        num::random_normal<double>(2, di, 0.3, rng),         // conv_k
        num::random_normal<double>(1, di, 0.1, rng),         // conv_b
        num::random_uniform<double>(di, 2, -1.0, -0.1, rng), // a_log pre neg_exp... raw
        D::full(1, di, std::log(std::expm1(0.05))),          // dt_bias
        D::full(1, di, 1.0),                                 // d_skip
        num::random_normal<double>(di, d, 0.3, rng),         // w_out
        num::random_normal<double>(1, d, 0.1, rng),          // b_out
        num::random_normal<double>(d, 2, 0.5, rng),          // inst_w
        num::random_normal<double>(1, 2, 0.2, rng),          // inst_b
    };
    auto rep = ad::grad_check<double>(
        [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          auto sel = aps(t, v[0], 4, v[1], v[2]);
          MilVars<double> vars;
          MambaBlockVars<double> w;
          w.ln_gamma = v[3];
          w.ln_beta = v[4];
          w.w_in = v[5];
          w.b_in = v[6];
          w.conv_k = v[7];
          w.conv_b = v[8];
          w.a_log = v[9];
          w.dt_bias = v[10];
          w.d_skip = v[11];
          w.w_out = v[12];
          w.b_out = v[13];
          vars.blocks.push_back(w);
          vars.inst_w = v[14];
          vars.inst_b = v[15];
          auto out = mil_encode(t, sel.selected, cfg, vars);
          Rng r2(6);
          ad::Var t1 = ad::mse_vs_const(t, out.z_bag, num::random_normal<double>(1, d, 1.0, r2));
          ad::Var t2 = ad::mse_vs_const(t, out.inst_logits,
                                        num::random_normal<double>(4, 2, 1.0, r2));
          return ad::weighted_sum<double>(t, {{t1, 1.0}, {t2, 0.5}});
        },
        inputs);
    REQUIRE(rep.analytic_finite);
    worst = std::max(worst, rep.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("probe_complexity validates inputs and reports monotone sizes") {
  CHECK_THROWS_AS(probe_complexity({4096, 8192}, 8, SsmBlockConfig{}, 1), ConfigError);
  CHECK_THROWS_AS(probe_complexity({512, 4096, 8192}, 8, SsmBlockConfig{}, 1), ConfigError);
  SsmBlockConfig cfg;
  cfg.depth = 1;
  cfg.state_dim = 4;
  auto rep = probe_complexity({2048, 1024, 4096}, 8, cfg, 7, 1);
  REQUIRE(rep.points.size() == 3);
  CHECK(rep.points[0].n == 1024);
  CHECK(rep.points[1].n == 2048);
  CHECK(rep.points[2].n == 4096);
  for (const auto& pt : rep.points) CHECK(pt.seconds > 0.0);
  CHECK(rep.doubling_ratios.size() == 2);
}

}  // TEST_SUITE
