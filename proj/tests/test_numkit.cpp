#include <doctest.h>

#include <cmath>

#include "mmsf/grad_check.hpp"
#include "mmsf/mat.hpp"
#include "mmsf/param_store.hpp"
#include "mmsf/tape.hpp"

using namespace mmsf;
using num::Mat;
using D = Mat<double>;

namespace {

// Reduce any op output to a scalar against a fixed random target so the
// finite-difference harness can drive it.
ad::Var to_scalar(ad::Tape<double>& t, ad::Var v, uint64_t seed) {
  Rng rng(seed);
  const auto& val = t.val(v);
  return ad::mse_vs_const(t, v, num::random_normal<double>(val.rows, val.cols, 1.0, rng));
}

using Fn = std::function<ad::Var(ad::Tape<double>&, const std::vector<ad::Var>&)>;

// Runs grad_check at n random points and returns the worst relative error.
double worst_err(const Fn& fn, const std::vector<std::pair<int, int>>& shapes, int points = 10) {
  double worst = 0.0;
  for (int p = 0; p < points; ++p) {
    Rng rng(100 + uint64_t(p));
    std::vector<D> inputs;
    for (auto [r, c] : shapes) inputs.push_back(num::random_normal<double>(r, c, 1.0, rng));
    auto rep = ad::grad_check<double>(fn, inputs);
    REQUIRE(rep.analytic_finite);
    worst = std::max(worst, rep.max_rel_err);
  }
  return worst;
}

}  // namespace

TEST_SUITE("numkit") {

TEST_CASE("cosine similarity basics") {
  CHECK(num::cosine_similarity(D::row_vec({1, 0}), D::row_vec({1, 0})) == doctest::Approx(1.0));
  CHECK(num::cosine_similarity(D::row_vec({1, 0}), D::row_vec({0, 1})) == doctest::Approx(0.0));
  CHECK(num::cosine_similarity(D::row_vec({1, 2}), D::row_vec({2, 4})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(num::cosine_similarity(D::row_vec({0, 0}), D::row_vec({1, 0})),
                  DegenerateInputError);
}

TEST_CASE("cosine similarity is symmetric and scale-invariant") {
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    auto a = num::random_normal<double>(1, 16, 1.0, rng);
    auto b = num::random_normal<double>(1, 16, 1.0, rng);
    auto a2 = a;
    for (auto& v : a2.data) v *= 2.0;
    double sab = num::cosine_similarity(a, b);
    CHECK(std::fabs(sab - num::cosine_similarity(b, a)) < 1e-12);
    CHECK(std::fabs(sab - num::cosine_similarity(a2, b)) < 1e-12);
  }
}

TEST_CASE("layer_norm handles constant, two-point, and collapsed inputs") {
  auto ones = D::full(1, 4, 1.0);
  auto zeros = D::zeros(1, 4);
  auto out = num::layer_norm(D::full(1, 4, 3.7), ones, zeros, 1e-5);
  for (double v : out.data) CHECK(std::fabs(v) < 1e-9);

  auto two = num::layer_norm(D::row_vec({1, -1}), D::full(1, 2, 1.0), D::zeros(1, 2), 1e-5);
  CHECK(two(0, 0) == doctest::Approx(0.99999).epsilon(1e-5));
  CHECK(two(0, 1) == doctest::Approx(-0.99999).epsilon(1e-5));

  Rng rng(3);
  auto x = num::random_normal<double>(1, 8, 2.0, rng);
  auto beta = D::full(1, 8, 0.25);
  auto collapsed = num::layer_norm(x, D::zeros(1, 8), beta, 1e-5);
  for (double v : collapsed.data) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("layer_norm output is standardized when variance >> eps") {
  Rng rng(11);
  for (int i = 0; i < 10; ++i) {
    auto x = num::random_normal<double>(1, 64, 3.0, rng);
    auto y = num::layer_norm(x, D::full(1, 64, 1.0), D::zeros(1, 64), 1e-9);
    double mean = 0, var = 0;
    for (double v : y.data) mean += v;
    mean /= 64.0;
    for (double v : y.data) var += (v - mean) * (v - mean);
    var /= 64.0;
    CHECK(std::fabs(mean) < 1e-9);
    CHECK(std::fabs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax: symmetry, shift stability, closed form") {
  auto u = num::softmax(D::row_vec({0, 0}));
  CHECK(u(0, 0) == doctest::Approx(0.5));
  auto big = num::softmax(D::row_vec({1000, 1000}));
  CHECK(big(0, 0) == doctest::Approx(0.5));
  auto ln2 = num::softmax(D::row_vec({std::log(2.0), 0}));
  CHECK(ln2(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(ln2(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and is shift-invariant") {
  Rng rng(5);
  for (int i = 0; i < 25; ++i) {
    auto x = num::random_normal<double>(1, 12, 2.0, rng);
    auto y = num::softmax(x);
    double sum = 0;
    for (double v : y.data) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-12);
    auto xs = x;
    for (auto& v : xs.data) v += 17.25;
    auto ys = num::softmax(xs);
    for (size_t k = 0; k < y.size(); ++k) CHECK(std::fabs(y.data[k] - ys.data[k]) < 1e-9);
  }
}

TEST_CASE("grad_check sanity: f(x) = x^2 at x = 3") {
  auto rep = ad::grad_check<double>(
      [](ad::Tape<double>& t, const std::vector<ad::Var>& vars) {
        return ad::mul(t, vars[0], vars[0]);
      },
      {D::full(1, 1, 3.0)});
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("elementwise and structural ops pass grad_check") {
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::add(t, v[0], v[1]), 1);
        }, {{3, 4}, {3, 4}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::sub(t, v[0], v[1]), 2);
        }, {{3, 4}, {3, 4}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::mul(t, v[0], v[1]), 3);
        }, {{3, 4}, {3, 4}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::matmul(t, v[0], v[1]), 4);
        }, {{3, 5}, {5, 2}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::add_rowvec(t, v[0], v[1]), 5);
        }, {{4, 3}, {1, 3}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::concat_cols(t, v[0], v[1]), 6);
        }, {{3, 2}, {3, 3}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::slice_cols(t, v[0], 1, 3), 7);
        }, {{4, 6}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::row_mean(t, v[0]), 8);
        }, {{5, 4}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::scale(t, v[0], 1.7), 9);
        }, {{3, 3}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return ad::max_all(t, v[0]);
        }, {{4, 3}}) < 1e-4);
}

TEST_CASE("activations pass grad_check") {
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::relu(t, v[0]), 11);
        }, {{4, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::leaky_relu(t, v[0], 0.2), 12);
        }, {{4, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::elu(t, v[0]), 13);
        }, {{4, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::sigmoid(t, v[0]), 14);
        }, {{4, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::softplus(t, v[0]), 15);
        }, {{4, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::silu(t, v[0]), 16);
        }, {{4, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::neg_exp(t, v[0]), 17);
        }, {{4, 5}}) < 1e-4);
}

TEST_CASE("normalization and loss ops pass grad_check") {
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::layer_norm_rows(t, v[0], v[1], v[2], 1e-5), 21);
        }, {{4, 6}, {1, 6}, {1, 6}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::softmax_rows(t, v[0]), 22);
        }, {{4, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return ad::bce_with_logits(t, v[0], 1.0);
        }, {{1, 1}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return ad::softmax_xent_row(t, v[0], 2);
        }, {{1, 5}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          Rng rng(33);
          return ad::mse_vs_const(t, v[0], num::random_normal<double>(3, 4, 1.0, rng));
        }, {{3, 4}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return ad::sum_sq(t, v[0]);
        }, {{3, 4}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return ad::weighted_sum<double>(
              t, {{ad::sum_sq(t, v[0]), 0.3}, {ad::sum_sq(t, v[1]), -1.2}});
        }, {{2, 2}, {3, 1}}) < 1e-4);
}

TEST_CASE("sequence ops pass grad_check") {
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          return to_scalar(t, ad::causal_conv1d(t, v[0], v[1], v[2]), 31);
        }, {{6, 3}, {4, 3}, {1, 3}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          // u, dt (softplus to stay positive), B, C, A (neg_exp), D
          ad::Var dt = ad::softplus(t, v[1]);
          ad::Var a = ad::neg_exp(t, v[4]);
          return to_scalar(t, ad::ssm_scan(t, v[0], dt, v[2], v[3], a, v[5]), 32);
        }, {{5, 3}, {5, 3}, {5, 2}, {5, 2}, {3, 2}, {1, 3}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          ad::Var scores = ad::sigmoid(t, ad::matmul(t, v[0], v[1]));
          return to_scalar(t, ad::gather_scale_rows(t, v[0], scores, {0, 2, 3}), 34);
        }, {{5, 3}, {3, 1}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          auto mask = std::make_shared<std::vector<uint8_t>>(12, 1);
          (*mask)[3] = 0;
          (*mask)[7] = 0;
          return to_scalar(t, ad::dropout_mask(t, v[0], mask, 0.8), 35);
        }, {{3, 4}}) < 1e-4);
  CHECK(worst_err([](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          std::vector<ad::Var> parts;
          for (int i = 0; i < 4; ++i) parts.push_back(ad::sum_sq(t, ad::slice_cols(t, v[0], i, 1)));
          return to_scalar(t, ad::stack_scalars(t, parts), 36);
        }, {{2, 4}}) < 1e-4);
}

TEST_CASE("parameter store enforces unique names and shapes") {
  num::ParameterStore<double> store;
  store.add("w", D::zeros(2, 3));
  CHECK_THROWS_AS(store.add("w", D::zeros(2, 3)), Error);
  CHECK(store.at("w").grad.rows == 2);
  CHECK(store.at("w").grad.cols == 3);
  CHECK(store.scalar_count() == 6);
  store.at("w").grad(1, 1) = 5.0;
  store.zero_grads();
  CHECK(store.at("w").grad(1, 1) == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
  ad::Tape<double> t;
  ad::Var x = t.leaf(D::zeros(2, 2));
  CHECK_THROWS_AS(t.backward(x), ShapeError);
}

}  // TEST_SUITE
