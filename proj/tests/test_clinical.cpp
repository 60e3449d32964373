#include <doctest.h>

#include <cmath>

#include "mmsf/clinical.hpp"
#include "mmsf/grad_check.hpp"
#include "mmsf/io.hpp"

using namespace mmsf;
using namespace mmsf::clinical;
using D = num::Mat<double>;

namespace {

CdeFieldVars<double> leaf_field(ad::Tape<double>& t, int d_in, int h, Rng& rng) {
  CdeFieldVars<double> w;
  w.w1 = t.leaf(num::random_normal<double>(d_in, h, 0.5, rng));
  w.b1 = t.leaf(num::random_normal<double>(1, h, 0.2, rng));
  w.w2 = t.leaf(num::random_normal<double>(h, h, 0.5, rng));
  w.b2 = t.leaf(num::random_normal<double>(1, h, 0.2, rng));
  w.w3 = t.leaf(num::random_normal<double>(h, h, 0.5, rng));
  w.b3 = t.leaf(num::random_normal<double>(1, h, 0.2, rng));
  w.w4 = t.leaf(num::random_normal<double>(h, d_in, 0.5, rng));
  w.b4 = t.leaf(num::random_normal<double>(1, d_in, 0.2, rng));
  return w;
}

}  // namespace

TEST_SUITE("clinical") {

TEST_CASE("fit_schema: mean and population std of [40,50,60]") {
  std::vector<FieldSpec> specs = {{"age", FieldKind::Numeric}};
  std::vector<std::vector<std::string>> rows = {{"40"}, {"50"}, {"60"}};
  auto schema = fit_schema(rows, specs);
  CHECK(schema.fields[0].mean == doctest::Approx(50.0));
  CHECK(schema.fields[0].stddev == doctest::Approx(std::sqrt(200.0 / 3.0)));  // ~8.165
  CHECK(schema.fields[0].encoded_dim() == 1);
  CHECK(!schema.fields[0].has_presence_flag);
}

TEST_CASE("fit_schema: two-category field has dim 2; degenerate cases error") {
  std::vector<FieldSpec> sex = {{"sex", FieldKind::Categorical}};
  auto schema = fit_schema({{"M"}, {"F"}, {"M"}}, sex);
  CHECK(schema.fields[0].encoded_dim() == 2);
  CHECK(!schema.fields[0].has_unknown);

  std::vector<FieldSpec> age = {{"age", FieldKind::Numeric}};
  CHECK_THROWS_AS(fit_schema({{"50"}}, age), DataError);              // one value
  CHECK_THROWS_AS(fit_schema({{"50"}, {"50"}}, age), DataError);      // constant
  std::vector<FieldSpec> onecat = {{"x", FieldKind::Categorical}};
  CHECK_THROWS_AS(fit_schema({{"a"}, {"a"}}, onecat), DataError);     // single category
}

TEST_CASE("z-scored training column has mean 0 and unit std") {
  std::vector<FieldSpec> specs = {{"v", FieldKind::Numeric}};
  std::vector<std::vector<std::string>> rows;
  Rng rng(4);
  for (int i = 0; i < 200; ++i)
    rows.push_back({io::format_double(rng.normal(10.0, 3.0))});
  auto schema = fit_schema(rows, specs);
  double mean = 0, var = 0;
  std::vector<double> z;
  for (const auto& r : rows) {
    auto rec = encode_record(schema, r);
    z.push_back(rec.values[0](0, 0));
    mean += z.back();
  }
  mean /= double(z.size());
  for (double v : z) var += (v - mean) * (v - mean);
  var /= double(z.size());
  CHECK(std::fabs(mean) < 1e-9);
  CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-9);
}

TEST_CASE("missing values: presence flags and unknown buckets") {
  std::vector<FieldSpec> specs = {{"age", FieldKind::Numeric},
                                  {"stage", FieldKind::Categorical}};
  std::vector<std::vector<std::string>> rows = {
      {"40", "I"}, {"", "II"}, {"60", ""}, {"55", "I"}};
  auto schema = fit_schema(rows, specs);
  CHECK(schema.fields[0].has_presence_flag);
  CHECK(schema.fields[1].has_unknown);
  CHECK(schema.fields[1].encoded_dim() == 3);  // I, II, unknown
  CHECK(schema.effective_count() == 3);        // age, stage, age-presence

  auto rec = encode_record(schema, {"", "III"});
  CHECK(rec.values[0](0, 0) == 0.0);            // imputed to train mean
  CHECK(rec.values[1](0, 2) == 1.0);            // unseen category -> unknown slot
  CHECK(rec.values[2](0, 0) == 0.0);            // presence flag says missing
  CHECK(rec.hot_index[1] == 2);

  // without gaps in training and no reservation, unseen categories are errors
  auto strict = fit_schema({{"40", "I"}, {"50", "II"}}, specs);
  CHECK_THROWS_AS(encode_record(strict, {"45", "IV"}), SchemaError);
  // reserve_unknown forces the buckets up front
  auto reserved = fit_schema({{"40", "I"}, {"50", "II"}}, specs, true);
  CHECK(reserved.fields[1].encoded_dim() == 3);
  CHECK_NOTHROW(encode_record(reserved, {"45", "IV"}));
}

TEST_CASE("encode_field: zero weights and 1-d passthrough") {
  ad::Tape<double> t;
  CdeFieldVars<double> zero;
  zero.w1 = t.leaf(D::zeros(1, 4));
  zero.b1 = t.leaf(D::zeros(1, 4));
  zero.w2 = t.leaf(D::zeros(4, 4));
  zero.b2 = t.leaf(D::zeros(1, 4));
  ad::Var c = t.leaf(D::full(1, 1, 3.0));
  ad::Var h = encode_field(t, c, zero);
  for (int j = 0; j < 4; ++j) CHECK(t.val(h)(0, j) == 0.0);

  CdeFieldVars<double> ident;
  ident.w1 = t.leaf(D::full(1, 1, 1.0));
  ident.b1 = t.leaf(D::zeros(1, 1));
  ident.w2 = t.leaf(D::full(1, 1, 1.0));
  ident.b2 = t.leaf(D::zeros(1, 1));
  ad::Var two = t.leaf(D::full(1, 1, 2.0));
  CHECK(t.val(encode_field(t, two, ident))(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("encode_field matches an independent evaluation on a 64-dim case") {
  ad::Tape<double> t;
  Rng rng(31);
  int d = 64, h = 16;
  auto w = leaf_field(t, d, h, rng);
  auto cvec = num::random_normal<double>(1, d, 1.0, rng);
  ad::Var c = t.leaf(cvec);
  ad::Var out = encode_field(t, c, w);

  // direct re-evaluation: h = ReLU(c W1 + b1) W2 + b2
  D hidden = num::matmul(cvec, t.val(w.w1));
  for (int j = 0; j < h; ++j) {
    hidden(0, j) += t.val(w.b1)(0, j);
    hidden(0, j) = std::max(0.0, hidden(0, j));
  }
  D want = num::matmul(hidden, t.val(w.w2));
  for (int j = 0; j < h; ++j) want(0, j) += t.val(w.b2)(0, j);
  for (int j = 0; j < h; ++j)
    CHECK(t.val(out)(0, j) == doctest::Approx(want(0, j)).epsilon(1e-12));
}

TEST_CASE("decode_field: zero weights give b4; scalar chain; output dim") {
  ad::Tape<double> t;
  CdeFieldVars<double> w;
  w.w3 = t.leaf(D::zeros(3, 3));
  w.b3 = t.leaf(D::zeros(1, 3));
  w.w4 = t.leaf(D::zeros(3, 5));
  w.b4 = t.leaf(D::row_vec({1, 2, 3, 4, 5}));
  ad::Var h = t.leaf(D::full(1, 3, 0.7));
  ad::Var out = decode_field(t, h, w);
  CHECK(t.val(out).cols == 5);
  for (int j = 0; j < 5; ++j) CHECK(t.val(out)(0, j) == doctest::Approx(double(j + 1)));

  // d_hidden = 1 scalar chain: chat = w4 * relu(w3 * h + b3) + b4
  CdeFieldVars<double> s;
  s.w3 = t.leaf(D::full(1, 1, 2.0));
  s.b3 = t.leaf(D::full(1, 1, -0.5));
  s.w4 = t.leaf(D::full(1, 1, 3.0));
  s.b4 = t.leaf(D::full(1, 1, 0.25));
  ad::Var hs = t.leaf(D::full(1, 1, 1.5));
  // relu(2*1.5 - 0.5) = 2.5; 3*2.5 + 0.25 = 7.75
  CHECK(t.val(decode_field(t, hs, s))(0, 0) == doctest::Approx(7.75));
}

TEST_CASE("cde_forward: K=1 identity, K=4 mean oracle, empty error") {
  std::vector<FieldSpec> specs = {{"a", FieldKind::Numeric}, {"b", FieldKind::Numeric},
                                  {"c", FieldKind::Numeric}, {"d", FieldKind::Numeric}};
  std::vector<std::vector<std::string>> rows = {{"1", "2", "3", "4"}, {"2", "4", "6", "8"},
                                                {"3", "6", "9", "12"}};
  auto schema = fit_schema(rows, specs);
  auto rec = encode_record(schema, rows[0]);

  ad::Tape<double> t;
  Rng rng(41);
  CdeVars<double> vars;
  for (int k = 0; k < 4; ++k) vars.fields.push_back(leaf_field(t, 1, 6, rng));
  auto out = cde_forward(t, rec, vars);
  // independent mean of the four hidden states
  D mean(1, 6);
  for (int k = 0; k < 4; ++k) {
    ad::Var c = t.leaf(rec.values[size_t(k)]);
    ad::Var h = encode_field(t, c, vars.fields[size_t(k)]);
    for (int j = 0; j < 6; ++j) mean(0, j) += t.val(h)(0, j) / 4.0;
  }
  for (int j = 0; j < 6; ++j)
    CHECK(t.val(out.c_emb)(0, j) == doctest::Approx(mean(0, j)).epsilon(1e-12));

  // K=1: embedding equals the single hidden state
  EncodedRecord one;
  one.values.push_back(rec.values[0]);
  one.hot_index.push_back(-1);
  CdeVars<double> v1;
  v1.fields.push_back(vars.fields[0]);
  auto o1 = cde_forward(t, one, v1);
  ad::Var h1 = encode_field(t, t.leaf(one.values[0]), v1.fields[0]);
  for (int j = 0; j < 6; ++j)
    CHECK(t.val(o1.c_emb)(0, j) == doctest::Approx(t.val(h1)(0, j)));

  EncodedRecord empty;
  CdeVars<double> v0;
  CHECK_THROWS_AS(cde_forward(t, empty, v0), DataError);
}

TEST_CASE("two opposite hidden states cancel in the mean") {
  ad::Tape<double> t;
  // encoders with zero w1/w2 so hidden = b2; set b2 to +v and -v
  auto mk = [&](double b2val) {
    CdeFieldVars<double> f;
    f.w1 = t.leaf(D::zeros(1, 3));
    f.b1 = t.leaf(D::zeros(1, 3));
    f.w2 = t.leaf(D::zeros(3, 3));
    f.b2 = t.leaf(D::full(1, 3, b2val));
    f.w3 = t.leaf(D::zeros(3, 3));
    f.b3 = t.leaf(D::zeros(1, 3));
    f.w4 = t.leaf(D::zeros(3, 1));
    f.b4 = t.leaf(D::zeros(1, 1));
    return f;
  };
  CdeVars<double> vars;
  vars.fields.push_back(mk(1.25));
  vars.fields.push_back(mk(-1.25));
  EncodedRecord rec;
  rec.values.push_back(D::full(1, 1, 0.5));
  rec.values.push_back(D::full(1, 1, -0.5));
  rec.hot_index = {-1, -1};
  auto out = cde_forward(t, rec, vars);
  for (int j = 0; j < 3; ++j) CHECK(t.val(out.c_emb)(0, j) == 0.0);
}

TEST_CASE("reconstruction loss: perfect numeric is 0; uniform logits give ln 2") {
  ad::Tape<double> t;
  ad::Var pred = t.leaf(D::full(1, 1, 0.37));
  ad::Var zero = ad::mse_vs_const(t, pred, D::full(1, 1, 0.37));
  CHECK(t.val(zero)(0, 0) == 0.0);
  ad::Var logits = t.leaf(D::zeros(1, 2));
  ad::Var ce = ad::softmax_xent_row(t, logits, 0);
  CHECK(t.val(ce)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("mixed numeric+categorical reconstruction loss matches hand evaluation") {
  std::vector<FieldSpec> specs = {{"v", FieldKind::Numeric},
                                  {"g", FieldKind::Categorical}};
  std::vector<std::vector<std::string>> rows = {{"1", "x"}, {"2", "y"}, {"4", "x"}};
  auto schema = fit_schema(rows, specs);
  auto rec = encode_record(schema, rows[1]);  // g = y -> index 1

  ad::Tape<double> t;
  Rng rng(51);
  CdeVars<double> vars;
  vars.fields.push_back(leaf_field(t, 1, 4, rng));
  vars.fields.push_back(leaf_field(t, 2, 4, rng));
  auto out = cde_forward(t, rec, vars);

  ad::Var h0 = encode_field(t, t.leaf(rec.values[0]), vars.fields[0]);
  ad::Var r0 = decode_field(t, h0, vars.fields[0]);
  double term1 = std::pow(t.val(r0)(0, 0) - rec.values[0](0, 0), 2.0);
  ad::Var h1 = encode_field(t, t.leaf(rec.values[1]), vars.fields[1]);
  ad::Var r1 = decode_field(t, h1, vars.fields[1]);
  double z0 = t.val(r1)(0, 0), z1 = t.val(r1)(0, 1);
  double mx = std::max(z0, z1);
  double term2 = std::log(std::exp(z0 - mx) + std::exp(z1 - mx)) + mx - z1;
  CHECK(t.val(out.recon_loss)(0, 0) == doctest::Approx(term1 + term2).epsilon(1e-12));
  CHECK(t.val(out.recon_loss)(0, 0) >= 0.0);
}

TEST_CASE("cde weights pass grad_check through the reconstruction loss") {
  std::vector<FieldSpec> specs = {{"v", FieldKind::Numeric},
                                  {"g", FieldKind::Categorical}};
  auto schema = fit_schema({{"1", "x"}, {"2", "y"}, {"4", "x"}}, specs);
  auto rec = encode_record(schema, {"2", "x"});
  double worst = 0;
  for (int p = 0; p < 10; ++p) {
    Rng rng(500 + uint64_t(p));
    int h = 5;
    std::vector<D> inputs;
    for (int k = 0; k < 2; ++k) {
      int dk = k == 0 ? 1 : 2;
      inputs.push_back(num::random_normal<double>(dk, h, 0.5, rng));
      inputs.push_back(num::random_normal<double>(1, h, 0.2, rng));
      inputs.push_back(num::random_normal<double>(h, h, 0.5, rng));
      inputs.push_back(num::random_normal<double>(1, h, 0.2, rng));
      inputs.push_back(num::random_normal<double>(h, h, 0.5, rng));
      inputs.push_back(num::random_normal<double>(1, h, 0.2, rng));
      inputs.push_back(num::random_normal<double>(h, dk, 0.5, rng));
      inputs.push_back(num::random_normal<double>(1, dk, 0.2, rng));
    }
    auto rep = ad::grad_check<double>(
        [&](ad::Tape<double>& t, const std::vector<ad::Var>& v) {
          CdeVars<double> vars;
          for (int k = 0; k < 2; ++k) {
            CdeFieldVars<double> f;
            f.w1 = v[size_t(8 * k + 0)];
            f.b1 = v[size_t(8 * k + 1)];
            f.w2 = v[size_t(8 * k + 2)];
            f.b2 = v[size_t(8 * k + 3)];
            f.w3 = v[size_t(8 * k + 4)];
            f.b3 = v[size_t(8 * k + 5)];
            f.w4 = v[size_t(8 * k + 6)];
            f.b4 = v[size_t(8 * k + 7)];
            vars.fields.push_back(f);
          }
          auto out = cde_forward(t, rec, vars);
          // the embedding also feeds downstream; fold it in so both paths count
          Rng r2(9);
          ad::Var emb_term = ad::mse_vs_const(t, out.c_emb,
                                              num::random_normal<double>(1, 5, 1.0, r2));
          return ad::weighted_sum<double>(t, {{out.recon_loss, 1.0}, {emb_term, 0.7}});
        },
        inputs);
    REQUIRE(rep.analytic_finite);
    worst = std::max(worst, rep.max_rel_err);
  }
  CHECK(worst < 1e-4);
}

}  // TEST_SUITE
