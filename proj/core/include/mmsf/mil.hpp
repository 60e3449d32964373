#pragma once

#include <algorithm>
#include <chrono>
#include <numeric>
#include <vector>

#include "mmsf/mat.hpp"
#include "mmsf/tape.hpp"

namespace mmsf::mil {

struct SsmBlockConfig {
  int depth = 8;
  int state_dim = 16;
  int conv_width = 4;
  int expand = 2;
  void validate() const {
    if (depth < 0 || state_dim < 1 || conv_width < 1 || expand < 1)
      throw ConfigError("mil: block config values must be >= 1 (depth >= 0)");
  }
};

// ---------------------------------------------------------------------------
// adaptive patch selector
// ---------------------------------------------------------------------------

template <class T>
struct ApsOutput {
  // Selected rows in original (raster) order — the order fed to the scan —
  // scaled by their scores so selection stays on the gradient path.
  ad::Var selected;                 // lambda' x d
  std::vector<int> raster_indices;  // ascending original indices of the rows
  // Contract ordering: the lambda' highest-score indices, descending score,
  // ascending index on ties.
  std::vector<int> indices_by_score;
  ad::Var scores;                   // N x 1, sigmoid in [0,1]
};

// score_i = sigmoid(f_i . w + b); top-min(N, lambda) kept.
template <class T>
ApsOutput<T> aps(ad::Tape<T>& t, ad::Var features, int lambda, ad::Var w, ad::Var b) {
  const auto& F = t.val(features);
  if (F.rows < 1) throw DataError("aps: empty feature matrix");
  if (lambda < 1) throw ConfigError("aps: lambda must be >= 1");
  ApsOutput<T> out;
  out.scores = ad::sigmoid(t, ad::add_rowvec(t, ad::matmul(t, features, w), b));
  const auto& S = t.val(out.scores);
  int n = F.rows;
  int take = std::min(n, lambda);
  std::vector<int> idx(static_cast<size_t>(n), 0);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a2, int b2) {
    if (S(a2, 0) != S(b2, 0)) return S(a2, 0) > S(b2, 0);
    return a2 < b2;
  });
  out.indices_by_score.assign(idx.begin(), idx.begin() + take);
  out.raster_indices = out.indices_by_score;
  std::sort(out.raster_indices.begin(), out.raster_indices.end());
  out.selected = ad::gather_scale_rows(t, features, out.scores, out.raster_indices);
  return out;
}

// ---------------------------------------------------------------------------
// Mamba-style block
// ---------------------------------------------------------------------------

template <class T>
struct MambaBlockVars {
  ad::Var ln_gamma, ln_beta;   // pre-norm affine (1 x d)
  ad::Var w_in, b_in;          // d -> 2*di + 2*ds + di  (x, z, dt, B, C)
  ad::Var conv_k, conv_b;      // depthwise causal conv (w x di, 1 x di)
  ad::Var a_log;               // di x ds
  ad::Var dt_bias;             // 1 x di
  ad::Var d_skip;              // 1 x di
  ad::Var w_out, b_out;        // di -> d
};

// Residual block: x + W_out( silu(z) (.) scan( silu(conv(xs)) ) ), where
// [xs | z | dt_raw | B | C] = LN(x) W_in + b_in, dt = softplus(dt_raw + bias),
// and the scan uses A = -exp(A_log). Width expands by `expand` inside.
template <class T>
ad::Var mamba_block(ad::Tape<T>& t, ad::Var x, const SsmBlockConfig& cfg,
                    const MambaBlockVars<T>& w, T ln_eps = T(1e-5)) {
  const auto& X = t.val(x);
  int d = X.cols;
  int di = d * cfg.expand;
  int ds = cfg.state_dim;
  ad::Var xn = ad::layer_norm_rows(t, x, w.ln_gamma, w.ln_beta, ln_eps);
  ad::Var proj = ad::add_rowvec(t, ad::matmul(t, xn, w.w_in), w.b_in);
  ad::Var xs = ad::slice_cols(t, proj, 0, di);
  ad::Var z = ad::slice_cols(t, proj, di, di);
  ad::Var dt_raw = ad::slice_cols(t, proj, 2 * di, di);
  ad::Var b_sel = ad::slice_cols(t, proj, 3 * di, ds);
  ad::Var c_sel = ad::slice_cols(t, proj, 3 * di + ds, ds);

  xs = ad::silu(t, ad::causal_conv1d(t, xs, w.conv_k, w.conv_b));
  ad::Var dt = ad::softplus(t, ad::add_rowvec(t, dt_raw, w.dt_bias));
  ad::Var a = ad::neg_exp(t, w.a_log);
  ad::Var y = ad::ssm_scan(t, xs, dt, b_sel, c_sel, a, w.d_skip);
  y = ad::mul(t, y, ad::silu(t, z));
  ad::Var o = ad::add_rowvec(t, ad::matmul(t, y, w.w_out), w.b_out);
  return ad::add(t, x, o);
}

// ---------------------------------------------------------------------------
// MIL encoder
// ---------------------------------------------------------------------------

template <class T>
struct MilVars {
  std::vector<MambaBlockVars<T>> blocks;
  ad::Var inst_w, inst_b;  // shared instance head, d -> C
};

template <class T>
struct MilOutput {
  ad::Var refined;      // lambda' x d
  ad::Var inst_logits;  // lambda' x C
  ad::Var z_bag;        // 1 x d, column mean of refined rows
};

template <class T>
MilOutput<T> mil_encode(ad::Tape<T>& t, ad::Var selected, const SsmBlockConfig& cfg,
                        const MilVars<T>& vars) {
  cfg.validate();
  if (int(vars.blocks.size()) != cfg.depth)
    throw ShapeError("mil_encode: depth/weight mismatch");
  ad::Var h = selected;
  for (const auto& blk : vars.blocks) h = mamba_block(t, h, cfg, blk);
  MilOutput<T> out;
  out.refined = h;
  out.inst_logits = ad::add_rowvec(t, ad::matmul(t, h, vars.inst_w), vars.inst_b);
  out.z_bag = ad::row_mean(t, h);
  return out;
}

// ---------------------------------------------------------------------------
// complexity probe
// ---------------------------------------------------------------------------

struct ProbePoint {
  int n = 0;
  double seconds = 0.0;
};

struct ProbeReport {
  std::vector<ProbePoint> points;      // ascending n
  std::vector<double> doubling_ratios; // time[i+1] / time[i]
  double fitted_exponent = 0.0;        // least-squares slope of log t vs log n
};

// Times the encoder forward (scoring/selection excluded) at each size and
// fits t(N) = c * N^p. Sizes must number >= 3 and each be >= 1024.
ProbeReport probe_complexity(const std::vector<int>& sizes, int width,
                             const SsmBlockConfig& cfg, uint64_t seed, int repeats = 3);

}  // namespace mmsf::mil
