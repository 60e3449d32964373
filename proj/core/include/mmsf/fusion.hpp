#pragma once

#include <string>

#include "mmsf/mat.hpp"
#include "mmsf/tape.hpp"

namespace mmsf::fusion {

enum class FusionMode { None, Linear, Se };

// Parses a fusion-strategy token. Unknown tokens are a config error.
FusionMode fusion_mode(const std::string& token);
std::string to_string(FusionMode m);

struct FusionConfig {
  FusionMode mode = FusionMode::Se;
  int reduction = 16;      // SE bottleneck ratio r; bottleneck clamps to >= 1
  bool gate_bias = true;   // biases in the SE gate MLP
  void validate() const;
};

template <class T>
struct FfmVars {
  ad::Var w_down, w_up;      // SE bottleneck pair (d -> d/r -> d)
  ad::Var b_down, b_up;      // present when gate_bias
  ad::Var w_lin, b_lin;      // Linear mode per-channel affine (1 x d each)
  ad::Var gamma, beta;       // layer-norm affine, size d
  bool has_bias = true;
};

// Features fusion over two row batches f1 (n x d1), f2 (n x d2):
//   none:   concat(f1, f2)                                   (bit-for-bit)
//   linear: layer_norm(concat (.) w + b)    static channel weights
//   se:     layer_norm(concat (.) sigmoid(ReLU(concat W_down) W_up))
// The three modes form a capacity ladder: unit channel weights, learned
// static channel weights, input-conditioned channel weights. Row i of the
// output depends only on rows i of the inputs.
template <class T>
ad::Var ffm(ad::Tape<T>& t, ad::Var f1, ad::Var f2, const FusionConfig& cfg,
            const FfmVars<T>& vars, T ln_eps = T(1e-5)) {
  ad::Var x = ad::concat_cols(t, f1, f2);
  if (cfg.mode == FusionMode::None) return x;
  if (cfg.mode == FusionMode::Linear) {
    const auto& X = t.val(x);
    ad::Var wrow = vars.w_lin;
    if (t.val(wrow).rows != 1 || t.val(wrow).cols != X.cols)
      throw ShapeError("ffm: linear weights must be 1 x (d1+d2)");
    // broadcast the channel scale over rows via an outer product with ones
    ad::Var ones = t.leaf(num::Mat<T>::full(X.rows, 1, T(1)));
    ad::Var wmat = ad::matmul(t, ones, wrow);
    ad::Var y = ad::mul(t, x, wmat);
    y = vars.has_bias ? ad::add_rowvec(t, y, vars.b_lin) : y;
    return ad::layer_norm_rows(t, y, vars.gamma, vars.beta, ln_eps);
  }
  ad::Var z = ad::matmul(t, x, vars.w_down);
  if (vars.has_bias) z = ad::add_rowvec(t, z, vars.b_down);
  z = ad::relu(t, z);
  z = ad::matmul(t, z, vars.w_up);
  if (vars.has_bias) z = ad::add_rowvec(t, z, vars.b_up);
  ad::Var gate = ad::sigmoid(t, z);
  ad::Var gated = ad::mul(t, x, gate);
  return ad::layer_norm_rows(t, gated, vars.gamma, vars.beta, ln_eps);
}

}  // namespace mmsf::fusion
