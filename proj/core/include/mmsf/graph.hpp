#pragma once

#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "mmsf/mat.hpp"
#include "mmsf/tape.hpp"

namespace mmsf::graph {

// One sample's bag: N patch feature vectors plus 2-D pixel coordinates.
// Feature row i and coordinate row i refer to the same patch.
struct PatchBag {
  num::Mat<float> features;  // N x d_patch
  num::Mat<float> coords;    // N x 2
  std::string bag_id;

  int num_patches() const { return features.rows; }
  int feature_dim() const { return features.cols; }
  void validate() const;
};

// Undirected patch graph. Edges are stored once with u < v; adjacency is
// symmetric by construction, no self-loops, no duplicates.
struct SpatialGraph {
  int num_vertices = 0;
  std::vector<std::pair<int, int>> edges;

  // CSR over neighbors including the vertex itself (self-loop added), sorted
  // ascending; built once, used by both GNN aggregation kernels.
  std::vector<int> adj_offsets;
  std::vector<int> adj;

  std::vector<int> degree;  // neighbor count, self-loop excluded

  void finalize();  // fills adjacency/degree from edges
  bool has_edge(int u, int v) const;
};

// Dual-threshold edge rule: edge (i,j) iff Euclidean coordinate distance
// < tau_spatial and cosine feature similarity > tau_tissue, i != j. Uses a
// uniform grid over coordinates so expected cost is o(N^2) for bounded
// density. Thresholds are compared in double so the result is independent of
// the training precision.
SpatialGraph build_graph(const PatchBag& bag, double tau_spatial, double tau_tissue);

struct GraphEncoderConfig {
  enum class Kind { GCN, GAT };
  Kind model_kind = Kind::GAT;
  int hidden_dim = 256;
  int out_dim = 256;
  double dropout = 0.1;
  int heads = 4;           // GAT only
  double leaky_slope = 0.2;  // GAT only
  void validate() const;
};

// ---------------------------------------------------------------------------
// tape ops over a fixed graph
// ---------------------------------------------------------------------------

// Symmetric-normalized aggregation with self-loops: y = D~^{-1/2} A~ D~^{-1/2} x
// where A~ = A + I. Linear with a symmetric matrix, so backward applies the
// same aggregation to the incoming gradient.
template <class T>
ad::Var gcn_aggregate(ad::Tape<T>& t, const SpatialGraph& g, ad::Var x) {
  const auto& X = t.val(x);
  if (X.rows != g.num_vertices) throw ShapeError("gcn_aggregate: row/vertex mismatch");
  auto apply = [&g](const num::Mat<T>& in) {
    num::Mat<T> out(in.rows, in.cols);
    for (int i = 0; i < g.num_vertices; ++i) {
      T di = T(1) / T(std::sqrt(double(g.degree[size_t(i)] + 1)));
      T* orow = out.row_ptr(i);
      for (int e = g.adj_offsets[size_t(i)]; e < g.adj_offsets[size_t(i) + 1]; ++e) {
        int j = g.adj[size_t(e)];
        T w = di / T(std::sqrt(double(g.degree[size_t(j)] + 1)));
        const T* irow = in.row_ptr(j);
        for (int c = 0; c < in.cols; ++c) orow[c] += w * irow[c];
      }
    }
    return out;
  };
  num::Mat<T> y = apply(X);
  const SpatialGraph* gp = &g;
  return t.make(std::move(y), [x, gp](ad::Tape<T>& tp, int self) {
    const auto& gr = tp.grad(ad::Var{self});
    num::Mat<T> back(gr.rows, gr.cols);
    for (int i = 0; i < gp->num_vertices; ++i) {
      T di = T(1) / T(std::sqrt(double(gp->degree[size_t(i)] + 1)));
      T* orow = back.row_ptr(i);
      for (int e = gp->adj_offsets[size_t(i)]; e < gp->adj_offsets[size_t(i) + 1]; ++e) {
        int j = gp->adj[size_t(e)];
        T w = di / T(std::sqrt(double(gp->degree[size_t(j)] + 1)));
        const T* irow = gr.row_ptr(j);
        for (int c = 0; c < gr.cols; ++c) orow[c] += w * irow[c];
      }
    }
    auto& gx = tp.grad(x);
    for (size_t i = 0; i < gx.size(); ++i) gx.data[i] += back.data[i];
  });
}

// Single-head GAT aggregation over N(i) u {i}:
//   e_ij   = leaky_relu(s_src[i] + s_dst[j])
//   alpha  = softmax_j(e_ij) over the neighborhood of i
//   y_i    = sum_j alpha_ij * (attn_keep_ij) * H_j
// attn_drop, when non-null, holds one inverted-dropout factor per CSR entry
// (0 or 1/keep) applied after normalization. If attn_out is non-null the
// normalized coefficients are copied there (CSR layout) for inspection.
template <class T>
ad::Var gat_aggregate(ad::Tape<T>& t, const SpatialGraph& g, ad::Var s_src, ad::Var s_dst,
                      ad::Var h, T slope,
                      std::shared_ptr<std::vector<std::type_identity_t<T>>> attn_drop = nullptr,
                      std::vector<std::type_identity_t<T>>* attn_out = nullptr) {
  const auto& Ssrc = t.val(s_src);
  const auto& Sdst = t.val(s_dst);
  const auto& H = t.val(h);
  int n = g.num_vertices;
  if (H.rows != n || Ssrc.rows != n || Ssrc.cols != 1 || Sdst.rows != n || Sdst.cols != 1)
    throw ShapeError("gat_aggregate: shape mismatch");
  size_t nnz = g.adj.size();
  if (attn_drop && attn_drop->size() != nnz)
    throw ShapeError("gat_aggregate: dropout mask size");

  auto alpha = std::make_shared<std::vector<T>>(nnz, T(0));
  num::Mat<T> y(n, H.cols);
  for (int i = 0; i < n; ++i) {
    int e0 = g.adj_offsets[size_t(i)], e1 = g.adj_offsets[size_t(i) + 1];
    T mx = -std::numeric_limits<T>::infinity();
    for (int e = e0; e < e1; ++e) {
      T raw = Ssrc(i, 0) + Sdst(g.adj[size_t(e)], 0);
      T act = raw > T(0) ? raw : slope * raw;
      (*alpha)[size_t(e)] = act;
      mx = std::max(mx, act);
    }
    T sum = 0;
    for (int e = e0; e < e1; ++e) {
      T v = T(std::exp(double((*alpha)[size_t(e)] - mx)));
      (*alpha)[size_t(e)] = v;
      sum += v;
    }
    for (int e = e0; e < e1; ++e) (*alpha)[size_t(e)] /= sum;
    T* orow = y.row_ptr(i);
    for (int e = e0; e < e1; ++e) {
      int j = g.adj[size_t(e)];
      T w = (*alpha)[size_t(e)] * (attn_drop ? (*attn_drop)[size_t(e)] : T(1));
      const T* hrow = H.row_ptr(j);
      for (int c = 0; c < H.cols; ++c) orow[c] += w * hrow[c];
    }
  }
  if (attn_out) *attn_out = *alpha;

  const SpatialGraph* gp = &g;
  return t.make(std::move(y), [s_src, s_dst, h, slope, alpha, attn_drop,
                               gp](ad::Tape<T>& tp, int self) {
    const auto& gy = tp.grad(ad::Var{self});
    const auto& Ssrc2 = tp.val(s_src);
    const auto& Sdst2 = tp.val(s_dst);
    const auto& H2 = tp.val(h);
    auto& gsrc = tp.grad(s_src);
    auto& gdst = tp.grad(s_dst);
    auto& gh = tp.grad(h);
    int n = gp->num_vertices;
    for (int i = 0; i < n; ++i) {
      int e0 = gp->adj_offsets[size_t(i)], e1 = gp->adj_offsets[size_t(i) + 1];
      // w_e = d(y_i)/d(alpha_e) = keep_e * <gy_i, H_j>; also gh through alpha.
      T dotsum = 0;
      std::vector<T> w(size_t(e1 - e0));
      for (int e = e0; e < e1; ++e) {
        int j = gp->adj[size_t(e)];
        T keep = attn_drop ? (*attn_drop)[size_t(e)] : T(1);
        T d = 0;
        const T* hrow = H2.row_ptr(j);
        const T* grow = gy.row_ptr(i);
        for (int c = 0; c < H2.cols; ++c) d += grow[c] * hrow[c];
        w[size_t(e - e0)] = keep * d;
        T a = (*alpha)[size_t(e)] * keep;
        T* ghrow = gh.row_ptr(j);
        for (int c = 0; c < H2.cols; ++c) ghrow[c] += a * grow[c];
        dotsum += (*alpha)[size_t(e)] * w[size_t(e - e0)];
      }
      for (int e = e0; e < e1; ++e) {
        int j = gp->adj[size_t(e)];
        T galpha = w[size_t(e - e0)];
        T ge = (*alpha)[size_t(e)] * (galpha - dotsum);  // softmax backward
        T raw = Ssrc2(i, 0) + Sdst2(j, 0);
        T f = raw > T(0) ? T(1) : slope;
        gsrc(i, 0) += ge * f;
        gdst(j, 0) += ge * f;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// two-layer graph encoder
// ---------------------------------------------------------------------------

template <class T>
struct GraphLayerWeights {
  // GCN: one W per layer. GAT: per-head W plus attention vectors a_src/a_dst.
  std::vector<ad::Var> w;      // heads x (d_in x d_head)
  std::vector<ad::Var> a_src;  // heads x (d_head x 1)
  std::vector<ad::Var> a_dst;  // heads x (d_head x 1)
};

template <class T>
struct GraphEncoderVars {
  GraphLayerWeights<T> l1, l2;
};

struct GatTrace {
  // Per layer, per head: normalized attention in CSR order of the graph.
  std::vector<std::vector<double>> layer1, layer2;
};

namespace detail {

template <class T>
ad::Var graph_layer(ad::Tape<T>& t, const SpatialGraph& g, const GraphEncoderConfig& cfg,
                    const GraphLayerWeights<T>& w, ad::Var x, bool concat_heads,
                    std::shared_ptr<std::vector<T>> attn_drop,
                    std::vector<std::vector<double>>* trace) {
  if (cfg.model_kind == GraphEncoderConfig::Kind::GCN) {
    ad::Var hx = ad::matmul(t, x, w.w[0]);
    return gcn_aggregate(t, g, hx);
  }
  std::vector<ad::Var> heads;
  for (size_t k = 0; k < w.w.size(); ++k) {
    ad::Var h = ad::matmul(t, x, w.w[k]);
    ad::Var ssrc = ad::matmul(t, h, w.a_src[k]);
    ad::Var sdst = ad::matmul(t, h, w.a_dst[k]);
    std::vector<T> attn;
    ad::Var out = gat_aggregate(t, g, ssrc, sdst, h, T(cfg.leaky_slope), attn_drop,
                                trace ? &attn : nullptr);
    if (trace) {
      std::vector<double> a(attn.size());
      for (size_t i = 0; i < attn.size(); ++i) a[i] = double(attn[i]);
      trace->push_back(std::move(a));
    }
    heads.push_back(out);
  }
  if (heads.size() == 1) return heads[0];
  if (concat_heads) {
    ad::Var acc = heads[0];
    for (size_t k = 1; k < heads.size(); ++k) acc = ad::concat_cols(t, acc, heads[k]);
    return acc;
  }
  ad::Var acc = heads[0];
  for (size_t k = 1; k < heads.size(); ++k) acc = ad::add(t, acc, heads[k]);
  return ad::scale(t, acc, T(1) / T(heads.size()));
}

}  // namespace detail

// Two stacked GNN layers (in -> hidden -> out) with ELU and dropout between.
// Returns per-patch embeddings (N x out_dim); the bag-level summary is the
// column mean (global average pooling), taken by the caller.
// dropout_rng non-null enables training-mode dropout (features + attention).
template <class T>
ad::Var graph_encode(ad::Tape<T>& t, const SpatialGraph& g, const GraphEncoderConfig& cfg,
                     const GraphEncoderVars<T>& vars, ad::Var x, Rng* dropout_rng,
                     GatTrace* trace = nullptr) {
  cfg.validate();
  auto make_attn_mask = [&](Rng* rng) -> std::shared_ptr<std::vector<T>> {
    if (!rng || cfg.dropout <= 0.0 || cfg.model_kind != GraphEncoderConfig::Kind::GAT)
      return nullptr;
    auto m = std::make_shared<std::vector<T>>(g.adj.size());
    T inv = T(1.0 / (1.0 - cfg.dropout));
    for (auto& v : *m) v = rng->uniform01() < cfg.dropout ? T(0) : inv;
    return m;
  };

  ad::Var h1 = detail::graph_layer(t, g, cfg, vars.l1, x, /*concat_heads=*/true,
                                   make_attn_mask(dropout_rng),
                                   trace ? &trace->layer1 : nullptr);
  h1 = ad::elu(t, h1);
  if (dropout_rng && cfg.dropout > 0.0) {
    auto mask = std::make_shared<std::vector<uint8_t>>(t.val(h1).size());
    for (auto& b : *mask) b = dropout_rng->uniform01() < cfg.dropout ? 0 : 1;
    h1 = ad::dropout_mask(t, h1, mask, T(1.0 - cfg.dropout));
  }
  ad::Var h2 = detail::graph_layer(t, g, cfg, vars.l2, h1, /*concat_heads=*/false,
                                   make_attn_mask(dropout_rng),
                                   trace ? &trace->layer2 : nullptr);
  return ad::elu(t, h2);
}

}  // namespace mmsf::graph
