#pragma once

#include <string>
#include <vector>

#include "mmsf/clinical.hpp"
#include "mmsf/config.hpp"
#include "mmsf/fusion.hpp"
#include "mmsf/graph.hpp"
#include "mmsf/mil.hpp"
#include "mmsf/objectives.hpp"
#include "mmsf/param_store.hpp"

namespace mmsf::model {

// Per-forward tape context: memoizes one leaf per touched parameter so shared
// weights map to a single var, and routes tape gradients back into the store.
template <class T>
struct Ctx {
  ad::Tape<T>& tape;
  num::ParameterStore<T>& store;
  std::vector<ad::Var> cache;

  Ctx(ad::Tape<T>& t, num::ParameterStore<T>& s)
      : tape(t), store(s), cache(size_t(s.count())) {}

  ad::Var use(int id) {
    auto& v = cache[size_t(id)];
    if (!v.valid()) v = tape.leaf(store.at(id).value);
    return v;
  }

  // Adds d(loss)/d(param) into the store's gradient slots.
  void accumulate_grads() {
    for (size_t id = 0; id < cache.size(); ++id) {
      if (!cache[id].valid()) continue;
      const auto& g = tape.grad(cache[id]);
      auto& dst = store.at(int(id)).grad;
      for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += g.data[i];
    }
  }
};

template <class T>
struct BagForward {
  ad::Var z_bag;               // 1 x dm
  ad::Var z_final;             // 1 x dz (after late fusion when clinical runs)
  ad::Var bag_logits;          // 1 x C
  ad::Var bag_logit;           // 1 x 1 collapsed binary logit
  ad::Var inst_logits;         // lambda' x C
  ad::Var inst_logit_col;      // lambda' x 1 collapsed
  ad::Var risk;                // 1 x 1 survival risk in (0,1)
  ad::Var clinical_recon;      // 1 x 1, invalid when the branch is off
  num::Mat<T> patch_scores;    // N x 1 copy of S_patch
  std::vector<int> selected_raster;
  std::vector<int> selected_by_score;
};

// The multitask pipeline: optional graph branch with early fusion, adaptive
// patch selection, stacked SSM blocks with mean pooling, optional clinical
// branch with late fusion, and both prediction heads.
template <class T>
class Model {
 public:
  Model(const io::RunConfig& cfg, int patch_dim, const clinical::ClinicalSchema& schema,
        num::ParameterStore<T>& store)
      : cfg_(cfg), schema_(schema), patch_dim_(patch_dim), store_(&store) {
    build(cfg.seed);
  }

  int fused_patch_dim() const {
    return patch_dim_ + (cfg_.graph.enabled ? cfg_.graph.encoder.out_dim : 0);
  }
  int final_dim() const {
    return fused_patch_dim() + (cfg_.clinical.enabled ? cfg_.clinical.hidden_dim : 0);
  }
  int num_classes() const { return 2; }
  const io::RunConfig& config() const { return cfg_; }
  const clinical::ClinicalSchema& schema() const { return schema_; }

  const std::vector<int>& penalized_ids() const { return penalized_; }

  BagForward<T> forward(Ctx<T>& ctx, const graph::PatchBag& bag,
                        const graph::SpatialGraph* g, const clinical::EncodedRecord* rec,
                        Rng* dropout_rng, graph::GatTrace* trace = nullptr) const {
    auto& t = ctx.tape;
    BagForward<T> out;
    ad::Var feats = t.leaf(bag.features.template cast<T>());

    ad::Var x = feats;
    if (cfg_.graph.enabled) {
      if (!g) throw DataError("model: graph branch enabled but no graph given");
      graph::GraphEncoderVars<T> gv = materialize_graph(ctx);
      ad::Var emb = graph::graph_encode(t, *g, cfg_.graph.encoder, gv, feats, dropout_rng,
                                        trace);
      x = fusion::ffm(t, feats, emb, cfg_.fusion, materialize_ffm(ctx, early_));
    }

    auto sel = mil::aps(t, x, cfg_.mil.lambda, ctx.use(aps_w_), ctx.use(aps_b_));
    out.patch_scores = t.val(sel.scores);
    out.selected_raster = sel.raster_indices;
    out.selected_by_score = sel.indices_by_score;

    auto enc = mil::mil_encode(t, sel.selected, cfg_.mil.block, materialize_mil(ctx));
    out.z_bag = enc.z_bag;
    out.inst_logits = enc.inst_logits;
    out.inst_logit_col = collapse_col(t, enc.inst_logits);

    out.z_final = out.z_bag;
    if (cfg_.clinical.enabled) {
      if (!rec) throw DataError("model: clinical branch enabled but no record given");
      auto cde = clinical::cde_forward(t, *rec, materialize_cde(ctx));
      out.clinical_recon = cde.recon_loss;
      out.z_final = fusion::ffm(t, out.z_bag, cde.c_emb, cfg_.fusion,
                                materialize_ffm(ctx, late_));
    }

    out.bag_logits =
        objectives::classification_head(t, out.z_final, ctx.use(cls_w_), ctx.use(cls_b_));
    out.bag_logit = objectives::binary_logit(t, out.bag_logits);
    out.risk = objectives::survival_head(t, out.z_final, ctx.use(surv_w_), ctx.use(surv_b_));
    return out;
  }

  // S_patch for every patch of a bag (the early pipeline only, so it works
  // without a clinical record).
  num::Mat<T> patch_scores(Ctx<T>& ctx, const graph::PatchBag& bag,
                           const graph::SpatialGraph* g) const {
    auto& t = ctx.tape;
    ad::Var feats = t.leaf(bag.features.template cast<T>());
    ad::Var x = feats;
    if (cfg_.graph.enabled) {
      if (!g) throw DataError("model: graph branch enabled but no graph given");
      graph::GraphEncoderVars<T> gv = materialize_graph(ctx);
      ad::Var emb = graph::graph_encode(t, *g, cfg_.graph.encoder, gv, feats, nullptr);
      x = fusion::ffm(t, feats, emb, cfg_.fusion, materialize_ffm(ctx, early_));
    }
    auto sel = mil::aps(t, x, cfg_.mil.lambda, ctx.use(aps_w_), ctx.use(aps_b_));
    return t.val(sel.scores);
  }

  // Penalized parameter vars for the L2 term, materialized on this tape.
  std::vector<ad::Var> penalized_vars(Ctx<T>& ctx) const {
    std::vector<ad::Var> v;
    for (int id : penalized_) v.push_back(ctx.use(id));
    return v;
  }

 private:
  struct FfmIds {
    int w_down = -1, b_down = -1, w_up = -1, b_up = -1;
    int w_lin = -1, b_lin = -1, gamma = -1, beta = -1;
  };
  struct BlockIds {
    int ln_gamma, ln_beta, w_in, b_in, conv_k, conv_b, a_log, dt_bias, d_skip, w_out, b_out;
  };
  struct GraphLayerIds {
    std::vector<int> w, a_src, a_dst;
  };

  io::RunConfig cfg_;
  clinical::ClinicalSchema schema_;
  int patch_dim_;
  num::ParameterStore<T>* store_;

  GraphLayerIds gl1_, gl2_;
  FfmIds early_, late_;
  int aps_w_ = -1, aps_b_ = -1;
  std::vector<BlockIds> blocks_;
  int inst_w_ = -1, inst_b_ = -1;
  struct CdeFieldIds {
    int w1, b1, w2, b2, w3, b3, w4, b4;
  };
  std::vector<CdeFieldIds> cde_;
  int cls_w_ = -1, cls_b_ = -1, surv_w_ = -1, surv_b_ = -1;
  std::vector<int> penalized_;

  // Registers a fresh parameter, or binds to an existing entry of the same
  // name (checkpoint reload). Mixing fresh and bound entries is a layout
  // mismatch, detected at the end of build().
  int add_param(const std::string& name, num::Mat<T> init) {
    if (store_->has(name)) {
      int id = store_->id_of(name);
      const auto& e = store_->at(id);
      if (e.value.rows != init.rows || e.value.cols != init.cols)
        throw ShapeError("parameter '" + name + "' shape mismatch on rebind");
      ++bound_;
      return id;
    }
    ++created_;
    return store_->add(name, std::move(init));
  }
  int add_xavier(const std::string& name, int rows, int cols, Rng& rng) {
    double lim = std::sqrt(6.0 / double(rows + cols));
    return add_param(name, num::random_uniform<T>(rows, cols, T(-lim), T(lim), rng));
  }
  int add_zeros(const std::string& name, int rows, int cols) {
    return add_param(name, num::Mat<T>::zeros(rows, cols));
  }
  int add_const(const std::string& name, int rows, int cols, T v) {
    return add_param(name, num::Mat<T>::full(rows, cols, v));
  }
  int created_ = 0, bound_ = 0;

  // Both learned fusion modes start exactly at layer_norm(concat): the linear
  // map is identity-initialized and the SE gate's up-projection is zeroed
  // (uniform 0.5 gates, which the scale-invariant layer norm absorbs).
  void build_ffm(const std::string& prefix, int d, FfmIds& ids, Rng& rng) {
    if (cfg_.fusion.mode == fusion::FusionMode::None) return;
    ids.gamma = add_const(prefix + ".gamma", 1, d, T(1));
    ids.beta = add_zeros(prefix + ".beta", 1, d);
    if (cfg_.fusion.mode == fusion::FusionMode::Linear) {
      ids.w_lin = add_const(prefix + ".w_lin", 1, d, T(1));
      ids.b_lin = add_zeros(prefix + ".b_lin", 1, d);
      return;
    }
    int bottleneck = std::max(1, d / cfg_.fusion.reduction);
    ids.w_down = add_xavier(prefix + ".w_down", d, bottleneck, rng);
    ids.w_up = add_zeros(prefix + ".w_up", bottleneck, d);
    if (cfg_.fusion.gate_bias) {
      ids.b_down = add_zeros(prefix + ".b_down", 1, bottleneck);
      ids.b_up = add_zeros(prefix + ".b_up", 1, d);
    }
  }

  void build_graph_layer(const std::string& prefix, int d_in, int d_out_total,
                         GraphLayerIds& ids, Rng& rng) {
    using Kind = graph::GraphEncoderConfig::Kind;
    if (cfg_.graph.encoder.model_kind == Kind::GCN) {
      ids.w.push_back(add_xavier(prefix + ".w", d_in, d_out_total, rng));
      return;
    }
    int heads = cfg_.graph.encoder.heads;
    int d_head = d_out_total / heads;
    for (int h = 0; h < heads; ++h) {
      std::string p = prefix + ".h" + std::to_string(h);
      ids.w.push_back(add_xavier(p + ".w", d_in, d_head, rng));
      ids.a_src.push_back(add_xavier(p + ".a_src", d_head, 1, rng));
      ids.a_dst.push_back(add_xavier(p + ".a_dst", d_head, 1, rng));
    }
  }

  void build(uint64_t seed) {
    Rng rng = Rng(seed).fork(0xC0DE);
    if (cfg_.graph.enabled) {
      using Kind = graph::GraphEncoderConfig::Kind;
      const auto& ge = cfg_.graph.encoder;
      build_graph_layer("graph.l1", patch_dim_, ge.hidden_dim, gl1_, rng);
      // layer 2: heads average, each mapping hidden -> out
      if (ge.model_kind == Kind::GCN) {
        gl2_.w.push_back(add_xavier("graph.l2.w", ge.hidden_dim, ge.out_dim, rng));
      } else {
        for (int h = 0; h < ge.heads; ++h) {
          std::string p = "graph.l2.h" + std::to_string(h);
          gl2_.w.push_back(add_xavier(p + ".w", ge.hidden_dim, ge.out_dim, rng));
          gl2_.a_src.push_back(add_xavier(p + ".a_src", ge.out_dim, 1, rng));
          gl2_.a_dst.push_back(add_xavier(p + ".a_dst", ge.out_dim, 1, rng));
        }
      }
      build_ffm("fuse_early", fused_patch_dim(), early_, rng);
    }

    int dm = fused_patch_dim();
    aps_w_ = add_xavier("aps.w", dm, 1, rng);
    aps_b_ = add_zeros("aps.b", 1, 1);

    const auto& mc = cfg_.mil.block;
    int di = dm * mc.expand, ds = mc.state_dim;
    for (int b = 0; b < mc.depth; ++b) {
      std::string p = "mil.b" + std::to_string(b);
      BlockIds ids;
      ids.ln_gamma = add_const(p + ".ln_gamma", 1, dm, T(1));
      ids.ln_beta = add_zeros(p + ".ln_beta", 1, dm);
      ids.w_in = add_xavier(p + ".w_in", dm, 3 * di + 2 * ds, rng);
      ids.b_in = add_zeros(p + ".b_in", 1, 3 * di + 2 * ds);
      {
        double lim = std::sqrt(1.0 / double(mc.conv_width));
        ids.conv_k = add_param(
            p + ".conv_k", num::random_uniform<T>(mc.conv_width, di, T(-lim), T(lim), rng));
      }
      ids.conv_b = add_zeros(p + ".conv_b", 1, di);
      {
        num::Mat<T> alog(di, ds);
        for (int c = 0; c < di; ++c)
          for (int s = 0; s < ds; ++s) alog(c, s) = T(std::log(double(s + 1)));
        ids.a_log = add_param(p + ".a_log", std::move(alog));
      }
      {
        // softplus(dt_bias) lands in [1e-3, 1e-1], log-uniform
        num::Mat<T> dtb(1, di);
        for (int c = 0; c < di; ++c) {
          double dt0 = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
          dtb(0, c) = T(std::log(std::expm1(dt0)));
        }
        ids.dt_bias = add_param(p + ".dt_bias", std::move(dtb));
      }
      ids.d_skip = add_const(p + ".d_skip", 1, di, T(1));
      ids.w_out = add_xavier(p + ".w_out", di, dm, rng);
      ids.b_out = add_zeros(p + ".b_out", 1, dm);
      blocks_.push_back(ids);
    }
    inst_w_ = add_xavier("mil.inst_w", dm, num_classes(), rng);
    inst_b_ = add_zeros("mil.inst_b", 1, num_classes());

    if (cfg_.clinical.enabled) {
      if (schema_.fields.empty())
        throw ConfigError("model: clinical enabled but schema is empty");
      int h = cfg_.clinical.hidden_dim;
      auto dims = schema_.effective_dims();
      for (size_t k = 0; k < dims.size(); ++k) {
        std::string p = "cde.f" + std::to_string(k);
        CdeFieldIds ids;
        ids.w1 = add_xavier(p + ".w1", dims[k], h, rng);
        ids.b1 = add_zeros(p + ".b1", 1, h);
        ids.w2 = add_xavier(p + ".w2", h, h, rng);
        ids.b2 = add_zeros(p + ".b2", 1, h);
        ids.w3 = add_xavier(p + ".w3", h, h, rng);
        ids.b3 = add_zeros(p + ".b3", 1, h);
        ids.w4 = add_xavier(p + ".w4", h, dims[k], rng);
        ids.b4 = add_zeros(p + ".b4", 1, dims[k]);
        cde_.push_back(ids);
      }
      build_ffm("fuse_late", final_dim(), late_, rng);
    }

    int dz = final_dim();
    cls_w_ = add_xavier("heads.cls_w", dz, num_classes(), rng);
    cls_b_ = add_zeros("heads.cls_b", 1, num_classes());
    surv_w_ = add_xavier("heads.surv_w", dz, 1, rng);
    surv_b_ = add_zeros("heads.surv_b", 1, 1);

    penalized_ = {cls_w_, cls_b_, surv_w_, surv_b_, inst_w_, inst_b_};
    if (created_ > 0 && bound_ > 0)
      throw DataError("model: parameter store only partially matches this layout");
  }

  graph::GraphEncoderVars<T> materialize_graph(Ctx<T>& ctx) const {
    graph::GraphEncoderVars<T> v;
    auto fill = [&](const GraphLayerIds& ids, graph::GraphLayerWeights<T>& w) {
      for (int id : ids.w) w.w.push_back(ctx.use(id));
      for (int id : ids.a_src) w.a_src.push_back(ctx.use(id));
      for (int id : ids.a_dst) w.a_dst.push_back(ctx.use(id));
    };
    fill(gl1_, v.l1);
    fill(gl2_, v.l2);
    return v;
  }

  fusion::FfmVars<T> materialize_ffm(Ctx<T>& ctx, const FfmIds& ids) const {
    fusion::FfmVars<T> v;
    v.has_bias = cfg_.fusion.gate_bias;
    if (ids.gamma >= 0) v.gamma = ctx.use(ids.gamma);
    if (ids.beta >= 0) v.beta = ctx.use(ids.beta);
    if (ids.w_lin >= 0) v.w_lin = ctx.use(ids.w_lin);
    if (ids.b_lin >= 0) v.b_lin = ctx.use(ids.b_lin);
    if (ids.w_down >= 0) v.w_down = ctx.use(ids.w_down);
    if (ids.w_up >= 0) v.w_up = ctx.use(ids.w_up);
    if (ids.b_down >= 0) v.b_down = ctx.use(ids.b_down);
    if (ids.b_up >= 0) v.b_up = ctx.use(ids.b_up);
    return v;
  }

  mil::MilVars<T> materialize_mil(Ctx<T>& ctx) const {
    mil::MilVars<T> v;
    for (const auto& b : blocks_) {
      mil::MambaBlockVars<T> w;
      w.ln_gamma = ctx.use(b.ln_gamma);
      w.ln_beta = ctx.use(b.ln_beta);
      w.w_in = ctx.use(b.w_in);
      w.b_in = ctx.use(b.b_in);
      w.conv_k = ctx.use(b.conv_k);
      w.conv_b = ctx.use(b.conv_b);
      w.a_log = ctx.use(b.a_log);
      w.dt_bias = ctx.use(b.dt_bias);
      w.d_skip = ctx.use(b.d_skip);
      w.w_out = ctx.use(b.w_out);
      w.b_out = ctx.use(b.b_out);
      v.blocks.push_back(w);
    }
    v.inst_w = ctx.use(inst_w_);
    v.inst_b = ctx.use(inst_b_);
    return v;
  }

  clinical::CdeVars<T> materialize_cde(Ctx<T>& ctx) const {
    clinical::CdeVars<T> v;
    for (const auto& f : cde_) {
      clinical::CdeFieldVars<T> w;
      w.w1 = ctx.use(f.w1);
      w.b1 = ctx.use(f.b1);
      w.w2 = ctx.use(f.w2);
      w.b2 = ctx.use(f.b2);
      w.w3 = ctx.use(f.w3);
      w.b3 = ctx.use(f.b3);
      w.w4 = ctx.use(f.w4);
      w.b4 = ctx.use(f.b4);
      v.fields.push_back(w);
    }
    return v;
  }

  static ad::Var collapse_col(ad::Tape<T>& t, ad::Var cway) {
    return ad::sub(t, ad::slice_cols(t, cway, 1, 1), ad::slice_cols(t, cway, 0, 1));
  }
};

}  // namespace mmsf::model
