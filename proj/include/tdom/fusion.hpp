#pragma once

#include <string>
#include <vector>

#include "tdom/core.hpp"
#include "tdom/nn.hpp"

namespace tdom::fusion {

using grad::Graph;
using grad::ParamStore;
using grad::Rng;
using grad::Shape;
using grad::Var;

inline constexpr int kLatentDim = 32;
inline constexpr int kFusedDim = 64;
inline constexpr int kCrossTokens = 4;   // 32-latent viewed as 4 tokens x 8
inline constexpr int kCrossHeads = 2;
inline constexpr int kFuseHeads = 8;
inline constexpr int kFfnHidden = 64;

// Observation model variant. Ours is the full multisensory encoder; the
// rest are the ablation architectures.
enum class Mode { Ours, OV, NT, NF, SL, NA };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& s);

// Fixed input normalization applied before the encoders. vis becomes
// height-above-reference in cm; the other streams are already O(1).
inline constexpr float kVisRefDepth = 0.5f;
inline constexpr float kVisScale = 100.0f;

// Column-packed batch of observations ready to become graph inputs.
struct ObsBatch {
  int n = 0;
  std::vector<float> vis, ind, thu, pro, aux;

  void append(const Observation& o) {
    ++n;
    for (float d : o.vis) vis.push_back((kVisRefDepth - d) * kVisScale);
    ind.insert(ind.end(), o.ind.begin(), o.ind.end());
    thu.insert(thu.end(), o.thu.begin(), o.thu.end());
    pro.insert(pro.end(), o.pro.begin(), o.pro.end());
    aux.insert(aux.end(), o.aux.begin(), o.aux.end());
  }
};

template <typename T>
void add_encoder_params(ParamStore<T>& ps, Rng& rng, Mode mode) {
  using namespace grad;
  add_conv(ps, rng, "vis.c1", 1, 16, 7);
  add_conv(ps, rng, "vis.c2", 16, 32, 7);
  bool touch = mode != Mode::OV && mode != Mode::NT;
  bool force = mode != Mode::OV && mode != Mode::NF;
  bool auxin = mode != Mode::OV && mode != Mode::SL;
  if (touch) {
    add_conv(ps, rng, "ind.c1", 3, 16, 7);
    add_conv(ps, rng, "ind.c2", 16, 32, 7);
    add_conv(ps, rng, "thu.c1", 3, 16, 7);
    add_conv(ps, rng, "thu.c2", 16, 32, 7);
  }
  if (force) add_linear(ps, rng, "pro.l", kProDim, kLatentDim);
  if (auxin) add_linear(ps, rng, "aux.l", kAuxDim, kLatentDim);
  if (mode == Mode::OV) {
    add_linear(ps, rng, "ov.out", kLatentDim, kFusedDim);
    return;
  }
  if (mode == Mode::NA) {
    int tokens = 5;  // vis, ind, thu, pro, aux
    add_linear(ps, rng, "na.l1", tokens * kLatentDim, kFusedDim);
    add_linear(ps, rng, "na.l2", kFusedDim, kFusedDim);
    return;
  }
  if (touch) {
    add_mha(ps, rng, "cross.a1", kLatentDim / kCrossTokens);
    add_mha(ps, rng, "cross.a2", kLatentDim / kCrossTokens);
    add_linear(ps, rng, "cross.out", kLatentDim, kLatentDim);
  }
  for (int l = 1; l <= 2; ++l) {
    std::string p = "fuse.t" + std::to_string(l);
    add_mha(ps, rng, p + ".att", kLatentDim);
    add_layer_norm(ps, p + ".ln1", kLatentDim);
    add_linear(ps, rng, p + ".ff1", kLatentDim, kFfnHidden);
    add_linear(ps, rng, p + ".ff2", kFfnHidden, kLatentDim);
    add_layer_norm(ps, p + ".ln2", kLatentDim);
  }
  add_linear(ps, rng, "fuse.out", kLatentDim, kFusedDim);
}

// conv(7x7,s2) -> relu -> conv(7x7,s2) -> relu -> adaptive mean pool
template <typename T>
Var encode_cnn(Graph<T>& g, ParamStore<T>& ps, const std::string& name,
               Var x) {
  Var h = g.relu(conv(g, ps, name + ".c1", x, 2, 3));
  h = g.relu(conv(g, ps, name + ".c2", h, 2, 3));
  return g.spatial_mean(h);  // [N,32]
}

template <typename T>
Var encode_vis(Graph<T>& g, ParamStore<T>& ps, Var vis) {
  grad::require(g.shape(vis) ==
                    Shape{g.shape(vis).d[0], 1, kVisSize, kVisSize},
                "encode_vis expects [N,1,40,40], got " + g.shape(vis).str());
  return encode_cnn(g, ps, "vis", vis);
}

template <typename T>
Var encode_touch(Graph<T>& g, ParamStore<T>& ps, const std::string& name,
                 Var field) {
  grad::require(
      g.shape(field) ==
          Shape{g.shape(field).d[0], kTouchChannels, kTouchSize, kTouchSize},
      "encode_touch expects [N,3,25,25], got " + g.shape(field).str());
  return encode_cnn(g, ps, name, field);
}

template <typename T>
Var encode_pro(Graph<T>& g, ParamStore<T>& ps, Var pro) {
  return g.relu(linear(g, ps, "pro.l", pro));
}

template <typename T>
Var encode_aux_state(Graph<T>& g, ParamStore<T>& ps, Var aux) {
  return g.relu(linear(g, ps, "aux.l", aux));
}

// Two stacked cross-attention layers with residuals; index queries thumb.
// Each 32-latent is viewed as 4 tokens x 8 dims.
template <typename T>
Var cross_attend(Graph<T>& g, ParamStore<T>& ps, Var l_ind, Var l_thu) {
  int n = g.shape(l_ind).d[0];
  int td = kLatentDim / kCrossTokens;
  Var q = g.reshape(l_ind, Shape{n, kCrossTokens, td});
  Var kv = g.reshape(l_thu, Shape{n, kCrossTokens, td});
  q = g.add(q, mha(g, ps, "cross.a1", q, kv, kCrossHeads));
  q = g.add(q, mha(g, ps, "cross.a2", q, kv, kCrossHeads));
  return linear(g, ps, "cross.out", g.reshape(q, Shape{n, kLatentDim}));
}

// Post-layer-norm transformer encoder layer over [N,T,32].
template <typename T>
Var transformer_layer(Graph<T>& g, ParamStore<T>& ps, const std::string& p,
                      Var x) {
  int n = g.shape(x).d[0], tok = g.shape(x).d[1];
  Var h = g.add(x, mha(g, ps, p + ".att", x, x, kFuseHeads));
  h = g.reshape(layer_norm(g, ps, p + ".ln1",
                           g.reshape(h, Shape{n * tok, kLatentDim})),
                Shape{n, tok, kLatentDim});
  Var f = g.reshape(h, Shape{n * tok, kLatentDim});
  f = linear(g, ps, p + ".ff2", g.relu(linear(g, ps, p + ".ff1", f)));
  Var o = g.add(h, g.reshape(f, Shape{n, tok, kLatentDim}));
  return g.reshape(layer_norm(g, ps, p + ".ln2",
                              g.reshape(o, Shape{n * tok, kLatentDim})),
                   Shape{n, tok, kLatentDim});
}

// Token sequence -> transformer x2 -> mean pool -> linear 32->64.
template <typename T>
Var fuse_tokens(Graph<T>& g, ParamStore<T>& ps,
                const std::vector<Var>& latents) {
  grad::require(!latents.empty(), "fuse of an empty token set");
  int n = g.shape(latents[0]).d[0];
  std::vector<Var> toks;
  for (Var l : latents)
    toks.push_back(g.reshape(l, Shape{n, 1, kLatentDim}));
  Var x = toks.size() == 1 ? toks[0] : g.concat(toks, 1);
  x = transformer_layer(g, ps, "fuse.t1", x);
  x = transformer_layer(g, ps, "fuse.t2", x);
  Var pooled = g.mean_axis(x, 1);  // [N,32]
  return linear(g, ps, "fuse.out", pooled);
}

// Full observation -> fused latent, honoring the mode's token set.
// Inputs: vis [N,1,40,40], ind/thu [N,3,25,25], pro [N,6], aux [N,2].
template <typename T>
Var encode_obs(Graph<T>& g, ParamStore<T>& ps, Mode mode, Var vis, Var ind,
               Var thu, Var pro, Var aux) {
  Var l_vis = encode_vis(g, ps, vis);
  if (mode == Mode::OV) return linear(g, ps, "ov.out", l_vis);
  bool touch = mode != Mode::NT;
  bool force = mode != Mode::NF;
  bool auxin = mode != Mode::SL;
  Var l_ind, l_thu, l_pro, l_aux;
  if (touch) {
    l_ind = encode_touch(g, ps, "ind", ind);
    l_thu = encode_touch(g, ps, "thu", thu);
  }
  if (force) l_pro = encode_pro(g, ps, pro);
  if (auxin) l_aux = encode_aux_state(g, ps, aux);
  if (mode == Mode::NA) {
    Var cat = g.concat({l_vis, l_ind, l_thu, l_pro, l_aux}, 1);
    return linear(g, ps, "na.l2", g.relu(linear(g, ps, "na.l1", cat)));
  }
  std::vector<Var> toks{l_vis};
  if (touch) {
    toks.push_back(l_ind);
    toks.push_back(l_thu);
    toks.push_back(cross_attend(g, ps, l_ind, l_thu));
  }
  if (force) toks.push_back(l_pro);
  if (auxin) toks.push_back(l_aux);
  return fuse_tokens(g, ps, toks);
}

// Helpers to turn an ObsBatch into graph inputs.
template <typename T>
struct ObsVars {
  Var vis, ind, thu, pro, aux;
};

template <typename T>
ObsVars<T> obs_inputs(Graph<T>& g, const ObsBatch& b) {
  auto up = [](const std::vector<float>& v) {
    if constexpr (std::is_same_v<T, float>) return v;
    else return std::vector<T>(v.begin(), v.end());
  };
  ObsVars<T> r;
  r.vis = g.constant(Shape{b.n, 1, kVisSize, kVisSize}, up(b.vis));
  r.ind = g.constant(Shape{b.n, kTouchChannels, kTouchSize, kTouchSize},
                     up(b.ind));
  r.thu = g.constant(Shape{b.n, kTouchChannels, kTouchSize, kTouchSize},
                     up(b.thu));
  r.pro = g.constant(Shape{b.n, kProDim}, up(b.pro));
  r.aux = g.constant(Shape{b.n, kAuxDim}, up(b.aux));
  return r;
}

}  // namespace tdom::fusion
