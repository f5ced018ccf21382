#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "upt/detection.hpp"
#include "upt/nn.hpp"
#include "upt/spatial.hpp"
#include "upt/tensor.hpp"

namespace upt {

// Cooperative-layer implementations. "modified" injects the pairwise box
// positional encodings into both the values and the attention weights;
// the vanilla variants use standard scaled dot-product attention.
enum class CoopVariant { modified, vanilla, vanilla_add_pe, modified_no_pairwise };

inline const char* to_string(CoopVariant v) {
  switch (v) {
    case CoopVariant::modified: return "modified";
    case CoopVariant::vanilla: return "vanilla";
    case CoopVariant::vanilla_add_pe: return "vanilla_add_pe";
    case CoopVariant::modified_no_pairwise: return "modified_no_pairwise";
  }
  return "modified";
}

inline CoopVariant coop_variant_from_string(const std::string& s) {
  if (s == "modified") return CoopVariant::modified;
  if (s == "vanilla") return CoopVariant::vanilla;
  if (s == "vanilla_add_pe") return CoopVariant::vanilla_add_pe;
  if (s == "modified_no_pairwise") return CoopVariant::modified_no_pairwise;
  throw io_error("unknown cooperative-layer variant: " + s);
}

struct HeadConfig {
  std::size_t feature_dim = 256;  // m
  std::size_t heads = 8;          // h
  std::size_t coop_layers = 2;
  std::size_t comp_layers = 1;
  std::size_t branches = 8;       // B, multi-branch fusion
  std::size_t num_actions = 0;
  std::size_t ffn_dim = 0;        // 0 -> 2m
  CoopVariant variant = CoopVariant::modified;
  double log_eps = kLogEps;
  double ln_eps = 1e-5;

  std::size_t ffn() const { return ffn_dim ? ffn_dim : 2 * feature_dim; }

  void validate() const {
    if (feature_dim == 0 || heads == 0 || branches == 0) {
      throw std::invalid_argument("head config: feature_dim, heads and branches must be positive");
    }
    if (feature_dim % heads != 0) {
      throw std::invalid_argument("head config: feature_dim " + std::to_string(feature_dim) +
                                  " not divisible by heads " + std::to_string(heads));
    }
    if (feature_dim % branches != 0) {
      throw std::invalid_argument("head config: feature_dim " + std::to_string(feature_dim) +
                                  " not divisible by branches " + std::to_string(branches));
    }
    if (num_actions == 0) throw std::invalid_argument("head config: num_actions must be positive");
  }
};

// Modified transformer encoder layer. Per head, the attention logit for the
// ordered pair (i, j) is a scalar projection of x_i ++ x_j ++ y_ij, and the
// value is x_j (*) y_ij; softmax runs over j.
struct ModifiedEncoderLayer {
  std::vector<Tensor> attn_w;  // per head [3*dh, 1]
  std::vector<Tensor> attn_b;  // per head [1]
  LinearParams out_proj;
  LayerNormParams ln1, ln2;
  LinearParams ffn1, ffn2;
};

// Standard pre-LN-free (post-norm) transformer encoder layer.
struct StdEncoderLayer {
  LinearParams q, k, v, out;
  LayerNormParams ln1, ln2;
  LinearParams ffn1, ffn2;
};

// Multi-branch fusion. Each branch projects both modalities into a reduced
// space of width m/B, multiplies elementwise, applies ReLU and projects back;
// branches are summed and a single shared output bias is added, which keeps
// the parameter count independent of B.
struct MbfBlock {
  std::vector<LinearParams> x_proj;  // per branch [2m, m/B]
  std::vector<LinearParams> y_proj;  // per branch [m, m/B]
  std::vector<Tensor> out_proj;      // per branch [m/B, m]
  Tensor out_bias;                   // [m], shared
};

// Attention intervention. Layers are indexed through the whole stack:
// 0..coop_layers-1 are cooperative (token indices), the rest competitive
// (pair indices). neg_inf zeroes a weight through the softmax; set_weight
// overwrites it after the softmax without re-normalizing the row.
struct AttnEdit {
  enum class Kind { neg_inf, set_weight };
  std::size_t layer = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  Kind kind = Kind::neg_inf;
  double weight = 0.0;
};

struct AttentionMaps {
  std::vector<std::vector<Tensor>> unary;     // [coop layer][head], n x n
  std::vector<std::vector<Tensor>> pairwise;  // [comp layer][head], K x K
};

struct ForwardOutput {
  std::vector<PairIndex> pairs;
  Tensor logits;  // [K, num_actions]
  AttentionMaps attn;
};

struct InteractionHead {
  HeadConfig config;
  ParamStore params;
  SpatialEncoder spatial;
  MlpParams add_pe;  // vanilla_add_pe only: single-box terms -> m
  std::vector<ModifiedEncoderLayer> coop_modified;
  std::vector<StdEncoderLayer> coop_vanilla;
  std::vector<StdEncoderLayer> comp;
  MbfBlock mbf;
  MlpParams logit_mlp;
};

namespace detail {

inline ModifiedEncoderLayer make_modified_layer(const HeadConfig& cfg, std::mt19937_64& rng,
                                                ParamStore& store, const std::string& name) {
  ModifiedEncoderLayer L;
  std::size_t dh = cfg.feature_dim / cfg.heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    std::string hn = name + ".attn.h" + std::to_string(h);
    L.attn_w.push_back(store.add(hn + ".w", uniform_init({3 * dh, 1}, 3 * dh, rng)));
    L.attn_b.push_back(store.add(hn + ".b", uniform_init({1}, 3 * dh, rng)));
  }
  L.out_proj = make_linear(cfg.feature_dim, cfg.feature_dim, rng, store, name + ".attn.out");
  L.ln1 = make_layer_norm(cfg.feature_dim, store, name + ".ln1", cfg.ln_eps);
  L.ffn1 = make_linear(cfg.feature_dim, cfg.ffn(), rng, store, name + ".ffn.0");
  L.ffn2 = make_linear(cfg.ffn(), cfg.feature_dim, rng, store, name + ".ffn.1");
  L.ln2 = make_layer_norm(cfg.feature_dim, store, name + ".ln2", cfg.ln_eps);
  return L;
}

inline StdEncoderLayer make_std_layer(const HeadConfig& cfg, std::mt19937_64& rng,
                                      ParamStore& store, const std::string& name) {
  StdEncoderLayer L;
  L.q = make_linear(cfg.feature_dim, cfg.feature_dim, rng, store, name + ".attn.q");
  L.k = make_linear(cfg.feature_dim, cfg.feature_dim, rng, store, name + ".attn.k");
  L.v = make_linear(cfg.feature_dim, cfg.feature_dim, rng, store, name + ".attn.v");
  L.out = make_linear(cfg.feature_dim, cfg.feature_dim, rng, store, name + ".attn.out");
  L.ln1 = make_layer_norm(cfg.feature_dim, store, name + ".ln1", cfg.ln_eps);
  L.ffn1 = make_linear(cfg.feature_dim, cfg.ffn(), rng, store, name + ".ffn.0");
  L.ffn2 = make_linear(cfg.ffn(), cfg.feature_dim, rng, store, name + ".ffn.1");
  L.ln2 = make_layer_norm(cfg.feature_dim, store, name + ".ln2", cfg.ln_eps);
  return L;
}

inline MbfBlock make_mbf(const HeadConfig& cfg, std::mt19937_64& rng, ParamStore& store) {
  MbfBlock mbf;
  std::size_t m = cfg.feature_dim, sub = m / cfg.branches;
  for (std::size_t b = 0; b < cfg.branches; ++b) {
    std::string bn = "mbf." + std::to_string(b);
    mbf.x_proj.push_back(make_linear(2 * m, sub, rng, store, bn + ".x"));
    mbf.y_proj.push_back(make_linear(m, sub, rng, store, bn + ".y"));
    mbf.out_proj.push_back(store.add(bn + ".out.W", uniform_init({sub, m}, sub, rng)));
  }
  mbf.out_bias = store.add("mbf.bias", uniform_init({m}, m / cfg.branches, rng));
  return mbf;
}

inline void check_finite(const Tensor& t, const std::string& where) {
  if (!t.all_finite()) throw numeric_error(where + ": non-finite values detected");
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline std::vector<std::pair<std::size_t, std::size_t>> edit_positions(
    const std::vector<AttnEdit>& edits, std::size_t layer, AttnEdit::Kind kind,
    std::size_t extent) {
  std::vector<std::pair<std::size_t, std::size_t>> pos;
  for (const auto& e : edits) {
    if (e.layer != layer || e.kind != kind) continue;
    if (e.i >= extent || e.j >= extent) {
      throw std::out_of_range("attention edit: index (" + std::to_string(e.i) + ", " +
                              std::to_string(e.j) + ") out of range for extent " +
                              std::to_string(extent));
    }
    pos.push_back({e.i, e.j});
  }
  return pos;
}

}  // namespace detail

inline InteractionHead make_interaction_head(const HeadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  InteractionHead head;
  head.config = cfg;
  std::mt19937_64 rng(seed);

  SpatialEncoderConfig scfg;
  scfg.out_dim = cfg.feature_dim;
  scfg.include_pairwise = cfg.variant != CoopVariant::modified_no_pairwise;
  scfg.log_eps = cfg.log_eps;
  head.spatial = make_spatial_encoder(scfg, rng, head.params, "spatial");

  if (cfg.variant == CoopVariant::vanilla_add_pe) {
    head.add_pe = make_mlp({6, cfg.feature_dim, cfg.feature_dim}, rng, head.params, "addpe");
  }

  bool modified_coop = cfg.variant == CoopVariant::modified ||
                       cfg.variant == CoopVariant::modified_no_pairwise;
  for (std::size_t l = 0; l < cfg.coop_layers; ++l) {
    std::string name = "coop." + std::to_string(l);
    if (modified_coop) {
      head.coop_modified.push_back(detail::make_modified_layer(cfg, rng, head.params, name));
    } else {
      head.coop_vanilla.push_back(detail::make_std_layer(cfg, rng, head.params, name));
    }
  }
  head.mbf = detail::make_mbf(cfg, rng, head.params);
  for (std::size_t l = 0; l < cfg.comp_layers; ++l) {
    head.comp.push_back(detail::make_std_layer(cfg, rng, head.params, "comp." + std::to_string(l)));
  }
  head.logit_mlp = make_mlp({cfg.feature_dim, cfg.feature_dim, cfg.num_actions}, rng, head.params,
                            "logit_mlp");
  return head;
}

// One modified encoder layer over unary tokens.
//   X: [n, m]; y_pairs: [n*n, m] with row i*n+j = y_ij.
inline Tensor cooperative_layer(const ModifiedEncoderLayer& L, const Tensor& X,
                                const Tensor& y_pairs, std::size_t heads,
                                const std::vector<AttnEdit>& edits, std::size_t layer_index,
                                std::vector<Tensor>* attn_out = nullptr) {
  std::size_t n = X.shape()[0], m = X.shape()[1];
  std::size_t dh = m / heads;
  Tensor Y = reshape(y_pairs, {n, n, m});
  auto ninf_pos = detail::edit_positions(edits, layer_index, AttnEdit::Kind::neg_inf, n);
  std::vector<const AttnEdit*> weight_edits;
  for (const auto& e : edits)
    if (e.layer == layer_index && e.kind == AttnEdit::Kind::set_weight) {
      detail::edit_positions({e}, layer_index, AttnEdit::Kind::set_weight, n);
      weight_edits.push_back(&e);
    }

  std::vector<Tensor> head_ctx;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor Xh = slice_last(X, h * dh, dh);        // [n, dh]
    Tensor Yh = slice_last(Y, h * dh, dh);        // [n, n, dh]
    Tensor dup = duplicate_rows(Xh);              // [n, n, dh], dup[i, j] = x_j
    Tensor pc = pairwise_concat(Xh);              // [n, n, 2*dh], pc[i, j] = x_i ++ x_j
    Tensor attn_in = concat({pc, Yh}, 2);         // [n, n, 3*dh]
    Tensor logits = reshape(
        add(matmul(reshape(attn_in, {n * n, 3 * dh}), L.attn_w[h]), L.attn_b[h]), {n, n});
    if (!ninf_pos.empty()) logits = set_entries(logits, ninf_pos, detail::kNegInf);
    Tensor W = softmax(logits, 1);
    for (const AttnEdit* e : weight_edits) W = set_entries(W, {{e->i, e->j}}, e->weight);
    if (attn_out) attn_out->push_back(W);
    Tensor V = mul(dup, Yh);                      // [n, n, dh]
    Tensor ctx = sum(mul(reshape(W, {n, n, 1}), V), 1);  // [n, dh]
    head_ctx.push_back(ctx);
  }
  Tensor attn = apply(L.out_proj, heads == 1 ? head_ctx[0] : concat(head_ctx, 1));
  Tensor x1 = apply(L.ln1, add(X, attn));
  Tensor ff = apply(L.ffn2, relu(apply(L.ffn1, x1)));
  Tensor out = apply(L.ln2, add(x1, ff));
  detail::check_finite(out, "cooperative layer " + std::to_string(layer_index));
  return out;
}

// One standard encoder layer (scaled dot-product self-attention). Optional
// additive positional encodings are applied to queries and keys only.
inline Tensor standard_encoder_layer(const StdEncoderLayer& L, const Tensor& Z, std::size_t heads,
                                     const std::vector<AttnEdit>& edits, std::size_t layer_index,
                                     std::vector<Tensor>* attn_out = nullptr,
                                     const Tensor* additive_pe = nullptr,
                                     const char* what = "competitive layer") {
  std::size_t k = Z.shape()[0], m = Z.shape()[1];
  std::size_t dh = m / heads;
  Tensor Zqk = additive_pe ? add(Z, *additive_pe) : Z;
  Tensor Q = apply(L.q, Zqk), Kt = apply(L.k, Zqk), V = apply(L.v, Z);
  auto ninf_pos = detail::edit_positions(edits, layer_index, AttnEdit::Kind::neg_inf, k);
  std::vector<const AttnEdit*> weight_edits;
  for (const auto& e : edits)
    if (e.layer == layer_index && e.kind == AttnEdit::Kind::set_weight) {
      detail::edit_positions({e}, layer_index, AttnEdit::Kind::set_weight, k);
      weight_edits.push_back(&e);
    }

  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_ctx;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor Qh = slice_last(Q, h * dh, dh);
    Tensor Kh = slice_last(Kt, h * dh, dh);
    Tensor Vh = slice_last(V, h * dh, dh);
    Tensor logits = mul(matmul(Qh, transpose(Kh)), scale);  // [k, k]
    if (!ninf_pos.empty()) logits = set_entries(logits, ninf_pos, detail::kNegInf);
    Tensor W = softmax(logits, 1);
    for (const AttnEdit* e : weight_edits) W = set_entries(W, {{e->i, e->j}}, e->weight);
    if (attn_out) attn_out->push_back(W);
    head_ctx.push_back(matmul(W, Vh));  // [k, dh]
  }
  Tensor attn = apply(L.out, heads == 1 ? head_ctx[0] : concat(head_ctx, 1));
  Tensor z1 = apply(L.ln1, add(Z, attn));
  Tensor ff = apply(L.ffn2, relu(apply(L.ffn1, z1)));
  Tensor out = apply(L.ln2, add(z1, ff));
  detail::check_finite(out, std::string(what) + " " + std::to_string(layer_index));
  return out;
}

// Multi-branch fusion of pair features xx [K, 2m] and encodings y [K, m].
inline Tensor mbf(const MbfBlock& block, const Tensor& xx, const Tensor& y) {
  Tensor acc;
  for (std::size_t b = 0; b < block.x_proj.size(); ++b) {
    Tensor hidden = relu(mul(apply(block.x_proj[b], xx), apply(block.y_proj[b], y)));
    Tensor z = matmul(hidden, block.out_proj[b]);
    acc = acc.defined() ? add(acc, z) : z;
  }
  return add(acc, block.out_bias);
}

// Per-token single-box terms for the additive-PE variant: [cx, cy, w, h, wh, w/h].
inline Tensor additive_pe_input(const std::vector<Box>& boxes) {
  std::vector<double> rows;
  rows.reserve(boxes.size() * 6);
  for (const Box& b : boxes) {
    double w = std::max(b.w, kMinBoxExtent), h = std::max(b.h, kMinBoxExtent);
    rows.insert(rows.end(), {b.cx, b.cy, b.w, b.h, w * h, w / h});
  }
  return Tensor(Shape{boxes.size(), 6}, std::move(rows));
}

// Full interaction-head forward pass:
//   coop layers over unary tokens -> pair enumeration -> MBF fusion with the
//   same positional encodings -> comp layers -> action-logit MLP.
inline ForwardOutput forward(const InteractionHead& head, const TokenSet& tokens,
                             const std::vector<AttnEdit>& edits = {},
                             bool collect_attention = false) {
  const HeadConfig& cfg = head.config;
  std::size_t n = tokens.size();
  std::size_t m = cfg.feature_dim;
  ForwardOutput out;
  if (n == 0) {
    out.logits = Tensor::zeros({0, cfg.num_actions});
    return out;
  }
  for (const auto& e : edits) {
    if (e.layer >= cfg.coop_layers + cfg.comp_layers) {
      throw std::out_of_range("attention edit: layer " + std::to_string(e.layer) +
                              " out of range for stack of " +
                              std::to_string(cfg.coop_layers + cfg.comp_layers));
    }
  }

  std::vector<double> feat;
  feat.reserve(n * m);
  std::vector<Box> boxes;
  for (const auto& d : tokens.detections) {
    if (d.feature.size() != m) {
      throw shape_error("forward: detection feature length " + std::to_string(d.feature.size()) +
                        " does not match configured feature_dim " + std::to_string(m));
    }
    feat.insert(feat.end(), d.feature.begin(), d.feature.end());
    boxes.push_back(d.box);
  }
  Tensor X(Shape{n, m}, std::move(feat));
  Tensor y_pairs = encode_all_pairs(head.spatial, boxes);  // [n*n, m]

  bool modified_coop = cfg.variant == CoopVariant::modified ||
                       cfg.variant == CoopVariant::modified_no_pairwise;
  Tensor token_pe;
  if (cfg.variant == CoopVariant::vanilla_add_pe) {
    token_pe = apply(head.add_pe, additive_pe_input(boxes));
  }
  for (std::size_t l = 0; l < cfg.coop_layers; ++l) {
    std::vector<Tensor> maps;
    std::vector<Tensor>* maps_ptr = collect_attention ? &maps : nullptr;
    if (modified_coop) {
      X = cooperative_layer(head.coop_modified[l], X, y_pairs, cfg.heads, edits, l, maps_ptr);
    } else {
      X = standard_encoder_layer(head.coop_vanilla[l], X, cfg.heads, edits, l, maps_ptr,
                                 token_pe.defined() ? &token_pe : nullptr, "cooperative layer");
    }
    if (collect_attention) out.attn.unary.push_back(std::move(maps));
  }

  out.pairs = enumerate_pairs(tokens);
  std::size_t num_pairs = out.pairs.size();
  if (num_pairs == 0) {
    out.logits = Tensor::zeros({0, cfg.num_actions});
    return out;
  }
  std::vector<std::size_t> hum, par, flat;
  for (const auto& p : out.pairs) {
    hum.push_back(p.i);
    par.push_back(p.j);
    flat.push_back(p.i * n + p.j);
  }
  Tensor xx = concat({gather_rows(X, hum), gather_rows(X, par)}, 1);  // [K, 2m]
  Tensor y_sel = gather_rows(y_pairs, flat);                          // [K, m]
  Tensor Z = mbf(head.mbf, xx, y_sel);

  for (std::size_t l = 0; l < cfg.comp_layers; ++l) {
    std::vector<Tensor> maps;
    std::vector<Tensor>* maps_ptr = collect_attention ? &maps : nullptr;
    Z = standard_encoder_layer(head.comp[l], Z, cfg.heads, edits, cfg.coop_layers + l, maps_ptr);
    if (collect_attention) out.attn.pairwise.push_back(std::move(maps));
  }
  out.logits = apply(head.logit_mlp, Z);  // [K, num_actions]
  return out;
}

}  // namespace upt
