#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "upt/box.hpp"
#include "upt/nn.hpp"
#include "upt/tensor.hpp"

namespace upt {

// Pairwise box positional encodings: an MLP over the unary and pairwise
// spatial terms of an ordered box pair, concatenated with their guarded logs.
struct SpatialEncoderConfig {
  std::size_t out_dim = 256;
  std::size_t hidden_dim = 0;     // 0 -> out_dim
  bool include_pairwise = true;   // false drops the 6 pairwise terms from the input
  double log_eps = kLogEps;
};

inline std::size_t spatial_input_dim(const SpatialEncoderConfig& cfg) {
  return 2 * (cfg.include_pairwise ? 18 : 12);
}

// Raw MLP input for one ordered pair: (u ++ p) ++ log(u ++ p + eps).
inline std::vector<double> spatial_input(const Box& human, const Box& partner,
                                         const SpatialEncoderConfig& cfg) {
  std::vector<double> base;
  auto u = unary_terms(human, partner);
  base.insert(base.end(), u.begin(), u.end());
  if (cfg.include_pairwise) {
    auto p = pairwise_terms(human, partner);
    base.insert(base.end(), p.begin(), p.end());
  }
  std::vector<double> full = base;
  for (double v : base) full.push_back(std::log(v + cfg.log_eps));
  return full;
}

struct SpatialEncoder {
  SpatialEncoderConfig config;
  MlpParams mlp;  // input_dim -> hidden -> out_dim, ReLU between
};

inline SpatialEncoder make_spatial_encoder(const SpatialEncoderConfig& cfg, std::mt19937_64& rng,
                                           ParamStore& store, const std::string& name) {
  SpatialEncoder enc;
  enc.config = cfg;
  std::size_t hidden = cfg.hidden_dim ? cfg.hidden_dim : cfg.out_dim;
  enc.mlp = make_mlp({spatial_input_dim(cfg), hidden, cfg.out_dim}, rng, store, name);
  return enc;
}

// Encoding for a single ordered pair; shape [m].
inline Tensor encode_pair(const SpatialEncoder& enc, const Box& human, const Box& partner) {
  auto in = spatial_input(human, partner, enc.config);
  std::size_t dim = in.size();
  Tensor x(Shape{1, dim}, std::move(in));
  return reshape(apply(enc.mlp, x), {enc.config.out_dim});
}

// Encodings for all ordered pairs of a box list; shape [n*n, m], row i*n+j
// holding the encoding of (boxes[i], boxes[j]).
inline Tensor encode_all_pairs(const SpatialEncoder& enc, const std::vector<Box>& boxes) {
  std::size_t n = boxes.size();
  std::size_t d = spatial_input_dim(enc.config);
  std::vector<double> rows;
  rows.reserve(n * n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      auto in = spatial_input(boxes[i], boxes[j], enc.config);
      rows.insert(rows.end(), in.begin(), in.end());
    }
  Tensor x(Shape{n * n, d}, std::move(rows));
  return apply(enc.mlp, x);
}

}  // namespace upt
