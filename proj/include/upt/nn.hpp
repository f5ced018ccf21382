#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "upt/tensor.hpp"

namespace upt {

// Named parameter registry. Registration order is the canonical checkpoint
// order; entries alias the tensors held by the layer structs.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    for (const auto& [n, _] : entries_) {
      if (n == name) throw std::logic_error("param store: duplicate name " + name);
    }
    t.set_requires_grad(true);
    entries_.emplace_back(name, std::move(t));
    return entries_.back().second;
  }

  Tensor* find(const std::string& name) {
    for (auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Uniform init in [-scale/sqrt(fan_in), scale/sqrt(fan_in)].
inline Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng,
                           double scale = 1.0) {
  double bound = scale / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(detail::shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

struct LinearParams {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

inline LinearParams make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng,
                                ParamStore& store, const std::string& name,
                                double scale = 1.0) {
  LinearParams p;
  p.weight = store.add(name + ".W", uniform_init({in, out}, in, rng, scale));
  p.bias = store.add(name + ".b", scale == 1.0 ? uniform_init({out}, in, rng)
                                               : Tensor::zeros({out}));
  return p;
}

inline Tensor apply(const LinearParams& p, const Tensor& x) {
  return linear(x, p.weight, p.bias);
}

// Fully-connected stack with ReLU between layers (none after the last).
struct MlpParams {
  std::vector<LinearParams> layers;
};

inline MlpParams make_mlp(const std::vector<std::size_t>& dims, std::mt19937_64& rng,
                          ParamStore& store, const std::string& name) {
  if (dims.size() < 2) throw std::logic_error("mlp: need at least one layer");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    p.layers.push_back(
        make_linear(dims[i], dims[i + 1], rng, store, name + "." + std::to_string(i)));
  }
  return p;
}

inline Tensor apply(const MlpParams& p, const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = apply(p.layers[i], h);
    if (i + 1 < p.layers.size()) h = relu(h);
  }
  return h;
}

struct LayerNormParams {
  Tensor gain;  // [dim]
  Tensor bias;  // [dim]
  double eps = 1e-5;
};

inline LayerNormParams make_layer_norm(std::size_t dim, ParamStore& store,
                                       const std::string& name, double eps = 1e-5) {
  LayerNormParams p;
  p.gain = store.add(name + ".g", Tensor::ones({dim}));
  p.bias = store.add(name + ".b", Tensor::zeros({dim}));
  p.eps = eps;
  return p;
}

inline Tensor apply(const LayerNormParams& p, const Tensor& x) {
  return layer_norm(x, p.gain, p.bias, p.eps);
}

}  // namespace upt
