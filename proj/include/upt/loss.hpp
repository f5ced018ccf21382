#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "upt/tensor.hpp"

namespace upt {

// Final pair score: (s_i * s_j)^lambda * sigmoid(logit), per action.
// lambda > 1 at inference suppresses overconfident detections.
inline std::vector<double> compose_scores(double s_i, double s_j,
                                          const std::vector<double>& logits, double lambda) {
  double conf = std::pow(s_i * s_j, lambda);
  std::vector<double> out(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) {
    out[a] = conf * detail::stable_sigmoid(logits[a]);
  }
  return out;
}

// Recovers the logit of the composed score y1 * sigmoid(y2) where y1 is the
// (normalized) confidence product:
//   log( y1 / (1 + exp(-y2) - y1) + eps )
inline double recover_logit(double y1, double y2, double eps = kLogEps) {
  double denom = 1.0 + std::exp(-y2) - y1;
  return std::log(y1 / denom + eps);
}

// Tensor form for the training loss: confidence broadcasts over the action
// axis; gradient flows into the action logits only.
inline Tensor recover_logits(const Tensor& confidence, const Tensor& logits,
                             double eps = kLogEps) {
  Tensor denom = add(sub(exp(neg(logits)), confidence), 1.0);
  Tensor ratio = mul(confidence, pow(denom, -1.0));
  return log(ratio, eps);
}

// Sigmoid focal loss from logits, summed over entries where mask is 1.
// Stable for |logit| well beyond +-50: the cross-entropy term uses softplus
// and sigmoid never overflows.
inline Tensor focal_loss_sum(const Tensor& logits, const Tensor& targets, double alpha,
                             double gamma, const Tensor& mask) {
  if (logits.shape() != targets.shape() || logits.shape() != mask.shape()) {
    throw shape_error("focal loss: logits " + detail::shape_str(logits.shape()) +
                      ", targets " + detail::shape_str(targets.shape()) + " and mask " +
                      detail::shape_str(mask.shape()) + " must have equal shapes");
  }
  Tensor p = sigmoid(logits);
  Tensor pt = add(mul(targets, p), mul(rsub(1.0, targets), rsub(1.0, p)));
  Tensor alpha_t = add(mul(targets, alpha), mul(rsub(1.0, targets), 1.0 - alpha));
  Tensor ce = sub(softplus(logits), mul(targets, logits));
  Tensor focal = mul(mul(alpha_t, pow(rsub(1.0, pt), gamma)), ce);
  return sum_all(mul(focal, mask));
}

inline double positive_count(const Tensor& targets, const Tensor& mask) {
  double n = 0.0;
  const auto& t = targets.values();
  const auto& m = mask.values();
  for (std::size_t i = 0; i < t.size(); ++i) n += t[i] * m[i];
  return n;
}

// Masked focal loss normalized by the number of positives (floor 1).
inline Tensor focal_loss(const Tensor& logits, const Tensor& targets, double alpha, double gamma,
                         const Tensor& mask) {
  double npos = positive_count(targets, mask);
  return mul(focal_loss_sum(logits, targets, alpha, gamma, mask),
             1.0 / std::max(1.0, npos));
}

}  // namespace upt
