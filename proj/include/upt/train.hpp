#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "upt/eval.hpp"
#include "upt/head.hpp"
#include "upt/loss.hpp"
#include "upt/optim.hpp"
#include "upt/pipeline.hpp"
#include "upt/synth.hpp"

namespace upt {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 20;
  std::size_t lr_drop_epoch = 10;  // zero-based epoch at which lr divides by the factor
  double lr_drop_factor = 10.0;
  std::size_t batch_size = 1;
  double lambda_train = 1.0;
  double focal_alpha = 0.5;  // stand-in defaults, config-exposed
  double focal_gamma = 2.0;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // 0 disables
  double match_iou = 0.5;  // training label assignment
  std::uint64_t seed = 0;
};

inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return epoch >= cfg.lr_drop_epoch ? cfg.lr / cfg.lr_drop_factor : cfg.lr;
}

// A pair is labeled positive for an action when some ground-truth pair of the
// same object class overlaps both boxes with min IoU above the threshold.
struct TrainExample {
  std::string image_id;
  TokenSet tokens;
  std::vector<PairIndex> pairs;
  Tensor targets;     // [K, A], 0/1
  Tensor mask;        // [K, A], valid action slots
  Tensor confidence;  // [K, 1], (s_i * s_j)^lambda_train
};

inline TrainExample build_train_example(const ImageDetections& img,
                                        const std::vector<const GroundTruthPair*>& gts,
                                        const CategoryTable& cats, const ActionValidity& validity,
                                        const FilterConfig& filter, const TrainConfig& cfg,
                                        std::size_t num_actions) {
  TrainExample ex;
  ex.image_id = img.image_id;
  ex.tokens = build_tokens(img, cats, filter);
  ex.pairs = enumerate_pairs(ex.tokens);
  std::size_t k = ex.pairs.size();
  std::vector<double> targets(k * num_actions, 0.0), mask(k * num_actions, 0.0);
  std::vector<double> conf(k, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const Detection& human = ex.tokens.detections[ex.pairs[p].i];
    const Detection& partner = ex.tokens.detections[ex.pairs[p].j];
    conf[p] = std::pow(human.score * partner.score, cfg.lambda_train);
    for (int a : validity.actions_for(partner.class_id)) {
      mask[p * num_actions + static_cast<std::size_t>(a)] = 1.0;
    }
    for (const GroundTruthPair* g : gts) {
      if (g->object_class != partner.class_id) continue;
      double overlap =
          std::min(iou(human.box, g->human_box), iou(partner.box, g->object_box));
      if (overlap > cfg.match_iou) {
        std::size_t slot = p * num_actions + static_cast<std::size_t>(g->action_id);
        if (mask[slot] != 0.0) targets[slot] = 1.0;
      }
    }
  }
  ex.targets = Tensor({k, num_actions}, std::move(targets));
  ex.mask = Tensor({k, num_actions}, std::move(mask));
  ex.confidence = Tensor({k, 1}, std::move(conf));
  return ex;
}

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based in reports
  double loss = 0.0;
  double toy_map = 0.0;
};

inline void write_metrics(const std::string& path, const std::vector<EpochMetrics>& metrics) {
  auto out = detail::open_output(path);
  for (const auto& m : metrics) {
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    j["toy_map"] = m.toy_map;
    out << j.dump() << '\n';
  }
}

// Full training loop: AdamW, step-drop LR schedule, per-epoch loss and toy
// mAP on the eval split (or the training split when none is given).
// Deterministic for a fixed seed.
inline std::vector<EpochMetrics> train(InteractionHead& head, const Dataset& data,
                                       const Dataset* eval_data, const CategoryTable& cats,
                                       const ActionValidity& validity, const FilterConfig& filter,
                                       const TrainConfig& cfg, std::ostream* log = nullptr) {
  if (data.images.empty()) throw std::invalid_argument("train: dataset is empty");
  std::size_t num_actions = head.config.num_actions;

  std::map<std::string, std::vector<const GroundTruthPair*>> gt_by_image;
  for (const auto& g : data.gt) gt_by_image[g.image_id].push_back(&g);
  std::vector<TrainExample> examples;
  for (const auto& img : data.images) {
    auto it = gt_by_image.find(img.image_id);
    static const std::vector<const GroundTruthPair*> kNone;
    examples.push_back(build_train_example(img, it == gt_by_image.end() ? kNone : it->second,
                                           cats, validity, filter, cfg, num_actions));
  }

  AdamW opt(head.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  const Dataset& eval_set = eval_data ? *eval_data : data;
  std::vector<EpochMetrics> metrics;
  std::size_t batch_size = std::max<std::size_t>(1, cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(lr_at_epoch(cfg, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::size_t end = std::min(order.size(), start + batch_size);
      Tensor batch_sum;
      double batch_pos = 0.0;
      for (std::size_t bi = start; bi < end; ++bi) {
        const TrainExample& ex = examples[order[bi]];
        if (ex.pairs.empty()) continue;
        ForwardOutput fwd = forward(head, ex.tokens);
        Tensor recovered = recover_logits(ex.confidence, fwd.logits, head.config.log_eps);
        Tensor sum = focal_loss_sum(recovered, ex.targets, cfg.focal_alpha, cfg.focal_gamma,
                                    ex.mask);
        batch_pos += positive_count(ex.targets, ex.mask);
        batch_sum = batch_sum.defined() ? add(batch_sum, sum) : sum;
      }
      if (!batch_sum.defined()) continue;
      Tensor loss = mul(batch_sum, 1.0 / std::max(1.0, batch_pos));
      double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw numeric_error("train: loss diverged (non-finite) at epoch " +
                            std::to_string(epoch + 1) + ", batch " + std::to_string(batches));
      }
      backward(loss);
      if (cfg.grad_clip > 0.0) clip_grad_norm(head.params, cfg.grad_clip);
      opt.step();
      opt.zero_grad();
      loss_total += loss_value;
      ++batches;
    }

    PipelineConfig pcfg;
    pcfg.filter = filter;
    auto preds = predict_records(head, eval_set.images, cats, validity, pcfg);
    EvalReport report = evaluate(preds, eval_set.gt, /*known_objects=*/false);

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.loss = batches ? loss_total / static_cast<double>(batches) : 0.0;
    m.toy_map = report.full_mean;
    metrics.push_back(m);
    if (log) {
      (*log) << "epoch " << m.epoch << " lr " << opt.lr() << " loss " << m.loss << " toy_map "
             << m.toy_map << std::endl;
    }
  }
  return metrics;
}

}  // namespace upt
