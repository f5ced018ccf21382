#pragma once

#include <atomic>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "upt/checkpoint.hpp"
#include "upt/detection.hpp"
#include "upt/head.hpp"
#include "upt/loss.hpp"

namespace upt {

struct PipelineConfig {
  FilterConfig filter;
  double lambda = 2.8;  // confidence exponent at inference
  std::size_t workers = 1;
};

// Scored candidate pair: composed per-action scores with invalid
// action/object combinations zeroed, plus the raw action logits.
struct PairPrediction {
  PairIndex pair;
  Box human_box;
  Box object_box;
  int object_class = 0;
  std::vector<double> scores;
  std::vector<double> raw_logits;
};

struct ImagePrediction {
  std::string image_id;
  TokenSet tokens;
  std::vector<PairPrediction> pairs;
};

inline TokenSet build_tokens(const ImageDetections& img, const CategoryTable& cats,
                             const FilterConfig& cfg) {
  return filter_and_sample(nms(img.detections, cfg.nms_iou), cats, cfg);
}

// Forward pass plus score composition and inference-time action masking.
inline ImagePrediction predict_image(const InteractionHead& head, const ImageDetections& img,
                                     const CategoryTable& cats, const ActionValidity& validity,
                                     const PipelineConfig& cfg,
                                     const std::vector<AttnEdit>& edits = {},
                                     AttentionMaps* attn_out = nullptr) {
  ImagePrediction out;
  out.image_id = img.image_id;
  out.tokens = build_tokens(img, cats, cfg.filter);
  NoGradGuard ng;
  ForwardOutput fwd = forward(head, out.tokens, edits, attn_out != nullptr);
  if (attn_out) *attn_out = fwd.attn;
  std::size_t num_actions = head.config.num_actions;
  for (std::size_t k = 0; k < fwd.pairs.size(); ++k) {
    const PairIndex& p = fwd.pairs[k];
    const Detection& human = out.tokens.detections[p.i];
    const Detection& partner = out.tokens.detections[p.j];
    PairPrediction pp;
    pp.pair = p;
    pp.human_box = human.box;
    pp.object_box = partner.box;
    pp.object_class = partner.class_id;
    pp.raw_logits.assign(fwd.logits.values().begin() + k * num_actions,
                         fwd.logits.values().begin() + (k + 1) * num_actions);
    pp.scores = compose_scores(human.score, partner.score, pp.raw_logits, cfg.lambda);
    for (std::size_t a = 0; a < num_actions; ++a) {
      if (!validity.is_valid(pp.object_class, static_cast<int>(a))) pp.scores[a] = 0.0;
    }
    out.pairs.push_back(std::move(pp));
  }
  return out;
}

// Flattens one image's pair predictions into ranked records; invalid
// action slots are pruned.
inline std::vector<PredictionRecord> to_records(const ImagePrediction& img,
                                                const ActionValidity& validity) {
  std::vector<PredictionRecord> out;
  for (const auto& pp : img.pairs) {
    for (int a : validity.actions_for(pp.object_class)) {
      PredictionRecord r;
      r.image_id = img.image_id;
      r.human_box = pp.human_box;
      r.object_box = pp.object_box;
      r.object_class = pp.object_class;
      r.action_id = a;
      r.score = pp.scores[static_cast<std::size_t>(a)];
      out.push_back(std::move(r));
    }
  }
  return out;
}

// Batch inference over images, parallel per image, output in canonical order
// independent of the worker count.
inline std::vector<PredictionRecord> predict_records(
    const InteractionHead& head, const std::vector<ImageDetections>& images,
    const CategoryTable& cats, const ActionValidity& validity, const PipelineConfig& cfg) {
  std::vector<std::vector<PredictionRecord>> per_image(images.size());
  std::size_t workers = std::max<std::size_t>(1, cfg.workers);
  if (workers == 1 || images.size() <= 1) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      per_image[i] = to_records(predict_image(head, images[i], cats, validity, cfg), validity);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&]() {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= images.size()) return;
        try {
          per_image[i] =
              to_records(predict_image(head, images[i], cats, validity, cfg), validity);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }
  std::vector<PredictionRecord> all;
  for (auto& v : per_image)
    for (auto& r : v) all.push_back(std::move(r));
  std::sort(all.begin(), all.end(), prediction_less);
  return all;
}

}  // namespace upt
