#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "upt/detection.hpp"

namespace upt {

// An interaction class is an (object class, action) combination.
struct InteractionClass {
  int object_class = 0;
  int action_id = 0;
  auto operator<=>(const InteractionClass&) const = default;
};

// Greedy matching for one interaction class. Predictions must be sorted by
// descending score. A prediction is a true positive iff some unconsumed
// ground-truth pair in the same image overlaps with min(IoU_h, IoU_o) above
// the threshold; each ground truth is consumed by its highest-scoring match.
inline std::vector<bool> match_class(const std::vector<const PredictionRecord*>& preds,
                                     const std::vector<const GroundTruthPair*>& gts,
                                     double iou_min = 0.5) {
  std::vector<bool> flags(preds.size(), false);
  std::vector<bool> consumed(gts.size(), false);
  for (std::size_t p = 0; p < preds.size(); ++p) {
    double best_overlap = iou_min;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (consumed[g] || gts[g]->image_id != preds[p]->image_id) continue;
      double overlap = std::min(iou(preds[p]->human_box, gts[g]->human_box),
                                iou(preds[p]->object_box, gts[g]->object_box));
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best_gt = g;
      }
    }
    if (best_gt < gts.size()) {
      consumed[best_gt] = true;
      flags[p] = true;
    }
  }
  return flags;
}

// Area under the precision-recall curve with the all-points interpolation
// (precision envelope). Flags must be in descending-score order.
inline double average_precision(const std::vector<bool>& flags, std::size_t num_gt) {
  if (num_gt == 0) {
    throw std::invalid_argument("average_precision: class with zero ground truth is excluded");
  }
  std::size_t n = flags.size();
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (flags[k]) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (flags[k]) ap += precision[k] / static_cast<double>(num_gt);
  }
  return ap;
}

// Known Objects setting: drop predictions whose object class does not occur
// in that image's ground-truth object set.
inline std::vector<PredictionRecord> known_objects_filter(
    const std::vector<PredictionRecord>& preds, const std::vector<GroundTruthPair>& gts) {
  std::map<std::string, std::set<int>> present;
  for (const auto& g : gts) present[g.image_id].insert(g.object_class);
  std::vector<PredictionRecord> out;
  for (const auto& p : preds) {
    auto it = present.find(p.image_id);
    if (it != present.end() && it->second.count(p.object_class)) out.push_back(p);
  }
  return out;
}

// Zeroes (and prunes) predictions whose action is invalid for their object
// class. Errors on object classes missing from the table.
inline std::vector<PredictionRecord> action_mask(const std::vector<PredictionRecord>& preds,
                                                 const ActionValidity& validity) {
  std::vector<PredictionRecord> out;
  for (const auto& p : preds) {
    if (validity.is_valid(p.object_class, p.action_id)) out.push_back(p);
  }
  return out;
}

struct ClassEval {
  InteractionClass cls;
  std::size_t num_gt = 0;
  std::size_t num_predictions = 0;
  double ap = 0.0;
};

struct EvalReport {
  std::string setting;  // "default" or "known-objects"
  std::vector<ClassEval> classes;
  double full_mean = 0.0;
  bool has_rare_split = false;
  double rare_mean = 0.0;
  double nonrare_mean = 0.0;
};

// mAP over interaction classes present in the ground truth.
inline EvalReport evaluate(std::vector<PredictionRecord> preds,
                           const std::vector<GroundTruthPair>& gts, bool known_objects,
                           double iou_min = 0.5,
                           const std::set<InteractionClass>* rare = nullptr) {
  EvalReport report;
  report.setting = known_objects ? "known-objects" : "default";
  if (known_objects) preds = known_objects_filter(preds, gts);

  std::map<InteractionClass, std::vector<const GroundTruthPair*>> gt_by_class;
  for (const auto& g : gts) gt_by_class[{g.object_class, g.action_id}].push_back(&g);
  std::map<InteractionClass, std::vector<const PredictionRecord*>> pred_by_class;
  for (const auto& p : preds) pred_by_class[{p.object_class, p.action_id}].push_back(&p);

  double total = 0.0, rare_total = 0.0, nonrare_total = 0.0;
  std::size_t rare_count = 0, nonrare_count = 0;
  for (const auto& [cls, class_gts] : gt_by_class) {
    auto it = pred_by_class.find(cls);
    std::vector<const PredictionRecord*> class_preds =
        it == pred_by_class.end() ? std::vector<const PredictionRecord*>{} : it->second;
    std::stable_sort(class_preds.begin(), class_preds.end(),
                     [](const PredictionRecord* a, const PredictionRecord* b) {
                       if (a->score != b->score) return a->score > b->score;
                       return prediction_less(*a, *b);
                     });
    auto flags = match_class(class_preds, class_gts, iou_min);
    ClassEval ce;
    ce.cls = cls;
    ce.num_gt = class_gts.size();
    ce.num_predictions = class_preds.size();
    ce.ap = average_precision(flags, class_gts.size());
    total += ce.ap;
    if (rare) {
      if (rare->count(cls)) {
        rare_total += ce.ap;
        ++rare_count;
      } else {
        nonrare_total += ce.ap;
        ++nonrare_count;
      }
    }
    report.classes.push_back(ce);
  }
  report.full_mean = report.classes.empty() ? 0.0 : total / report.classes.size();
  if (rare) {
    report.has_rare_split = true;
    report.rare_mean = rare_count ? rare_total / rare_count : 0.0;
    report.nonrare_mean = nonrare_count ? nonrare_total / nonrare_count : 0.0;
  }
  return report;
}

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

// Structured text report with fixed field names.
inline std::string format_report(const EvalReport& report) {
  std::string out;
  out += "setting: " + report.setting + "\n";
  out += "classes_evaluated: " + std::to_string(report.classes.size()) + "\n";
  out += "full_map: " + detail::fmt_double(report.full_mean) + "\n";
  out += "rare_map: " +
         (report.has_rare_split ? detail::fmt_double(report.rare_mean) : std::string("n/a")) +
         "\n";
  out += "nonrare_map: " +
         (report.has_rare_split ? detail::fmt_double(report.nonrare_mean) : std::string("n/a")) +
         "\n";
  for (const auto& ce : report.classes) {
    out += "class object_class=" + std::to_string(ce.cls.object_class) +
           " action_id=" + std::to_string(ce.cls.action_id) +
           " num_gt=" + std::to_string(ce.num_gt) +
           " num_predictions=" + std::to_string(ce.num_predictions) +
           " ap=" + detail::fmt_double(ce.ap) + "\n";
  }
  return out;
}

inline std::set<InteractionClass> read_rare_classes(const std::string& path) {
  auto in = detail::open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("rare-class file " + path + ": " + e.what());
  }
  std::set<InteractionClass> out;
  for (const auto& r : j.at("rare")) {
    out.insert({r.at("object_class").get<int>(), r.at("action_id").get<int>()});
  }
  return out;
}

}  // namespace upt
