#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "upt/box.hpp"
#include "upt/tensor.hpp"

namespace upt {

// One first-stage output: box, confidence, object class and query feature.
struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
  std::vector<double> feature;
};

struct ImageDetections {
  std::string image_id;
  std::vector<Detection> detections;
};

struct CategoryTable {
  struct Entry {
    int id = 0;
    std::string name;
    bool is_human = false;
  };
  std::vector<Entry> entries;

  const Entry& lookup(int class_id) const {
    for (const auto& e : entries)
      if (e.id == class_id) return e;
    throw io_error("category table: unknown class_id " + std::to_string(class_id));
  }
  bool is_human(int class_id) const { return lookup(class_id).is_human; }
  bool contains(int class_id) const {
    for (const auto& e : entries)
      if (e.id == class_id) return true;
    return false;
  }
};

// Valid action ids per object class; combinations outside the table are
// excluded from both the loss and the ranked predictions.
struct ActionValidity {
  int num_actions = 0;
  std::unordered_map<int, std::vector<int>> valid;

  const std::vector<int>& actions_for(int object_class) const {
    auto it = valid.find(object_class);
    if (it == valid.end()) {
      throw io_error("action validity: unknown object class " + std::to_string(object_class));
    }
    return it->second;
  }
  bool is_valid(int object_class, int action_id) const {
    const auto& a = actions_for(object_class);
    return std::find(a.begin(), a.end(), action_id) != a.end();
  }
};

struct FilterConfig {
  double nms_iou = 0.5;
  double score_min = 0.2;
  std::size_t min_keep = 3;
  std::size_t max_keep = 15;
  bool backfill = true;  // top up below-threshold detections to reach min_keep
};

// Greedy per-class NMS: keep by descending score, drop same-class boxes whose
// IoU with a kept box exceeds the threshold.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == dets[idx].class_id && iou(k.box, dets[idx].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

// Filtered detections in canonical order (humans first, each group by
// descending score) plus the index lists of the two groups.
struct TokenSet {
  std::vector<Detection> detections;
  std::vector<std::size_t> human_indices;
  std::vector<std::size_t> object_indices;

  std::size_t size() const { return detections.size(); }
};

struct PairIndex {
  std::size_t i = 0;  // human token
  std::size_t j = 0;  // partner token
  bool operator==(const PairIndex&) const = default;
};

namespace detail {

inline std::vector<Detection> pick_group(std::vector<Detection> group, const FilterConfig& cfg) {
  std::stable_sort(group.begin(), group.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept, below;
  for (auto& d : group) {
    if (d.score >= cfg.score_min)
      kept.push_back(std::move(d));
    else
      below.push_back(std::move(d));
  }
  if (kept.size() > cfg.max_keep) kept.resize(cfg.max_keep);
  if (cfg.backfill) {
    for (auto& d : below) {
      if (kept.size() >= cfg.min_keep) break;
      kept.push_back(std::move(d));
    }
  }
  return kept;
}

}  // namespace detail

// Score thresholding and top-k sampling, humans and objects independently.
// Input is expected to be NMS-processed already.
inline TokenSet filter_and_sample(const std::vector<Detection>& dets, const CategoryTable& cats,
                                  const FilterConfig& cfg) {
  std::vector<Detection> humans, objects;
  for (const auto& d : dets) {
    if (cats.is_human(d.class_id))
      humans.push_back(d);
    else
      objects.push_back(d);
  }
  TokenSet out;
  auto kept_h = detail::pick_group(std::move(humans), cfg);
  auto kept_o = detail::pick_group(std::move(objects), cfg);
  for (auto& d : kept_h) {
    out.human_indices.push_back(out.detections.size());
    out.detections.push_back(std::move(d));
  }
  for (auto& d : kept_o) {
    out.object_indices.push_back(out.detections.size());
    out.detections.push_back(std::move(d));
  }
  return out;
}

// All ordered pairs (i, j), i != j, where token i is human. Count is
// n_h * (n - 1); human-human pairs appear in both orders.
inline std::vector<PairIndex> enumerate_pairs(const TokenSet& tokens) {
  std::vector<PairIndex> pairs;
  pairs.reserve(tokens.human_indices.size() *
                (tokens.size() == 0 ? 0 : tokens.size() - 1));
  for (std::size_t i : tokens.human_indices)
    for (std::size_t j = 0; j < tokens.size(); ++j)
      if (j != i) pairs.push_back({i, j});
  return pairs;
}

// ---- file formats ------------------------------------------------------------
//
// Detections: one JSON object per line,
//   {"image_id": "...", "detections": [{"box": [cx,cy,w,h], "score": s,
//    "class_id": c, "feature": [...]}, ...]}
// Predictions / ground truth: one flat JSON object per line.
// See docs/formats.md for the full schemas.

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* field,
                                           std::size_t line) {
  auto it = j.find(field);
  if (it == j.end()) {
    throw io_error("line " + std::to_string(line) + ": missing field '" + field + "'");
  }
  return *it;
}

inline double require_number(const nlohmann::json& j, const char* field, std::size_t line) {
  const auto& v = require_field(j, field, line);
  if (!v.is_number()) {
    throw io_error("line " + std::to_string(line) + ": field '" + field + "' must be a number");
  }
  return v.get<double>();
}

inline int require_int(const nlohmann::json& j, const char* field, std::size_t line) {
  const auto& v = require_field(j, field, line);
  if (!v.is_number_integer()) {
    throw io_error("line " + std::to_string(line) + ": field '" + field + "' must be an integer");
  }
  return v.get<int>();
}

inline std::string require_string(const nlohmann::json& j, const char* field, std::size_t line) {
  const auto& v = require_field(j, field, line);
  if (!v.is_string()) {
    throw io_error("line " + std::to_string(line) + ": field '" + field + "' must be a string");
  }
  return v.get<std::string>();
}

inline Box parse_box(const nlohmann::json& j, const char* field, std::size_t line) {
  const auto& v = require_field(j, field, line);
  if (!v.is_array() || v.size() != 4) {
    throw io_error("line " + std::to_string(line) + ": field '" + field +
                   "' must be an array of 4 numbers [cx, cy, w, h]");
  }
  Box b{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
  if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !std::isfinite(b.w) ||
      !std::isfinite(b.h)) {
    throw io_error("line " + std::to_string(line) + ": field '" + field + "' has non-finite value");
  }
  return b;
}

inline nlohmann::json box_json(const Box& b) {
  return nlohmann::json::array({b.cx, b.cy, b.w, b.h});
}

inline nlohmann::json parse_line(const std::string& text, std::size_t line) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw io_error("line " + std::to_string(line) + ": invalid JSON");
  if (!j.is_object()) throw io_error("line " + std::to_string(line) + ": expected a JSON object");
  return j;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open file: " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write file: " + path);
  return out;
}

}  // namespace detail

inline std::vector<ImageDetections> read_detections(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<ImageDetections> out;
  std::string text;
  std::size_t line = 0;
  std::size_t feature_dim = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    auto j = detail::parse_line(text, line);
    ImageDetections img;
    img.image_id = detail::require_string(j, "image_id", line);
    const auto& arr = detail::require_field(j, "detections", line);
    if (!arr.is_array()) {
      throw io_error("line " + std::to_string(line) + ": field 'detections' must be an array");
    }
    for (const auto& dj : arr) {
      Detection d;
      d.box = detail::parse_box(dj, "box", line);
      d.score = detail::require_number(dj, "score", line);
      if (d.score < 0.0 || d.score > 1.0) {
        throw io_error("line " + std::to_string(line) + ": field 'score' must be in [0, 1]");
      }
      d.class_id = detail::require_int(dj, "class_id", line);
      const auto& fv = detail::require_field(dj, "feature", line);
      if (!fv.is_array()) {
        throw io_error("line " + std::to_string(line) + ": field 'feature' must be an array");
      }
      for (const auto& x : fv) {
        if (!x.is_number()) {
          throw io_error("line " + std::to_string(line) + ": field 'feature' has a non-number");
        }
        d.feature.push_back(x.get<double>());
      }
      if (feature_dim == 0) feature_dim = d.feature.size();
      if (d.feature.size() != feature_dim) {
        throw io_error("line " + std::to_string(line) + ": field 'feature' length " +
                       std::to_string(d.feature.size()) + " differs from earlier records (" +
                       std::to_string(feature_dim) + ")");
      }
      img.detections.push_back(std::move(d));
    }
    out.push_back(std::move(img));
  }
  return out;
}

inline void write_detections(const std::string& path, const std::vector<ImageDetections>& images) {
  auto out = detail::open_output(path);
  for (const auto& img : images) {
    nlohmann::json j;
    j["image_id"] = img.image_id;
    auto arr = nlohmann::json::array();
    for (const auto& d : img.detections) {
      nlohmann::json dj;
      dj["box"] = detail::box_json(d.box);
      dj["score"] = d.score;
      dj["class_id"] = d.class_id;
      dj["feature"] = d.feature;
      arr.push_back(std::move(dj));
    }
    j["detections"] = std::move(arr);
    out << j.dump() << '\n';
  }
}

// Ranked output record: one scored (human, object, action) triple.
struct PredictionRecord {
  std::string image_id;
  Box human_box;
  Box object_box;
  int object_class = 0;
  int action_id = 0;
  double score = 0.0;
};

// Total order used for canonical output files.
inline bool prediction_less(const PredictionRecord& a, const PredictionRecord& b) {
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.score != b.score) return a.score > b.score;
  if (a.object_class != b.object_class) return a.object_class < b.object_class;
  if (a.action_id != b.action_id) return a.action_id < b.action_id;
  auto tup = [](const PredictionRecord& p) {
    return std::array<double, 8>{p.human_box.cx, p.human_box.cy, p.human_box.w, p.human_box.h,
                                 p.object_box.cx, p.object_box.cy, p.object_box.w, p.object_box.h};
  };
  return tup(a) < tup(b);
}

inline std::vector<PredictionRecord> read_predictions(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<PredictionRecord> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    auto j = detail::parse_line(text, line);
    PredictionRecord p;
    p.image_id = detail::require_string(j, "image_id", line);
    p.human_box = detail::parse_box(j, "human_box", line);
    p.object_box = detail::parse_box(j, "object_box", line);
    p.object_class = detail::require_int(j, "object_class", line);
    p.action_id = detail::require_int(j, "action_id", line);
    p.score = detail::require_number(j, "score", line);
    out.push_back(std::move(p));
  }
  return out;
}

inline void write_predictions(const std::string& path,
                              const std::vector<PredictionRecord>& preds) {
  auto out = detail::open_output(path);
  for (const auto& p : preds) {
    nlohmann::json j;
    j["image_id"] = p.image_id;
    j["human_box"] = detail::box_json(p.human_box);
    j["object_box"] = detail::box_json(p.object_box);
    j["object_class"] = p.object_class;
    j["action_id"] = p.action_id;
    j["score"] = p.score;
    out << j.dump() << '\n';
  }
}

// Labeled pair, the unit of the mAP protocol.
struct GroundTruthPair {
  std::string image_id;
  Box human_box;
  Box object_box;
  int object_class = 0;
  int action_id = 0;
};

inline std::vector<GroundTruthPair> read_groundtruth(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<GroundTruthPair> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    auto j = detail::parse_line(text, line);
    GroundTruthPair g;
    g.image_id = detail::require_string(j, "image_id", line);
    g.human_box = detail::parse_box(j, "human_box", line);
    g.object_box = detail::parse_box(j, "object_box", line);
    g.object_class = detail::require_int(j, "object_class", line);
    g.action_id = detail::require_int(j, "action_id", line);
    out.push_back(std::move(g));
  }
  return out;
}

inline void write_groundtruth(const std::string& path,
                              const std::vector<GroundTruthPair>& gts) {
  auto out = detail::open_output(path);
  for (const auto& g : gts) {
    nlohmann::json j;
    j["image_id"] = g.image_id;
    j["human_box"] = detail::box_json(g.human_box);
    j["object_box"] = detail::box_json(g.object_box);
    j["object_class"] = g.object_class;
    j["action_id"] = g.action_id;
    out << j.dump() << '\n';
  }
}

inline CategoryTable read_categories(const std::string& path) {
  auto in = detail::open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("category table " + path + ": " + e.what());
  }
  CategoryTable table;
  const auto& arr = detail::require_field(j, "categories", 1);
  if (!arr.is_array()) throw io_error("category table: 'categories' must be an array");
  for (const auto& cj : arr) {
    CategoryTable::Entry e;
    e.id = detail::require_int(cj, "id", 1);
    e.name = detail::require_string(cj, "name", 1);
    const auto& hv = detail::require_field(cj, "is_human", 1);
    if (!hv.is_boolean()) throw io_error("category table: field 'is_human' must be a boolean");
    e.is_human = hv.get<bool>();
    table.entries.push_back(std::move(e));
  }
  return table;
}

inline void write_categories(const std::string& path, const CategoryTable& table) {
  auto out = detail::open_output(path);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : table.entries) {
    arr.push_back({{"id", e.id}, {"name", e.name}, {"is_human", e.is_human}});
  }
  out << nlohmann::json{{"categories", arr}}.dump(2) << '\n';
}

inline ActionValidity read_action_validity(const std::string& path) {
  auto in = detail::open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw io_error("action validity " + path + ": " + e.what());
  }
  ActionValidity v;
  v.num_actions = detail::require_int(j, "num_actions", 1);
  const auto& arr = detail::require_field(j, "validity", 1);
  if (!arr.is_array()) throw io_error("action validity: 'validity' must be an array");
  for (const auto& vj : arr) {
    int cls = detail::require_int(vj, "object_class", 1);
    const auto& actions = detail::require_field(vj, "actions", 1);
    if (!actions.is_array()) throw io_error("action validity: field 'actions' must be an array");
    std::vector<int> ids;
    for (const auto& a : actions) {
      int id = a.get<int>();
      if (id < 0 || id >= v.num_actions) {
        throw io_error("action validity: action id " + std::to_string(id) +
                       " outside [0, num_actions)");
      }
      ids.push_back(id);
    }
    v.valid[cls] = std::move(ids);
  }
  return v;
}

inline void write_action_validity(const std::string& path, const ActionValidity& v) {
  auto out = detail::open_output(path);
  nlohmann::json arr = nlohmann::json::array();
  std::vector<int> classes;
  for (const auto& [cls, _] : v.valid) classes.push_back(cls);
  std::sort(classes.begin(), classes.end());
  for (int cls : classes) {
    arr.push_back({{"object_class", cls}, {"actions", v.valid.at(cls)}});
  }
  out << nlohmann::json{{"num_actions", v.num_actions}, {"validity", arr}}.dump(2) << '\n';
}

}  // namespace upt
