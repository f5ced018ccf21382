#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "upt/eval.hpp"
#include "upt/pipeline.hpp"
#include "upt/train.hpp"

namespace upt {

// One (pair, action) observation in a model-vs-model comparison.
struct DeltaRecord {
  std::string image_id;
  std::size_t i = 0;
  std::size_t j = 0;
  int action_id = 0;
  bool positive = false;
  double ref_score = 0.0;  // model A
  double delta = 0.0;      // model B - model A
};

struct BucketStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
};

struct DeltaTable {
  double easy_threshold = 0.05;
  BucketStats positives;
  BucketStats easy_negatives;  // reference score below the threshold
  BucketStats hard_negatives;
};

namespace detail {

inline BucketStats bucket_stats(std::vector<double> deltas) {
  BucketStats s;
  s.count = deltas.size();
  if (deltas.empty()) return s;
  double total = 0.0;
  for (double d : deltas) total += d;
  s.mean = total / static_cast<double>(deltas.size());
  std::sort(deltas.begin(), deltas.end());
  std::size_t mid = deltas.size() / 2;
  s.median = deltas.size() % 2 ? deltas[mid] : 0.5 * (deltas[mid - 1] + deltas[mid]);
  return s;
}

}  // namespace detail

// Per-pair score change when swapping model A for model B on identical
// detections. Negatives split into easy/hard by the reference (model A)
// score. Both models must see the same candidate pairs.
inline DeltaTable score_deltas(const InteractionHead& model_a, const InteractionHead& model_b,
                               const Dataset& data, const CategoryTable& cats,
                               const ActionValidity& validity, const PipelineConfig& cfg,
                               double easy_threshold = 0.05,
                               std::vector<DeltaRecord>* scatter = nullptr) {
  std::map<std::string, std::vector<const GroundTruthPair*>> gt_by_image;
  for (const auto& g : data.gt) gt_by_image[g.image_id].push_back(&g);

  std::vector<double> pos, easy, hard;
  for (const auto& img : data.images) {
    ImagePrediction pa = predict_image(model_a, img, cats, validity, cfg);
    ImagePrediction pb = predict_image(model_b, img, cats, validity, cfg);
    if (pa.pairs.size() != pb.pairs.size()) {
      throw numeric_error("score deltas: pair sets differ between models on image " +
                          img.image_id + " (preprocessing must be deterministic)");
    }
    auto git = gt_by_image.find(img.image_id);
    static const std::vector<const GroundTruthPair*> kNone;
    const auto& gts = git == gt_by_image.end() ? kNone : git->second;

    for (std::size_t k = 0; k < pa.pairs.size(); ++k) {
      const PairPrediction& a = pa.pairs[k];
      const PairPrediction& b = pb.pairs[k];
      if (a.pair != b.pair) {
        throw numeric_error("score deltas: pair ordering differs on image " + img.image_id);
      }
      for (int action : validity.actions_for(a.object_class)) {
        auto slot = static_cast<std::size_t>(action);
        bool is_positive = false;
        for (const GroundTruthPair* g : gts) {
          if (g->object_class != a.object_class || g->action_id != action) continue;
          double overlap = std::min(iou(a.human_box, g->human_box),
                                    iou(a.object_box, g->object_box));
          if (overlap > 0.5) {
            is_positive = true;
            break;
          }
        }
        double ref = a.scores[slot];
        double delta = b.scores[slot] - ref;
        if (is_positive)
          pos.push_back(delta);
        else if (ref < easy_threshold)
          easy.push_back(delta);
        else
          hard.push_back(delta);
        if (scatter) {
          scatter->push_back(
              {img.image_id, a.pair.i, a.pair.j, action, is_positive, ref, delta});
        }
      }
    }
  }
  DeltaTable table;
  table.easy_threshold = easy_threshold;
  table.positives = detail::bucket_stats(std::move(pos));
  table.easy_negatives = detail::bucket_stats(std::move(easy));
  table.hard_negatives = detail::bucket_stats(std::move(hard));
  return table;
}

inline std::string format_delta_table(const DeltaTable& t) {
  auto row = [](const char* name, const BucketStats& s) {
    return std::string(name) + " " + std::to_string(s.count) + " " + detail::fmt_double(s.mean) +
           " " + detail::fmt_double(s.median) + "\n";
  };
  std::string out = "bucket count mean median\n";
  out += row("positives", t.positives);
  out += row("easy_negatives", t.easy_negatives);
  out += row("hard_negatives", t.hard_negatives);
  return out;
}

inline void write_scatter(const std::string& path, const std::vector<DeltaRecord>& records) {
  auto out = detail::open_output(path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["image_id"] = r.image_id;
    j["i"] = r.i;
    j["j"] = r.j;
    j["action_id"] = r.action_id;
    j["positive"] = r.positive;
    j["ref"] = r.ref_score;
    j["delta"] = r.delta;
    out << j.dump() << '\n';
  }
}

// Forward pass with and without attention edits on one image.
struct InterventionOutcome {
  std::vector<PairIndex> pairs;
  std::vector<std::vector<double>> baseline;  // per pair, composed scores
  std::vector<std::vector<double>> edited;
};

inline InterventionOutcome intervene_attention(const InteractionHead& head,
                                               const ImageDetections& img,
                                               const std::vector<AttnEdit>& edits,
                                               const CategoryTable& cats,
                                               const ActionValidity& validity,
                                               const PipelineConfig& cfg) {
  ImagePrediction base = predict_image(head, img, cats, validity, cfg);
  ImagePrediction mod = predict_image(head, img, cats, validity, cfg, edits);
  InterventionOutcome out;
  for (std::size_t k = 0; k < base.pairs.size(); ++k) {
    out.pairs.push_back(base.pairs[k].pair);
    out.baseline.push_back(base.pairs[k].scores);
    out.edited.push_back(mod.pairs[k].scores);
  }
  return out;
}

// Attention export: JSON lines holding the token manifest, the pair list and
// one row-stochastic matrix per layer/head.
inline void export_attention(const InteractionHead& head, const ImageDetections& img,
                             const CategoryTable& cats, const PipelineConfig& cfg,
                             const std::string& path) {
  TokenSet tokens = build_tokens(img, cats, cfg.filter);
  NoGradGuard ng;
  ForwardOutput fwd = forward(head, tokens, {}, /*collect_attention=*/true);

  auto out = detail::open_output(path);
  {
    nlohmann::json j;
    j["kind"] = "tokens";
    j["image_id"] = img.image_id;
    auto arr = nlohmann::json::array();
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const Detection& d = tokens.detections[t];
      arr.push_back({{"index", t},
                     {"class_id", d.class_id},
                     {"score", d.score},
                     {"box", detail::box_json(d.box)}});
    }
    j["tokens"] = std::move(arr);
    out << j.dump() << '\n';
  }
  {
    nlohmann::json j;
    j["kind"] = "pairs";
    auto arr = nlohmann::json::array();
    for (const auto& p : fwd.pairs) arr.push_back({p.i, p.j});
    j["pairs"] = std::move(arr);
    out << j.dump() << '\n';
  }
  auto dump_maps = [&](const char* kind, const std::vector<std::vector<Tensor>>& layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t h = 0; h < layers[l].size(); ++h) {
        const Tensor& w = layers[l][h];
        std::size_t rows = w.shape()[0], cols = w.shape()[1];
        nlohmann::json j;
        j["kind"] = kind;
        j["layer"] = l;
        j["head"] = h;
        j["shape"] = {rows, cols};
        auto rj = nlohmann::json::array();
        for (std::size_t r = 0; r < rows; ++r) {
          auto row = nlohmann::json::array();
          for (std::size_t c = 0; c < cols; ++c) row.push_back(w.at({r, c}));
          rj.push_back(std::move(row));
        }
        j["rows"] = std::move(rj);
        out << j.dump() << '\n';
      }
    }
  };
  dump_maps("unary", fwd.attn.unary);
  dump_maps("pairwise", fwd.attn.pairwise);
}

// Parse-back of an attention export, used by tooling and round-trip tests.
struct AttentionExport {
  std::string image_id;
  std::vector<PairIndex> pairs;
  struct Map {
    std::string kind;
    std::size_t layer = 0, head = 0;
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
  };
  std::vector<Map> maps;
};

inline AttentionExport read_attention(const std::string& path) {
  auto in = detail::open_input(path);
  AttentionExport out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    auto j = detail::parse_line(text, line);
    std::string kind = detail::require_string(j, "kind", line);
    if (kind == "tokens") {
      out.image_id = detail::require_string(j, "image_id", line);
    } else if (kind == "pairs") {
      for (const auto& p : j.at("pairs")) {
        out.pairs.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
      }
    } else {
      AttentionExport::Map m;
      m.kind = kind;
      m.layer = j.at("layer").get<std::size_t>();
      m.head = j.at("head").get<std::size_t>();
      m.rows = j.at("shape").at(0).get<std::size_t>();
      m.cols = j.at("shape").at(1).get<std::size_t>();
      for (const auto& row : j.at("rows"))
        for (const auto& v : row) m.values.push_back(v.get<double>());
      out.maps.push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace upt
