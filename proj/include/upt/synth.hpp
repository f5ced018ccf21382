#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "upt/config.hpp"
#include "upt/detection.hpp"

namespace upt {

struct Dataset {
  std::vector<ImageDetections> images;
  std::vector<GroundTruthPair> gt;
};

// Synthetic HOI scenes for desk-scale training. Each engaged object gets a
// true human partner placed close by (high IoU, weak action-signature
// features on both tokens) plus a strongly action-typed context detection
// next to the pair, so the action identity is carried mostly by a third
// token that only cross-token attention can pool into the pair. Engaged
// objects also attract, with some probability, a nearby distractor human
// with no signature, producing hard negative pairs that candidate
// comparison has to separate.
struct SynthSpec {
  std::size_t train_images = 500;
  std::size_t test_images = 150;
  std::size_t num_actions = 3;
  std::size_t num_object_classes = 3;
  std::size_t feature_dim = 32;
  std::size_t objects_min = 2;
  std::size_t objects_max = 3;
  std::size_t max_humans = 5;
  double interaction_prob = 0.75;  // object is engaged by a human
  double distractor_prob = 0.6;    // engaged object also attracts a distractor human
  double marked_distractor_prob = 0.5;  // distractor carries the interactivity marker;
                                        // only comparison with the true partner separates it
  double background_human_prob = 0.5;
  double context_prob = 1.0;       // engaged pair gets an action-typed context token
  double twin_prob = 0.15;         // engaged pair gets a same-action twin pair next to it
  double conflict_prob = 0.35;     // engagement becomes a preference-conflict cluster
  double partner_offset_lo = 0.01;  // human-to-object center offset of a true pair
  double partner_offset_hi = 0.10;
  double twin_offset_lo = 0.10;  // separation between twin interactions; overlaps the
  double twin_offset_hi = 0.22;  // partner range so cross pairs are geometrically plausible
  double feature_noise = 0.45;
  double interact_amp = 0.55;      // action-independent marker on engaged pair tokens
  double signature_amp = 0.15;     // per-action component on the pair tokens (weak)
  double context_amp = 1.4;        // action cluster of the context tokens (strong)
  double class_embed_amp = 0.7;
  double score_lo = 0.6;
  double score_hi = 0.95;
  double background_score_lo = 0.3;
  double background_score_hi = 0.9;
  double clutter_prob = 0.25;  // sub-threshold detection, exercised by filtering
  double box_jitter = 0.01;

  // Context detections use dedicated object classes, one per action, with no
  // valid actions of their own.
  int context_class(int action) const {
    return static_cast<int>(num_object_classes) + 1 + action;
  }

  void validate() const {
    if (num_actions == 0) throw std::invalid_argument("synth spec: num_actions must be positive");
    if (num_object_classes == 0) {
      throw std::invalid_argument("synth spec: num_object_classes must be positive");
    }
    if (feature_dim == 0) throw std::invalid_argument("synth spec: feature_dim must be positive");
    if (objects_min == 0 || objects_max < objects_min) {
      throw std::invalid_argument("synth spec: invalid objects_min/objects_max range");
    }
    if (interaction_prob < 0.0 || interaction_prob > 1.0) {
      throw std::invalid_argument("synth spec: interaction_prob must be in [0, 1]");
    }
  }
};

struct SynthData {
  Dataset train;
  Dataset test;
  CategoryTable categories;
  ActionValidity validity;
};

namespace detail {

inline Box clamp_box(Box b) {
  b.w = std::clamp(b.w, 0.05, 0.9);
  b.h = std::clamp(b.h, 0.05, 0.9);
  b.cx = std::clamp(b.cx, b.w / 2.0, 1.0 - b.w / 2.0);
  b.cy = std::clamp(b.cy, b.h / 2.0, 1.0 - b.h / 2.0);
  return b;
}

struct SynthSampler {
  const SynthSpec& spec;
  std::mt19937_64& rng;
  // Cluster directions drawn once per dataset.
  std::vector<std::vector<double>> class_mean;             // [class][m]
  std::vector<std::vector<double>> human_signature;        // [action][m]
  std::vector<std::vector<double>> object_signature;       // [action][m]
  std::vector<std::vector<double>> context_signature;      // [action][m]
  std::vector<double> human_interact;                      // [m]
  std::vector<double> object_interact;                     // [m]

  SynthSampler(const SynthSpec& s, std::mt19937_64& r) : spec(s), rng(r) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](double amp) {
      std::vector<double> v(spec.feature_dim);
      for (double& x : v) x = amp * gauss(rng);
      return v;
    };
    for (std::size_t c = 0; c <= spec.num_object_classes; ++c) {
      class_mean.push_back(draw(spec.class_embed_amp));
    }
    for (std::size_t a = 0; a < spec.num_actions; ++a) {
      human_signature.push_back(draw(spec.signature_amp));
      object_signature.push_back(draw(spec.signature_amp));
      context_signature.push_back(draw(spec.context_amp));
    }
    human_interact = draw(spec.interact_amp);
    object_interact = draw(spec.interact_amp);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  std::size_t uniform_index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }

  Box random_box() {
    double w = uniform(0.12, 0.3), h = uniform(0.15, 0.35);
    return clamp_box({uniform(0.0, 1.0), uniform(0.0, 1.0), w, h});
  }

  Box near_box(const Box& anchor, double offset_lo, double offset_hi) {
    double dx = uniform(offset_lo, offset_hi) * (chance(0.5) ? 1.0 : -1.0);
    double dy = uniform(offset_lo, offset_hi) * (chance(0.5) ? 1.0 : -1.0);
    return clamp_box({anchor.cx + dx, anchor.cy + dy, anchor.w * uniform(0.8, 1.25),
                      anchor.h * uniform(0.8, 1.25)});
  }

  Box jitter(const Box& b) {
    double j = spec.box_jitter;
    return clamp_box({b.cx + uniform(-j, j), b.cy + uniform(-j, j), b.w + uniform(-j, j),
                      b.h + uniform(-j, j)});
  }

  std::vector<double> feature(std::size_t cls, int action, bool is_human) {
    std::normal_distribution<double> gauss(0.0, spec.feature_noise);
    std::vector<double> v = class_mean[cls];
    if (action >= 0) {
      const auto& sig =
          is_human ? human_signature[static_cast<std::size_t>(action)]
                   : object_signature[static_cast<std::size_t>(action)];
      const auto& mark = is_human ? human_interact : object_interact;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += sig[i] + mark[i];
    }
    for (double& x : v) x += gauss(rng);
    return v;
  }

  std::vector<double> context_feature(int action) {
    std::normal_distribution<double> gauss(0.0, spec.feature_noise);
    std::vector<double> v = context_signature[static_cast<std::size_t>(action)];
    for (double& x : v) x += gauss(rng);
    return v;
  }

  // Marked distractors are feature-identical to true partners (marker plus a
  // random action signature); only their looser geometry relative to the true
  // partner of the same object gives them away.
  std::vector<double> distractor_feature(bool marked) {
    if (marked) {
      int a = static_cast<int>(uniform_index(0, spec.num_actions - 1));
      return feature(0, a, true);
    }
    return feature(0, -1, true);
  }
};

}  // namespace detail

inline ActionValidity make_synth_validity(const SynthSpec& spec) {
  ActionValidity v;
  v.num_actions = static_cast<int>(spec.num_actions);
  v.valid[0] = {};  // humans foster no human-human actions in this benchmark
  for (std::size_t c = 1; c <= spec.num_object_classes; ++c) {
    std::vector<int> actions;
    actions.push_back(static_cast<int>((c - 1) % spec.num_actions));
    int second = static_cast<int>(c % spec.num_actions);
    if (second != actions[0]) actions.push_back(second);
    std::sort(actions.begin(), actions.end());
    v.valid[static_cast<int>(c)] = std::move(actions);
  }
  if (spec.context_prob > 0.0) {
    for (std::size_t a = 0; a < spec.num_actions; ++a) {
      v.valid[spec.context_class(static_cast<int>(a))] = {};
    }
  }
  return v;
}

inline CategoryTable make_synth_categories(const SynthSpec& spec) {
  CategoryTable cats;
  cats.entries.push_back({0, "person", true});
  for (std::size_t c = 1; c <= spec.num_object_classes; ++c) {
    cats.entries.push_back({static_cast<int>(c), "object-" + std::to_string(c), false});
  }
  if (spec.context_prob > 0.0) {
    for (std::size_t a = 0; a < spec.num_actions; ++a) {
      cats.entries.push_back(
          {spec.context_class(static_cast<int>(a)), "context-" + std::to_string(a), false});
    }
  }
  return cats;
}

inline SynthData gen_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  SynthData data;
  data.categories = make_synth_categories(spec);
  data.validity = make_synth_validity(spec);

  std::mt19937_64 rng(seed);
  detail::SynthSampler sampler(spec, rng);

  auto gen_split = [&](const std::string& prefix, std::size_t count, Dataset& out) {
    for (std::size_t idx = 0; idx < count; ++idx) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-%05zu", prefix.c_str(), idx);
      ImageDetections img;
      img.image_id = buf;

      std::size_t n_objects = sampler.uniform_index(spec.objects_min, spec.objects_max);
      std::vector<Detection> humans, objects;

      // One interaction: engaged object + partner human + context token, and
      // possibly a distractor human next to the object.
      auto add_interaction = [&](int cls, int action, const Box& obox) {
        Detection od;
        od.box = sampler.jitter(obox);
        od.score = sampler.uniform(spec.score_lo, spec.score_hi);
        od.class_id = cls;
        od.feature = sampler.feature(static_cast<std::size_t>(cls), action, false);
        objects.push_back(od);

        double ox = sampler.uniform(spec.partner_offset_lo, spec.partner_offset_hi) *
                    (sampler.chance(0.5) ? 1.0 : -1.0);
        double oy = sampler.uniform(spec.partner_offset_lo, spec.partner_offset_hi) *
                    (sampler.chance(0.5) ? 1.0 : -1.0);
        Box hbox = detail::clamp_box({obox.cx + ox, obox.cy + oy,
                                      obox.w * sampler.uniform(0.8, 1.25),
                                      obox.h * sampler.uniform(0.8, 1.25)});
        Detection hd;
        hd.box = sampler.jitter(hbox);
        hd.score = sampler.uniform(spec.score_lo, spec.score_hi);
        hd.class_id = 0;
        hd.feature = sampler.feature(0, action, true);
        humans.push_back(hd);

        GroundTruthPair g;
        g.image_id = img.image_id;
        g.human_box = hbox;
        g.object_box = obox;
        g.object_class = cls;
        g.action_id = action;
        out.gt.push_back(g);

        if (sampler.chance(spec.context_prob)) {
          Box cbox = sampler.near_box(obox, 0.03, 0.1);
          cbox.w = sampler.uniform(0.06, 0.14);
          cbox.h = sampler.uniform(0.06, 0.14);
          cbox = detail::clamp_box(cbox);
          Detection ctx;
          ctx.box = sampler.jitter(cbox);
          ctx.score = sampler.uniform(0.55, 0.9);
          ctx.class_id = spec.context_class(action);
          ctx.feature = sampler.context_feature(action);
          objects.push_back(ctx);
        }

        if (sampler.chance(spec.distractor_prob) && humans.size() < spec.max_humans) {
          // Strictly looser than this pair's own partner (1.4x-2.2x the
          // offset) so within-image comparison always separates it, while its
          // absolute geometry still overlaps the loose end of the positive
          // range seen across images.
          double scale = sampler.uniform(1.4, 2.2);
          double dx = ox * scale * (sampler.chance(0.5) ? 1.0 : -1.0);
          double dy = oy * scale * (sampler.chance(0.5) ? 1.0 : -1.0);
          Box dbox = detail::clamp_box({obox.cx + dx, obox.cy + dy,
                                        obox.w * sampler.uniform(0.8, 1.25),
                                        obox.h * sampler.uniform(0.8, 1.25)});
          Detection dd;
          dd.box = sampler.jitter(dbox);
          dd.score = sampler.uniform(spec.score_lo, spec.score_hi);
          dd.class_id = 0;
          dd.feature = sampler.distractor_feature(sampler.chance(spec.marked_distractor_prob));
          humans.push_back(dd);
        }
      };

      // A pinned pair: object + its human at an exact position, no distractor.
      auto add_pinned_pair = [&](int cls, int action, const Box& obox, const Box& hbox) {
        Detection od;
        od.box = sampler.jitter(obox);
        od.score = sampler.uniform(spec.score_lo, spec.score_hi);
        od.class_id = cls;
        od.feature = sampler.feature(static_cast<std::size_t>(cls), action, false);
        objects.push_back(od);
        Detection hd;
        hd.box = sampler.jitter(hbox);
        hd.score = sampler.uniform(spec.score_lo, spec.score_hi);
        hd.class_id = 0;
        hd.feature = sampler.feature(0, action, true);
        humans.push_back(hd);
        out.gt.push_back({img.image_id, hbox, obox, cls, action});
        if (sampler.chance(spec.context_prob)) {
          Box cbox = sampler.near_box(obox, 0.03, 0.1);
          cbox.w = sampler.uniform(0.06, 0.14);
          cbox.h = sampler.uniform(0.06, 0.14);
          cbox = detail::clamp_box(cbox);
          Detection ctx;
          ctx.box = sampler.jitter(cbox);
          ctx.score = sampler.uniform(0.55, 0.9);
          ctx.class_id = spec.context_class(action);
          ctx.feature = sampler.context_feature(action);
          objects.push_back(ctx);
        }
      };

      // Preference conflict: two same-action pairs arranged so that one token
      // sits closer to the foreign counterpart than to its own partner, in
      // either orientation. The cross pair then looks at least as good as the
      // conflicted true pair in isolation; only comparison against the tight
      // pair resolves the assignment.
      auto add_conflict_cluster = [&](int cls, int action, const Box& o1) {
        double ang = sampler.uniform(0.0, 6.2831853);
        double ux = std::cos(ang), uy = std::sin(ang);
        if (sampler.chance(0.5)) {
          // Conflicted human: H1 lies between O1 and O2, nearer to O2.
          double dist = sampler.uniform(0.16, 0.26);
          Box o2 = detail::clamp_box({o1.cx + ux * dist, o1.cy + uy * dist,
                                      o1.w * sampler.uniform(0.85, 1.2),
                                      o1.h * sampler.uniform(0.85, 1.2)});
          double t = sampler.uniform(0.55, 0.75);
          Box h1 = detail::clamp_box({o1.cx + ux * dist * t + sampler.uniform(-0.02, 0.02),
                                      o1.cy + uy * dist * t + sampler.uniform(-0.02, 0.02),
                                      o1.w * sampler.uniform(0.8, 1.25),
                                      o1.h * sampler.uniform(0.8, 1.25)});
          Box h2 = sampler.near_box(o2, 0.02, 0.05);
          add_pinned_pair(cls, action, o1, h1);
          add_pinned_pair(cls, action, o2, h2);
        } else {
          // Conflicted object: O1 lies nearer to the foreign tight human H2
          // than to its own H1.
          Box o2 = sampler.near_box(o1, spec.twin_offset_lo, spec.twin_offset_hi);
          Box h2 = sampler.near_box(o2, 0.02, 0.05);
          Box o1b = detail::clamp_box({h2.cx + ux * sampler.uniform(0.05, 0.10),
                                       h2.cy + uy * sampler.uniform(0.05, 0.10), o1.w, o1.h});
          Box h1 = detail::clamp_box({o1b.cx + ux * sampler.uniform(0.10, 0.17),
                                      o1b.cy + uy * sampler.uniform(0.10, 0.17),
                                      o1b.w * sampler.uniform(0.8, 1.25),
                                      o1b.h * sampler.uniform(0.8, 1.25)});
          add_pinned_pair(cls, action, o1b, h1);
          add_pinned_pair(cls, action, o2, h2);
        }
      };

      for (std::size_t o = 0; o < n_objects; ++o) {
        int cls = static_cast<int>(sampler.uniform_index(1, spec.num_object_classes));
        Box obox = sampler.random_box();
        bool engaged = sampler.chance(spec.interaction_prob);
        if (!engaged || humans.size() >= spec.max_humans) {
          Detection od;
          od.box = sampler.jitter(obox);
          od.score = sampler.uniform(spec.score_lo, spec.score_hi);
          od.class_id = cls;
          od.feature = sampler.feature(static_cast<std::size_t>(cls), -1, false);
          objects.push_back(od);
          continue;
        }
        const auto& valid = data.validity.actions_for(cls);
        int action = valid[sampler.uniform_index(0, valid.size() - 1)];
        double roll = sampler.uniform(0.0, 1.0);
        if (roll < spec.conflict_prob && humans.size() + 2 <= spec.max_humans) {
          add_conflict_cluster(cls, action, obox);
          continue;
        }
        add_interaction(cls, action, obox);

        // Same-action twin right next to it: the cross pairs it induces are
        // hard negatives that per-pair evidence cannot separate.
        if (roll < spec.conflict_prob + spec.twin_prob && humans.size() < spec.max_humans) {
          Box tbox = sampler.near_box(obox, spec.twin_offset_lo, spec.twin_offset_hi);
          add_interaction(cls, action, tbox);
        }
      }
      if (humans.empty() || (humans.size() < spec.max_humans &&
                             sampler.chance(spec.background_human_prob))) {
        Detection bd;
        bd.box = sampler.jitter(sampler.random_box());
        bd.score = sampler.uniform(spec.background_score_lo, spec.background_score_hi);
        bd.class_id = 0;
        bd.feature = sampler.feature(0, -1, true);
        humans.push_back(bd);
      }
      if (sampler.chance(spec.clutter_prob)) {
        Detection cd;
        cd.box = sampler.jitter(sampler.random_box());
        cd.score = sampler.uniform(0.02, 0.15);
        cd.class_id = static_cast<int>(sampler.uniform_index(0, spec.num_object_classes));
        cd.feature = sampler.feature(static_cast<std::size_t>(cd.class_id), -1,
                                     cd.class_id == 0);
        if (cd.class_id == 0)
          humans.push_back(cd);
        else
          objects.push_back(cd);
      }
      for (auto& d : humans) img.detections.push_back(std::move(d));
      for (auto& d : objects) img.detections.push_back(std::move(d));
      out.images.push_back(std::move(img));
    }
  };

  gen_split("synth-train", spec.train_images, data.train);
  gen_split("synth-test", spec.test_images, data.test);
  return data;
}

inline SynthSpec synth_spec_from_config(const KvConfig& cfg) {
  SynthSpec s;
  s.train_images = cfg.get_size("train_images", s.train_images);
  s.test_images = cfg.get_size("test_images", s.test_images);
  s.num_actions = cfg.get_size("num_actions", s.num_actions);
  s.num_object_classes = cfg.get_size("num_object_classes", s.num_object_classes);
  s.feature_dim = cfg.get_size("feature_dim", s.feature_dim);
  s.objects_min = cfg.get_size("objects_min", s.objects_min);
  s.objects_max = cfg.get_size("objects_max", s.objects_max);
  s.max_humans = cfg.get_size("max_humans", s.max_humans);
  s.interaction_prob = cfg.get_double("interaction_prob", s.interaction_prob);
  s.distractor_prob = cfg.get_double("distractor_prob", s.distractor_prob);
  s.marked_distractor_prob =
      cfg.get_double("marked_distractor_prob", s.marked_distractor_prob);
  s.background_human_prob = cfg.get_double("background_human_prob", s.background_human_prob);
  s.context_prob = cfg.get_double("context_prob", s.context_prob);
  s.twin_prob = cfg.get_double("twin_prob", s.twin_prob);
  s.conflict_prob = cfg.get_double("conflict_prob", s.conflict_prob);
  s.partner_offset_lo = cfg.get_double("partner_offset_lo", s.partner_offset_lo);
  s.partner_offset_hi = cfg.get_double("partner_offset_hi", s.partner_offset_hi);
  s.twin_offset_lo = cfg.get_double("twin_offset_lo", s.twin_offset_lo);
  s.twin_offset_hi = cfg.get_double("twin_offset_hi", s.twin_offset_hi);
  s.feature_noise = cfg.get_double("feature_noise", s.feature_noise);
  s.interact_amp = cfg.get_double("interact_amp", s.interact_amp);
  s.signature_amp = cfg.get_double("signature_amp", s.signature_amp);
  s.context_amp = cfg.get_double("context_amp", s.context_amp);
  s.class_embed_amp = cfg.get_double("class_embed_amp", s.class_embed_amp);
  s.score_lo = cfg.get_double("score_lo", s.score_lo);
  s.score_hi = cfg.get_double("score_hi", s.score_hi);
  s.background_score_lo = cfg.get_double("background_score_lo", s.background_score_lo);
  s.background_score_hi = cfg.get_double("background_score_hi", s.background_score_hi);
  s.clutter_prob = cfg.get_double("clutter_prob", s.clutter_prob);
  s.box_jitter = cfg.get_double("box_jitter", s.box_jitter);
  return s;
}

}  // namespace upt
