// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier end-to-end checks (training benchmark, golden files) live
// here rather than in the unit suite.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "upt/analysis.hpp"
#include "upt/checkpoint.hpp"
#include "upt/eval.hpp"
#include "upt/pipeline.hpp"
#include "upt/synth.hpp"
#include "upt/train.hpp"

namespace {

using upt::Tensor;
using testutil::max_grad_rel_err;
using testutil::rand_tensor;

struct Outcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<Outcome> g_results;

void record(const std::string& name, bool passed, const std::string& detail) {
  g_results.push_back({name, passed, detail});
  std::printf("[%s] %s: %s\n", passed ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void run_criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    auto [ok, detail] = fn();
    record(name, ok, detail);
  } catch (const std::exception& e) {
    record(name, false, std::string("exception: ") + e.what());
  }
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- shared benchmark fixtures -----------------------------------------------

// Desk-scale benchmark: separable by construction, with context tokens that
// carry the action identity, same-action twin pairs, preference conflicts and
// marked distractors providing the hard negatives.
upt::SynthSpec benchmark_spec() {
  upt::SynthSpec spec;
  spec.train_images = 2000;
  spec.test_images = 150;
  spec.num_actions = 3;
  spec.feature_dim = 32;
  spec.twin_prob = 0.45;
  spec.conflict_prob = 0.15;
  spec.distractor_prob = 0.5;
  spec.marked_distractor_prob = 0.3;
  spec.interact_amp = 0.5;
  spec.signature_amp = 0.4;
  spec.partner_offset_lo = 0.02;
  spec.partner_offset_hi = 0.10;
  spec.twin_offset_lo = 0.12;
  spec.twin_offset_hi = 0.22;
  spec.score_lo = 0.8;
  spec.score_hi = 0.95;
  spec.background_score_lo = 0.75;
  spec.background_score_hi = 0.95;
  return spec;
}

constexpr std::uint64_t kDataSeed = 5;
constexpr std::uint64_t kTrainSeed = 7;

upt::HeadConfig benchmark_head(std::size_t coop, std::size_t comp) {
  upt::HeadConfig cfg;
  cfg.feature_dim = 32;
  cfg.heads = 4;
  cfg.coop_layers = coop;
  cfg.comp_layers = comp;
  cfg.branches = 4;
  cfg.num_actions = 3;
  return cfg;
}

struct TrainedVariant {
  upt::InteractionHead head;
  double toy_map = 0.0;
};

TrainedVariant train_variant(const upt::SynthData& data, std::size_t coop, std::size_t comp,
                             std::uint64_t seed) {
  TrainedVariant v{upt::make_interaction_head(benchmark_head(coop, comp), seed), 0.0};
  upt::TrainConfig tcfg;  // defaults: lr 1e-4, 20 epochs, /10 at epoch 10, batch 1
  tcfg.seed = seed;
  upt::train(v.head, data.train, &data.test, data.categories, data.validity,
             upt::FilterConfig{}, tcfg);
  upt::PipelineConfig pcfg;
  auto preds =
      upt::predict_records(v.head, data.test.images, data.categories, data.validity, pcfg);
  v.toy_map = upt::evaluate(preds, data.test.gt, false).full_mean;
  return v;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---- criterion 1: autodiff vs finite differences ------------------------------

std::pair<bool, std::string> criterion_autodiff() {
  auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  double worst = 0.0;
  std::string worst_op = "none";
  auto check = [&](const char* op, std::function<Tensor(const std::vector<Tensor>&)> f,
                   std::vector<Tensor> leaves) {
    std::vector<Tensor> copy = leaves;
    double err = max_grad_rel_err(f, copy);
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };

  for (int rep = 0; rep < 20; ++rep) {
    check("add", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::add(in[0], in[1]));
    }, {rand_tensor({3, 4}, rng), rand_tensor({4}, rng)});
    check("sub", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::mul(upt::sub(in[0], in[1]), in[1]));
    }, {rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng)});
    check("mul", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::mul(in[0], in[1]));
    }, {rand_tensor({2, 1, 3}, rng), rand_tensor({2, 3}, rng)});
    {
      Tensor t = rand_tensor({6}, rng);
      for (double& v : t.values())
        if (std::abs(v) < 0.05) v = 0.2;
      check("relu", [](const std::vector<Tensor>& in) {
        return upt::sum_all(upt::relu(in[0]));
      }, {t});
    }
    check("sigmoid", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::sigmoid(in[0]));
    }, {rand_tensor({5}, rng)});
    check("log", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::log(in[0]));
    }, {rand_tensor({5}, rng, 0.1, 2.0)});
    check("exp", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::exp(in[0]));
    }, {rand_tensor({5}, rng)});
    check("pow", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::pow(in[0], 1.7));
    }, {rand_tensor({5}, rng, 0.1, 2.0)});
    check("softplus", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::softplus(in[0]));
    }, {rand_tensor({5}, rng)});
    check("matmul", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::matmul(in[0], in[1]));
    }, {rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)});
    {
      Tensor w = rand_tensor({4}, rng);
      check("softmax", [w](const std::vector<Tensor>& in) {
        return upt::sum_all(upt::mul(upt::softmax(in[0], 0), w));
      }, {rand_tensor({4}, rng)});
    }
    {
      Tensor w = rand_tensor({3, 3, 6}, rng);
      check("concat/duplicate/pairwise", [w](const std::vector<Tensor>& in) {
        Tensor joined =
            upt::concat({upt::duplicate_rows(in[0]), upt::pairwise_concat(in[0])}, 2);
        return upt::sum_all(upt::mul(joined, w));
      }, {rand_tensor({3, 2}, rng)});
    }
    check("slice/gather/transpose/reshape", [](const std::vector<Tensor>& in) {
      Tensor s = upt::slice_last(in[0], 1, 3);
      Tensor g = upt::gather_rows(in[0], {0, 2, 2});
      Tensor r = upt::reshape(upt::transpose(s), {s.numel()});
      return upt::add(upt::sum_all(r), upt::sum_all(g));
    }, {rand_tensor({4, 5}, rng)});
    check("sum/mean", [](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::mul(upt::sum(in[0], 0), upt::mean(in[0], 0)));
    }, {rand_tensor({3, 4}, rng)});
    {
      Tensor w = rand_tensor({2, 5}, rng);
      check("layer_norm", [w](const std::vector<Tensor>& in) {
        return upt::sum_all(upt::mul(upt::layer_norm(in[0], in[1], in[2], 1e-5), w));
      }, {rand_tensor({2, 5}, rng), rand_tensor({5}, rng), rand_tensor({5}, rng)});
    }
    check("linear/mlp", [](const std::vector<Tensor>& in) {
      Tensor h = upt::relu(upt::linear(in[0], in[1], in[2]));
      return upt::sum_all(upt::linear(h, upt::transpose(in[1]), in[3]));
    }, {rand_tensor({2, 3}, rng), rand_tensor({3, 4}, rng), rand_tensor({4}, rng),
        rand_tensor({3}, rng)});
  }

  // Full layers: 20 randomized instances each.
  for (int rep = 0; rep < 20; ++rep) {
    std::size_t heads = (rep % 2) ? 2 : 1;
    auto head = upt::make_interaction_head(benchmark_head(1, 1), 300 + rep);
    upt::HeadConfig small;
    small.feature_dim = 8;
    small.heads = heads;
    small.coop_layers = 1;
    small.comp_layers = 1;
    small.branches = 2;
    small.num_actions = 2;
    auto h8 = upt::make_interaction_head(small, 400 + rep);
    std::size_t n = 2 + rep % 3;
    check("cooperative_layer", [&](const std::vector<Tensor>& in) {
      return upt::sum_all(
          upt::cooperative_layer(h8.coop_modified[0], in[0], in[1], heads, {}, 0));
    }, {rand_tensor({n, 8}, rng), rand_tensor({n * n, 8}, rng)});
    std::size_t k = 1 + rep % 4;
    check("competitive_layer", [&](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::standard_encoder_layer(h8.comp[0], in[0], heads, {}, 1));
    }, {rand_tensor({k, 8}, rng)});
    check("mbf", [&](const std::vector<Tensor>& in) {
      return upt::sum_all(upt::mbf(h8.mbf, in[0], in[1]));
    }, {rand_tensor({3, 16}, rng), rand_tensor({3, 8}, rng)});
    {
      std::vector<double> tv(6), mv(6);
      for (auto& t : tv) t = rng() % 2 ? 1.0 : 0.0;
      for (auto& m : mv) m = rng() % 4 ? 1.0 : 0.0;
      Tensor targets({2, 3}, tv), mask({2, 3}, mv);
      Tensor conf({2, 1}, {0.81, 0.56});
      check("focal_loss", [&](const std::vector<Tensor>& in) {
        Tensor rec = upt::recover_logits(conf, in[0]);
        return upt::focal_loss(rec, targets, 0.5, 2.0, mask);
      }, {rand_tensor({2, 3}, rng)});
    }
  }

  double secs = elapsed_s(t0);
  bool ok = worst < 1e-4 && secs < 120.0;
  return {ok, "max rel err " + fmt(worst) + " (worst op: " + worst_op + "), " + fmt(secs) +
                  " s (< 120 s)"};
}

// ---- criterion 2: token-duplication structure and attention contracts ---------

std::pair<bool, std::string> criterion_structure() {
  std::mt19937_64 rng(2002);
  bool ok = true;
  std::string why;

  for (int rep = 0; rep < 50 && ok; ++rep) {
    std::size_t n = 1 + rng() % 5, m = 1 + rng() % 6;
    Tensor x = rand_tensor({n, m}, rng);
    Tensor dup = upt::duplicate_rows(x);
    Tensor pc = upt::pairwise_concat(x);
    for (std::size_t i = 0; i < n && ok; ++i)
      for (std::size_t j = 0; j < n && ok; ++j)
        for (std::size_t c = 0; c < m && ok; ++c) {
          if (dup.at({i, j, c}) != x.at({j, c})) {
            ok = false;
            why = "duplicate_rows not bit-exact";
          }
          if (pc.at({i, j, c}) != x.at({i, c}) || pc.at({i, j, m + c}) != x.at({j, c})) {
            ok = false;
            why = "pairwise_concat not bit-exact";
          }
        }
  }

  // Attention rows sum to 1 within 1e-9 in both layer types.
  auto head = upt::make_interaction_head(benchmark_head(1, 1), 2003);
  upt::HeadConfig small = benchmark_head(1, 1);
  small.feature_dim = 16;
  small.heads = 2;
  auto h = upt::make_interaction_head(small, 2004);
  for (int rep = 0; rep < 10 && ok; ++rep) {
    std::size_t n = 2 + rng() % 4;
    Tensor x = rand_tensor({n, 16}, rng);
    Tensor y = rand_tensor({n * n, 16}, rng);
    std::vector<Tensor> maps;
    upt::cooperative_layer(h.coop_modified[0], x, y, 2, {}, 0, &maps);
    std::vector<Tensor> cmaps;
    upt::standard_encoder_layer(h.comp[0], x, 2, {}, 1, &cmaps);
    for (const auto& mset : {maps, cmaps})
      for (const auto& w : mset)
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0;
          for (std::size_t j = 0; j < n; ++j) s += w.at({i, j});
          if (std::abs(s - 1.0) > 1e-9) {
            ok = false;
            why = "attention row does not sum to 1";
          }
          for (std::size_t j = 0; j < n; ++j)
            if (w.at({i, j}) < 0.0) {
              ok = false;
              why = "negative attention weight";
            }
        }
  }

  // -inf edit: exactly-zero weight, exactly-zero gradient through the edge.
  {
    std::size_t n = 3, m = 16;
    Tensor x = rand_tensor({n, m}, rng);
    x.set_requires_grad(true);
    Tensor y = rand_tensor({n * n, m}, rng);
    std::vector<upt::AttnEdit> edits{{0, 0, 2, upt::AttnEdit::Kind::neg_inf, 0.0}};
    std::vector<Tensor> maps;
    Tensor out = upt::cooperative_layer(h.coop_modified[0], x, y, 2, edits, 0, &maps);
    for (const auto& w : maps)
      if (w.at({0, 2}) != 0.0) {
        ok = false;
        why = "-inf edit left nonzero weight";
      }
    Tensor row0 = upt::sum_all(upt::gather_rows(out, {0}));
    upt::backward(row0);
    for (std::size_t c = 0; c < m; ++c) {
      if (x.grad()[2 * m + c] != 0.0) {
        ok = false;
        why = "-inf edit leaks gradient through the masked edge";
      }
    }
  }
  return {ok, ok ? "Eq. structure bit-exact; rows stochastic; -inf edge exactly dead" : why};
}

// ---- criterion 3: box geometry -------------------------------------------------

std::pair<bool, std::string> criterion_geometry() {
  std::mt19937_64 rng(3003);
  std::uniform_real_distribution<double> size(0.05, 0.4), shift(-0.2, 0.2), scl(0.3, 1.0);
  auto rand_box = [&]() {
    double w = size(rng), h = size(rng);
    std::uniform_real_distribution<double> cx(w / 2, 1 - w / 2), cy(h / 2, 1 - h / 2);
    return upt::Box{cx(rng), cy(rng), w, h};
  };
  bool ok = true;
  std::string why;
  for (int rep = 0; rep < 500 && ok; ++rep) {
    upt::Box a = rand_box(), b = rand_box();
    double v = upt::iou(a, b);
    if (v < 0.0 || v > 1.0) { ok = false; why = "IoU out of range"; }
    if (std::abs(v - upt::iou(b, a)) > 1e-15) { ok = false; why = "IoU asymmetric"; }
    if (std::abs(upt::iou(a, a) - 1.0) > 1e-12) { ok = false; why = "IoU(a,a) != 1"; }
    double dx = shift(rng), dy = shift(rng), s = scl(rng);
    upt::Box a2{a.cx * s + dx, a.cy * s + dy, a.w * s, a.h * s};
    upt::Box b2{b.cx * s + dx, b.cy * s + dy, b.w * s, b.h * s};
    if (std::abs(v - upt::iou(a2, b2)) > 1e-12) { ok = false; why = "IoU not joint-invariant"; }
    auto p0 = upt::pairwise_terms(a, b);
    auto p1 = upt::pairwise_terms(a2, b2);
    for (std::size_t k = 0; k < 6; ++k)
      if (std::abs(p0[k] - p1[k]) > 1e-12) { ok = false; why = "pairwise terms not invariant"; }
  }
  upt::SpatialEncoderConfig scfg;
  scfg.out_dim = 16;
  if (upt::spatial_input_dim(scfg) != 36) { ok = false; why = "spatial input length != 36"; }
  {
    upt::ParamStore store;
    std::mt19937_64 r2(3004);
    auto enc = upt::make_spatial_encoder(scfg, r2, store, "pe");
    upt::Box a{0.3, 0.4, 0.2, 0.25}, b{0.6, 0.55, 0.3, 0.2};
    upt::Tensor ab = upt::encode_pair(enc, a, b);
    upt::Tensor ba = upt::encode_pair(enc, b, a);
    double diff = 0;
    for (std::size_t i = 0; i < 16; ++i) diff += std::abs(ab.values()[i] - ba.values()[i]);
    if (diff < 1e-9) { ok = false; why = "encoding not order-sensitive"; }
  }
  return {ok, ok ? "IoU/pairwise invariants to 1e-12; input len 36; order-sensitive" : why};
}

// ---- criterion 4: logit recovery identity --------------------------------------

std::pair<bool, std::string> criterion_logit_recovery() {
  double worst = 0.0;
  for (int i = 1; i <= 10; ++i) {
    double y1 = 0.1 * i;
    for (int k = -50; k <= 50; ++k) {
      double y2 = 0.1 * k;
      double lhs = upt::detail::stable_sigmoid(upt::recover_logit(y1, y2));
      double rhs = y1 * upt::detail::stable_sigmoid(y2);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  bool ok = worst < 1e-6;
  return {ok, "max |sigmoid(recover) - y1*sigmoid(y2)| = " + fmt(worst) + " over 1010 grid points"};
}

// ---- criterion 5: MBF parameter parity ------------------------------------------

std::pair<bool, std::string> criterion_mbf_parity() {
  std::vector<std::size_t> counts;
  for (std::size_t b : {1u, 2u, 4u, 8u}) {
    upt::HeadConfig cfg = benchmark_head(1, 1);
    cfg.feature_dim = 256;
    cfg.heads = 8;
    cfg.branches = b;
    auto head = upt::make_interaction_head(cfg, 5005);
    std::size_t count = 0;
    for (const auto& [name, t] : head.params.entries())
      if (name.rfind("mbf.", 0) == 0) count += t.numel();
    counts.push_back(count);
  }
  bool ok = counts[0] == counts[1] && counts[1] == counts[2] && counts[2] == counts[3];
  return {ok, "m=256 counts for B in {1,2,4,8}: " + std::to_string(counts[0]) + "/" +
                  std::to_string(counts[1]) + "/" + std::to_string(counts[2]) + "/" +
                  std::to_string(counts[3])};
}

// ---- criterion 6: pair enumeration count ----------------------------------------

std::pair<bool, std::string> criterion_pair_count() {
  std::mt19937_64 rng(6006);
  for (int rep = 0; rep < 1000; ++rep) {
    upt::TokenSet tokens;
    std::size_t n = 1 + rng() % 14;
    for (std::size_t i = 0; i < n; ++i) {
      upt::Detection d;
      d.box = {0.5, 0.5, 0.1, 0.1};
      d.score = 0.5;
      d.class_id = rng() % 3 == 0 ? 0 : 1;
      d.feature = {0.0};
      if (d.class_id == 0)
        tokens.human_indices.push_back(tokens.detections.size());
      else
        tokens.object_indices.push_back(tokens.detections.size());
      tokens.detections.push_back(d);
    }
    std::size_t expect = tokens.human_indices.size() * (n - 1);
    if (upt::enumerate_pairs(tokens).size() != expect) {
      return {false, "count mismatch at rep " + std::to_string(rep)};
    }
  }
  return {true, "K = n_h*(n-1) exact over 1000 random class assignments"};
}

// ---- criterion 7: matching and AP vs brute-force oracles -------------------------

namespace oracle {

std::vector<bool> match(std::vector<const upt::PredictionRecord*> preds,
                        std::vector<const upt::GroundTruthPair*> gts, double thr) {
  std::vector<bool> out(preds.size(), false), used(gts.size(), false);
  for (std::size_t p = 0; p < preds.size(); ++p) {
    double best = -1.0;
    std::size_t pick = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g]->image_id != preds[p]->image_id) continue;
      double hi = upt::iou(preds[p]->human_box, gts[g]->human_box);
      double oi = upt::iou(preds[p]->object_box, gts[g]->object_box);
      double ov = hi < oi ? hi : oi;
      if (ov > thr && ov > best) {
        best = ov;
        pick = g;
      }
    }
    if (pick != gts.size()) {
      used[pick] = true;
      out[p] = true;
    }
  }
  return out;
}

double ap(const std::vector<bool>& flags, std::size_t num_gt) {
  std::size_t n = flags.size(), tp = 0;
  std::vector<double> prec(n), rec(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (flags[k]) ++tp;
    prec[k] = double(tp) / double(k + 1);
    rec[k] = double(tp) / double(num_gt);
  }
  double total = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!flags[k]) continue;
    double env = 0.0;
    for (std::size_t j = k; j < n; ++j) env = std::max(env, prec[j]);
    total += (rec[k] - prev) * env;
    prev = rec[k];
  }
  return total;
}

}  // namespace oracle

std::pair<bool, std::string> criterion_map_oracle() {
  std::mt19937_64 rng(7007);
  std::uniform_real_distribution<double> pos(0.2, 0.8), size(0.1, 0.35), sc(0.0, 1.0);

  // Pinned protocol case: one GT, two exact predictions -> TP then FP.
  {
    upt::GroundTruthPair g{"i", {0.4, 0.4, 0.2, 0.2}, {0.6, 0.6, 0.2, 0.2}, 1, 0};
    upt::PredictionRecord p1{"i", g.human_box, g.object_box, 1, 0, 0.9};
    upt::PredictionRecord p2{"i", g.human_box, g.object_box, 1, 0, 0.8};
    auto flags = upt::match_class({&p1, &p2}, {&g}, 0.5);
    if (!(flags[0] && !flags[1])) return {false, "duplicate-prediction case violated"};
  }

  for (int rep = 0; rep < 200; ++rep) {
    std::vector<upt::PredictionRecord> preds;
    std::vector<upt::GroundTruthPair> gts;
    std::size_t np = 1 + rng() % 10, ng = 1 + rng() % 4;
    for (std::size_t g = 0; g < ng; ++g) {
      gts.push_back({rng() % 2 ? "a" : "b",
                     {pos(rng), pos(rng), size(rng), size(rng)},
                     {pos(rng), pos(rng), size(rng), size(rng)},
                     1,
                     0});
    }
    for (std::size_t p = 0; p < np; ++p) {
      if (p < ng && rng() % 2) {
        auto g = gts[p];
        g.human_box.cx += 0.01 * (double(rng() % 5) - 2);
        preds.push_back({g.image_id, g.human_box, g.object_box, 1, 0, sc(rng)});
      } else {
        preds.push_back({rng() % 2 ? "a" : "b",
                         {pos(rng), pos(rng), size(rng), size(rng)},
                         {pos(rng), pos(rng), size(rng), size(rng)},
                         1,
                         0,
                         sc(rng)});
      }
    }
    std::sort(preds.begin(), preds.end(),
              [](const upt::PredictionRecord& a, const upt::PredictionRecord& b) {
                if (a.score != b.score) return a.score > b.score;
                return upt::prediction_less(a, b);
              });
    std::vector<const upt::PredictionRecord*> pp;
    std::vector<const upt::GroundTruthPair*> gp;
    for (auto& p : preds) pp.push_back(&p);
    for (auto& g : gts) gp.push_back(&g);
    auto got = upt::match_class(pp, gp, 0.5);
    auto want = oracle::match(pp, gp, 0.5);
    if (got != want) return {false, "match differs from oracle at rep " + std::to_string(rep)};
    double ap_got = upt::average_precision(got, gts.size());
    double ap_want = oracle::ap(got, gts.size());
    if (std::abs(ap_got - ap_want) > 1e-12) {
      return {false, "AP differs from oracle at rep " + std::to_string(rep)};
    }
  }
  return {true, "match flags identical, AP within 1e-12, on 200 random instances"};
}

// ---- criteria 8-10: benchmark training, mechanism directions, interventions ------

struct BenchmarkState {
  upt::SynthData data;
  TrainedVariant full;       // 2 coop + 1 comp (the default configuration)
  TrainedVariant comp_only;  // 0 coop + 1 comp (single-layer variant, "w/o coop")
  TrainedVariant coop_only;  // 1 coop + 0 comp (single-layer variant, "w/o comp")
  TrainedVariant wo_comp;    // 2 coop + 0 comp (full minus comp, for the delta direction)
  TrainedVariant neither;    // 0 + 0
  double train_seconds = 0.0;
};

BenchmarkState* g_bench = nullptr;

std::pair<bool, std::string> criterion_training() {
  auto t0 = std::chrono::steady_clock::now();
  static BenchmarkState bench{upt::gen_synthetic(benchmark_spec(), kDataSeed)};
  bench.full = train_variant(bench.data, 2, 1, kTrainSeed);
  bench.train_seconds = elapsed_s(t0);
  g_bench = &bench;

  // Determinism: an abbreviated run twice, metric files bit-identical.
  upt::SynthSpec small = benchmark_spec();
  small.train_images = 40;
  small.test_images = 10;
  auto small_data = upt::gen_synthetic(small, kDataSeed);
  auto run_metrics = [&]() {
    auto head = upt::make_interaction_head(benchmark_head(2, 1), kTrainSeed);
    upt::TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.seed = kTrainSeed;
    auto metrics = upt::train(head, small_data.train, &small_data.test, small_data.categories,
                              small_data.validity, upt::FilterConfig{}, tcfg);
    std::ostringstream os;
    for (const auto& m : metrics) os << m.epoch << ":" << m.loss << ":" << m.toy_map << ";";
    return os.str();
  };
  bool deterministic = run_metrics() == run_metrics();

  // LR schedule values are pinned by the config defaults.
  upt::TrainConfig sched;
  bool lr_ok = upt::lr_at_epoch(sched, 0) == 1e-4 && upt::lr_at_epoch(sched, 9) == 1e-4 &&
               std::abs(upt::lr_at_epoch(sched, 10) - 1e-5) < 1e-20;

  double secs = elapsed_s(t0);
  bool ok = bench.full.toy_map > 0.9 && deterministic && lr_ok && secs < 600.0;
  return {ok, "toy mAP " + fmt(bench.full.toy_map) + " (> 0.9), deterministic=" +
                  (deterministic ? "yes" : "NO") + ", lr 1e-4 -> 1e-5 at epoch 10, " +
                  fmt(secs) + " s (< 600 s)"};
}

std::pair<bool, std::string> criterion_mechanism() {
  if (!g_bench) return {false, "training benchmark unavailable"};
  BenchmarkState& bench = *g_bench;
  bench.comp_only = train_variant(bench.data, 0, 1, kTrainSeed);
  bench.coop_only = train_variant(bench.data, 1, 0, kTrainSeed);
  bench.wo_comp = train_variant(bench.data, 2, 0, kTrainSeed);
  bench.neither = train_variant(bench.data, 0, 0, kTrainSeed);

  upt::PipelineConfig pcfg;
  upt::Dataset eval_set = bench.data.test;
  // (a): adding the cooperative layers to the comp-only reference.
  auto coop_delta = upt::score_deltas(bench.comp_only.head, bench.full.head, eval_set,
                                      bench.data.categories, bench.data.validity, pcfg);
  // (b): adding the competitive layer to the otherwise-identical model.
  auto comp_delta = upt::score_deltas(bench.wo_comp.head, bench.full.head, eval_set,
                                      bench.data.categories, bench.data.validity, pcfg);

  bool a = coop_delta.positives.mean > 0.0;
  bool b = comp_delta.hard_negatives.mean < 0.0;
  bool c = bench.full.toy_map > bench.comp_only.toy_map &&
           bench.full.toy_map > bench.coop_only.toy_map &&
           bench.comp_only.toy_map > bench.neither.toy_map &&
           bench.coop_only.toy_map > bench.neither.toy_map;
  bool ok = a && b && c;
  return {ok, "(a) +coop positives mean " + fmt(coop_delta.positives.mean) + " > 0: " +
                  (a ? "yes" : "NO") + "; (b) +comp hard-neg mean " +
                  fmt(comp_delta.hard_negatives.mean) + " < 0: " + (b ? "yes" : "NO") +
                  "; (c) mAP full " + fmt(bench.full.toy_map) + " > singles " +
                  fmt(bench.comp_only.toy_map) + " / " + fmt(bench.coop_only.toy_map) +
                  " > neither " + fmt(bench.neither.toy_map) + ": " + (c ? "yes" : "NO")};
}

std::pair<bool, std::string> criterion_intervention() {
  if (!g_bench) return {false, "training benchmark unavailable"};
  BenchmarkState& bench = *g_bench;
  upt::PipelineConfig pcfg;
  std::size_t tries = 0, decreased = 0;
  for (const auto& img : bench.data.test.images) {
    if (tries >= 100) break;
    auto tokens = upt::build_tokens(img, bench.data.categories, pcfg.filter);
    // Locate a detected pair matching a ground-truth pair.
    const upt::GroundTruthPair* gt = nullptr;
    std::size_t gi = 0, gj = 0;
    for (const auto& g : bench.data.test.gt) {
      if (g.image_id != img.image_id) continue;
      for (std::size_t i = 0; i < tokens.size() && !gt; ++i) {
        if (tokens.detections[i].class_id != 0) continue;
        if (upt::iou(tokens.detections[i].box, g.human_box) <= 0.5) continue;
        for (std::size_t j = 0; j < tokens.size(); ++j) {
          if (j == i || tokens.detections[j].class_id != g.object_class) continue;
          if (upt::iou(tokens.detections[j].box, g.object_box) > 0.5) {
            gt = &g;
            gi = i;
            gj = j;
            break;
          }
        }
      }
      if (gt) break;
    }
    if (!gt) continue;

    std::vector<upt::AttnEdit> edits;
    for (std::size_t l = 0; l < bench.full.head.config.coop_layers; ++l) {
      edits.push_back({l, gi, gj, upt::AttnEdit::Kind::neg_inf, 0.0});
      edits.push_back({l, gj, gi, upt::AttnEdit::Kind::neg_inf, 0.0});
    }
    auto outcome = upt::intervene_attention(bench.full.head, img, edits, bench.data.categories,
                                            bench.data.validity, pcfg);
    for (std::size_t k = 0; k < outcome.pairs.size(); ++k) {
      if (outcome.pairs[k].i == gi && outcome.pairs[k].j == gj) {
        ++tries;
        auto slot = static_cast<std::size_t>(gt->action_id);
        if (outcome.edited[k][slot] < outcome.baseline[k][slot]) ++decreased;
        break;
      }
    }
  }
  double frac = tries ? double(decreased) / double(tries) : 0.0;
  bool ok = tries >= 20 && frac >= 0.8;
  return {ok, "score decreased in " + std::to_string(decreased) + "/" + std::to_string(tries) +
                  " = " + fmt(frac) + " of instances (>= 0.80)"};
}

// ---- criterion 11: golden-file stability ----------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw upt::io_error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::pair<bool, std::string> criterion_golden() {
  namespace fs = std::filesystem;
  fs::path golden = UPT_GOLDEN_DIR;
  fs::path tmp = fs::temp_directory_path() / "upt_acceptance";
  fs::create_directories(tmp);
  std::string cli = UPT_CLI_BIN;
  auto run = [&](const std::string& args) {
    std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  std::string det = (golden / "detections.jsonl").string();
  std::string cat = (golden / "categories.json").string();
  std::string val = (golden / "action_validity.json").string();
  std::string ckpt = (golden / "checkpoint.json").string();

  std::string p1 = (tmp / "pred_w1.jsonl").string();
  std::string p4 = (tmp / "pred_w4.jsonl").string();
  std::string p1b = (tmp / "pred_w1b.jsonl").string();
  if (!run("infer --detections " + det + " --checkpoint " + ckpt + " --categories " + cat +
           " --validity " + val + " --workers 1 --out " + p1))
    return {false, "infer (workers 1) failed"};
  if (!run("infer --detections " + det + " --checkpoint " + ckpt + " --categories " + cat +
           " --validity " + val + " --workers 4 --out " + p4))
    return {false, "infer (workers 4) failed"};
  if (!run("infer --detections " + det + " --checkpoint " + ckpt + " --categories " + cat +
           " --validity " + val + " --workers 1 --out " + p1b))
    return {false, "infer rerun failed"};

  std::string rep = (tmp / "report.txt").string();
  if (!run("eval --predictions " + p1 + " --groundtruth " +
           (golden / "groundtruth.jsonl").string() + " --out " + rep))
    return {false, "eval failed"};

  std::string attn = (tmp / "attention.jsonl").string();
  if (!run("export-attn --detections " + det + " --image-id synth-train-00000 --checkpoint " +
           ckpt + " --categories " + cat + " --out " + attn))
    return {false, "export-attn failed"};

  std::string gp = slurp((golden / "predictions.jsonl").string());
  std::string grep_ = slurp((golden / "report.txt").string());
  std::string gattn = slurp((golden / "attention.jsonl").string());
  bool ok = slurp(p1) == gp && slurp(p4) == gp && slurp(p1b) == gp && slurp(rep) == grep_ &&
            slurp(attn) == gattn;
  return {ok, ok ? "infer (workers 1/4, rerun), eval and export-attn byte-identical to goldens"
                 : "output differs from golden files"};
}

}  // namespace

int main() {
  std::printf("upt acceptance suite\n");
  run_criterion("1. autodiff-vs-finite-differences", criterion_autodiff);
  run_criterion("2. token-structure-and-attention", criterion_structure);
  run_criterion("3. box-geometry", criterion_geometry);
  run_criterion("4. logit-recovery-identity", criterion_logit_recovery);
  run_criterion("5. mbf-parameter-parity", criterion_mbf_parity);
  run_criterion("6. pair-enumeration-count", criterion_pair_count);
  run_criterion("7. map-oracle-equivalence", criterion_map_oracle);
  run_criterion("8. toy-training-benchmark", criterion_training);
  run_criterion("9. mechanism-directions", criterion_mechanism);
  run_criterion("10. attention-intervention", criterion_intervention);
  run_criterion("11. golden-file-stability", criterion_golden);

  std::size_t passed = 0;
  for (const auto& r : g_results) passed += r.passed ? 1 : 0;
  std::printf("%zu/%zu criteria passed\n", passed, g_results.size());
  return passed == g_results.size() ? 0 : 1;
}
