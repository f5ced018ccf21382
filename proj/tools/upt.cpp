// upt: batch tooling for the unary-pairwise interaction head.
//
// Subcommands: gen-data, train, infer, eval, analyze-deltas, intervene,
// export-attn, bench-pairwise. Option precedence everywhere is
// flags > config file > built-in defaults; the effective configuration is
// printed at startup for reproducibility.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "upt/analysis.hpp"
#include "upt/checkpoint.hpp"
#include "upt/config.hpp"
#include "upt/eval.hpp"
#include "upt/pipeline.hpp"
#include "upt/synth.hpp"
#include "upt/train.hpp"

namespace {

struct EffectiveConfig {
  std::map<std::string, std::string> entries;

  void set(const std::string& key, const std::string& v) { entries[key] = v; }
  void set(const std::string& key, const char* v) { entries[key] = v; }
  void set(const std::string& key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    entries[key] = buf;
  }
  void set(const std::string& key, std::size_t v) { entries[key] = std::to_string(v); }
  void set(const std::string& key, bool v) { entries[key] = v ? "true" : "false"; }

  void print(const std::string& command) const {
    std::cout << "effective config (" << command << "):\n";
    for (const auto& [k, v] : entries) std::cout << "  " << k << " = " << v << "\n";
    std::cout << std::flush;
  }
};

double pick(const CLI::Option* opt, double flag_value, const upt::KvConfig& cfg,
            const std::string& key, double fallback) {
  if (opt && opt->count() > 0) return flag_value;
  return cfg.get_double(key, fallback);
}

std::size_t pick(const CLI::Option* opt, std::size_t flag_value, const upt::KvConfig& cfg,
                 const std::string& key, std::size_t fallback) {
  if (opt && opt->count() > 0) return flag_value;
  return cfg.get_size(key, fallback);
}

std::string pick(const CLI::Option* opt, const std::string& flag_value, const upt::KvConfig& cfg,
                 const std::string& key, const std::string& fallback) {
  if (opt && opt->count() > 0) return flag_value;
  return cfg.get_string(key, fallback);
}

struct FilterFlags {
  double nms_iou = 0.5;
  double score_min = 0.2;
  std::size_t min_keep = 3;
  std::size_t max_keep = 15;
  bool no_backfill = false;
  CLI::Option* nms_opt = nullptr;
  CLI::Option* score_opt = nullptr;
  CLI::Option* min_opt = nullptr;
  CLI::Option* max_opt = nullptr;
  CLI::Option* backfill_opt = nullptr;

  void attach(CLI::App* cmd) {
    nms_opt = cmd->add_option("--nms-iou", nms_iou, "NMS IoU threshold");
    score_opt = cmd->add_option("--score-min", score_min, "detection score threshold");
    min_opt = cmd->add_option("--min-keep", min_keep, "minimum detections kept per group");
    max_opt = cmd->add_option("--max-keep", max_keep, "maximum detections kept per group");
    backfill_opt = cmd->add_flag("--no-backfill", no_backfill,
                                 "do not top up below-threshold detections to min-keep");
  }

  upt::FilterConfig resolve(const upt::KvConfig& cfg, EffectiveConfig& eff) const {
    upt::FilterConfig f;
    f.nms_iou = pick(nms_opt, nms_iou, cfg, "nms_iou", f.nms_iou);
    f.score_min = pick(score_opt, score_min, cfg, "score_min", f.score_min);
    f.min_keep = pick(min_opt, min_keep, cfg, "min_keep", f.min_keep);
    f.max_keep = pick(max_opt, max_keep, cfg, "max_keep", f.max_keep);
    bool backfill = backfill_opt->count() > 0 ? !no_backfill : cfg.get_bool("backfill", true);
    f.backfill = backfill;
    eff.set("nms_iou", f.nms_iou);
    eff.set("score_min", f.score_min);
    eff.set("min_keep", f.min_keep);
    eff.set("max_keep", f.max_keep);
    eff.set("backfill", f.backfill);
    return f;
  }
};

std::vector<upt::AttnEdit> read_edits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw upt::io_error("cannot open edits file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw upt::io_error("edits file " + path + ": " + e.what());
  }
  std::vector<upt::AttnEdit> edits;
  for (const auto& ej : j.at("edits")) {
    upt::AttnEdit e;
    e.layer = ej.at("layer").get<std::size_t>();
    e.i = ej.at("i").get<std::size_t>();
    e.j = ej.at("j").get<std::size_t>();
    std::string action = ej.at("action").get<std::string>();
    if (action == "neg_inf") {
      e.kind = upt::AttnEdit::Kind::neg_inf;
    } else if (action == "set_weight") {
      e.kind = upt::AttnEdit::Kind::set_weight;
      e.weight = ej.at("weight").get<double>();
    } else {
      throw upt::io_error("edits file: field 'action' must be 'neg_inf' or 'set_weight'");
    }
    edits.push_back(e);
  }
  return edits;
}

const upt::ImageDetections& find_image(const std::vector<upt::ImageDetections>& images,
                                       const std::string& image_id) {
  for (const auto& img : images)
    if (img.image_id == image_id) return img;
  throw upt::io_error("image_id '" + image_id + "' not found in detections file");
}

void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

int run_gen_data(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir) {
  upt::KvConfig cfg = spec_path.empty() ? upt::KvConfig() : upt::KvConfig::from_file(spec_path);
  upt::SynthSpec spec = upt::synth_spec_from_config(cfg);
  EffectiveConfig eff;
  eff.set("seed", static_cast<std::size_t>(seed));
  eff.set("train_images", spec.train_images);
  eff.set("test_images", spec.test_images);
  eff.set("num_actions", spec.num_actions);
  eff.set("num_object_classes", spec.num_object_classes);
  eff.set("feature_dim", spec.feature_dim);
  eff.set("interaction_prob", spec.interaction_prob);
  eff.set("distractor_prob", spec.distractor_prob);
  eff.set("feature_noise", spec.feature_noise);
  eff.print("gen-data");

  upt::SynthData data = upt::gen_synthetic(spec, seed);
  ensure_dir(out_dir);
  upt::write_detections(join(out_dir, "train_detections.jsonl"), data.train.images);
  upt::write_groundtruth(join(out_dir, "train_groundtruth.jsonl"), data.train.gt);
  upt::write_detections(join(out_dir, "test_detections.jsonl"), data.test.images);
  upt::write_groundtruth(join(out_dir, "test_groundtruth.jsonl"), data.test.gt);
  upt::write_categories(join(out_dir, "categories.json"), data.categories);
  upt::write_action_validity(join(out_dir, "action_validity.json"), data.validity);
  std::cout << "gen-data: wrote " << data.train.images.size() << " train / "
            << data.test.images.size() << " test images to " << out_dir << std::endl;
  return 0;
}

struct HeadFlags {
  std::size_t m = 256, heads = 8, coop = 2, comp = 1, branches = 8, actions = 0, ffn = 0;
  std::string variant = "modified";
  CLI::Option *m_opt = nullptr, *heads_opt = nullptr, *coop_opt = nullptr, *comp_opt = nullptr,
              *branches_opt = nullptr, *actions_opt = nullptr, *ffn_opt = nullptr,
              *variant_opt = nullptr;

  void attach(CLI::App* cmd) {
    m_opt = cmd->add_option("--m", m, "token feature dimension");
    heads_opt = cmd->add_option("--heads", heads, "attention heads");
    coop_opt = cmd->add_option("--coop-layers", coop, "cooperative layer count");
    comp_opt = cmd->add_option("--comp-layers", comp, "competitive layer count");
    branches_opt = cmd->add_option("--branches", branches, "multi-branch fusion branches");
    actions_opt = cmd->add_option("--actions", actions, "number of action classes");
    ffn_opt = cmd->add_option("--ffn-dim", ffn, "feedforward hidden width (0 = 2m)");
    variant_opt = cmd->add_option(
        "--variant", variant,
        "cooperative layer variant: modified|vanilla|vanilla_add_pe|modified_no_pairwise");
  }

  upt::HeadConfig resolve(const upt::KvConfig& cfg, EffectiveConfig& eff) const {
    upt::HeadConfig h;
    h.feature_dim = pick(m_opt, m, cfg, "m", h.feature_dim);
    h.heads = pick(heads_opt, heads, cfg, "heads", h.heads);
    h.coop_layers = pick(coop_opt, coop, cfg, "coop_layers", h.coop_layers);
    h.comp_layers = pick(comp_opt, comp, cfg, "comp_layers", h.comp_layers);
    h.branches = pick(branches_opt, branches, cfg, "branches", h.branches);
    h.num_actions = pick(actions_opt, actions, cfg, "num_actions", h.num_actions);
    h.ffn_dim = pick(ffn_opt, ffn, cfg, "ffn_dim", h.ffn_dim);
    h.variant = upt::coop_variant_from_string(
        pick(variant_opt, variant, cfg, "variant", std::string("modified")));
    eff.set("heads", h.heads);
    eff.set("coop_layers", h.coop_layers);
    eff.set("comp_layers", h.comp_layers);
    eff.set("branches", h.branches);
    eff.set("ffn_dim", h.ffn_dim);
    eff.set("variant", upt::to_string(h.variant));
    return h;
  }

  bool m_given(const upt::KvConfig& cfg) const {
    return (m_opt && m_opt->count() > 0) || cfg.has("m");
  }
};

struct TrainFlags {
  double lr = 1e-4, drop_factor = 10.0, alpha = 0.5, gamma = 2.0, wd = 1e-4, clip = 0.0,
         lambda_train = 1.0;
  std::size_t epochs = 20, drop_epoch = 10, batch = 1;
  CLI::Option *lr_opt = nullptr, *epochs_opt = nullptr, *drop_epoch_opt = nullptr,
              *drop_factor_opt = nullptr, *batch_opt = nullptr, *alpha_opt = nullptr,
              *gamma_opt = nullptr, *wd_opt = nullptr, *clip_opt = nullptr,
              *lambda_opt = nullptr;

  void attach(CLI::App* cmd) {
    lr_opt = cmd->add_option("--lr", lr, "initial learning rate");
    epochs_opt = cmd->add_option("--epochs", epochs, "training epochs");
    drop_epoch_opt = cmd->add_option("--lr-drop-epoch", drop_epoch, "epoch of the LR reduction");
    drop_factor_opt = cmd->add_option("--lr-drop-factor", drop_factor, "LR reduction factor");
    batch_opt = cmd->add_option("--batch-size", batch, "images per optimizer step");
    alpha_opt = cmd->add_option("--focal-alpha", alpha, "focal loss alpha");
    gamma_opt = cmd->add_option("--focal-gamma", gamma, "focal loss gamma");
    wd_opt = cmd->add_option("--weight-decay", wd, "decoupled weight decay");
    clip_opt = cmd->add_option("--grad-clip", clip, "gradient norm clip (0 disables)");
    lambda_opt = cmd->add_option("--lambda-train", lambda_train,
                                 "confidence exponent during training");
  }

  upt::TrainConfig resolve(const upt::KvConfig& cfg, std::uint64_t seed,
                           EffectiveConfig& eff) const {
    upt::TrainConfig t;
    t.lr = pick(lr_opt, lr, cfg, "lr", t.lr);
    t.epochs = pick(epochs_opt, epochs, cfg, "epochs", t.epochs);
    t.lr_drop_epoch = pick(drop_epoch_opt, drop_epoch, cfg, "lr_drop_epoch", t.lr_drop_epoch);
    t.lr_drop_factor =
        pick(drop_factor_opt, drop_factor, cfg, "lr_drop_factor", t.lr_drop_factor);
    t.batch_size = pick(batch_opt, batch, cfg, "batch_size", t.batch_size);
    t.focal_alpha = pick(alpha_opt, alpha, cfg, "focal_alpha", t.focal_alpha);
    t.focal_gamma = pick(gamma_opt, gamma, cfg, "focal_gamma", t.focal_gamma);
    t.weight_decay = pick(wd_opt, wd, cfg, "weight_decay", t.weight_decay);
    t.grad_clip = pick(clip_opt, clip, cfg, "grad_clip", t.grad_clip);
    t.lambda_train = pick(lambda_opt, lambda_train, cfg, "lambda_train", t.lambda_train);
    t.seed = seed;
    eff.set("lr", t.lr);
    eff.set("epochs", t.epochs);
    eff.set("lr_drop_epoch", t.lr_drop_epoch);
    eff.set("lr_drop_factor", t.lr_drop_factor);
    eff.set("batch_size", t.batch_size);
    eff.set("focal_alpha", t.focal_alpha);
    eff.set("focal_gamma", t.focal_gamma);
    eff.set("weight_decay", t.weight_decay);
    eff.set("grad_clip", t.grad_clip);
    eff.set("lambda_train", t.lambda_train);
    eff.set("seed", static_cast<std::size_t>(seed));
    return t;
  }
};

int run_bench(std::size_t m, std::size_t heads, std::size_t actions,
              const std::string& sizes_csv, std::uint64_t seed, const std::string& out_path) {
  upt::HeadConfig cfg;
  cfg.feature_dim = m;
  cfg.heads = heads;
  cfg.branches = heads;
  cfg.num_actions = actions;
  auto head = upt::make_interaction_head(cfg, seed);

  std::vector<std::size_t> sizes;
  std::stringstream ss(sizes_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) sizes.push_back(std::stoul(tok));
  if (sizes.size() < 2) throw upt::io_error("bench-pairwise: need at least two sizes");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> f(-1.0, 1.0), pos(0.2, 0.8), sz(0.1, 0.3);
  std::string out = "n n_humans pairs forward_ms pair_values\n";
  std::vector<double> log_n, log_k;
  for (std::size_t n : sizes) {
    upt::TokenSet tokens;
    std::size_t n_h = n / 2;
    for (std::size_t i = 0; i < n; ++i) {
      upt::Detection d;
      d.box = {pos(rng), pos(rng), sz(rng), sz(rng)};
      d.score = 0.9;
      d.class_id = i < n_h ? 0 : 1;
      for (std::size_t c = 0; c < m; ++c) d.feature.push_back(f(rng));
      if (i < n_h)
        tokens.human_indices.push_back(tokens.detections.size());
      else
        tokens.object_indices.push_back(tokens.detections.size());
      tokens.detections.push_back(std::move(d));
    }
    upt::NoGradGuard ng;
    auto t0 = std::chrono::steady_clock::now();
    auto fwd = upt::forward(head, tokens);
    auto t1 = std::chrono::steady_clock::now();
    double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    std::size_t pairs = fwd.pairs.size();
    char row[160];
    std::snprintf(row, sizeof(row), "%zu %zu %zu %.3f %zu\n", n, n_h, pairs, ms, pairs * m);
    out += row;
    log_n.push_back(std::log(static_cast<double>(n)));
    log_k.push_back(std::log(static_cast<double>(pairs)));
  }
  double mean_n = 0, mean_k = 0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    mean_n += log_n[i];
    mean_k += log_k[i];
  }
  mean_n /= static_cast<double>(log_n.size());
  mean_k /= static_cast<double>(log_k.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    num += (log_n[i] - mean_n) * (log_k[i] - mean_k);
    den += (log_n[i] - mean_n) * (log_n[i] - mean_n);
  }
  double exponent = num / den;
  char tail[64];
  std::snprintf(tail, sizeof(tail), "pair_count_exponent: %.6f\n", exponent);
  out += tail;

  auto stream = upt::detail::open_output(out_path);
  stream << out;
  std::cout << out;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unary-pairwise transformer interaction head tooling"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "global RNG seed (applies to the chosen subcommand)");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic HOI dataset");
  std::string gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "synthetic spec config file (key = value)");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train the interaction head");
  std::string tr_det, tr_gt, tr_cat, tr_val, tr_eval_det, tr_eval_gt, tr_cfg, tr_out;
  train_cmd->add_option("--detections", tr_det, "training detections (jsonl)")->required();
  train_cmd->add_option("--groundtruth", tr_gt, "training ground truth (jsonl)")->required();
  train_cmd->add_option("--categories", tr_cat, "category table (json)")->required();
  train_cmd->add_option("--validity", tr_val, "action validity table (json)")->required();
  train_cmd->add_option("--eval-detections", tr_eval_det, "held-out detections for toy mAP");
  train_cmd->add_option("--eval-groundtruth", tr_eval_gt, "held-out ground truth for toy mAP");
  train_cmd->add_option("--config", tr_cfg, "key = value config file");
  train_cmd->add_option("--out", tr_out, "output directory")->required();
  HeadFlags tr_head;
  tr_head.attach(train_cmd);
  TrainFlags tr_train;
  tr_train.attach(train_cmd);
  FilterFlags tr_filter;
  tr_filter.attach(train_cmd);
  bool tr_quiet = false;
  train_cmd->add_flag("--quiet", tr_quiet, "suppress per-epoch progress lines");

  auto* infer_cmd = app.add_subcommand("infer", "score human-object pairs");
  std::string in_det, in_ckpt, in_cat, in_val, in_cfg, in_out;
  double in_lambda = 2.8;
  std::size_t in_workers = 1;
  infer_cmd->add_option("--detections", in_det, "detections (jsonl)")->required();
  infer_cmd->add_option("--checkpoint", in_ckpt, "model checkpoint (json)")->required();
  infer_cmd->add_option("--categories", in_cat, "category table (json)")->required();
  infer_cmd->add_option("--validity", in_val, "action validity table (json)")->required();
  infer_cmd->add_option("--config", in_cfg, "key = value config file");
  infer_cmd->add_option("--out", in_out, "output predictions file (jsonl)")->required();
  auto* in_lambda_opt =
      infer_cmd->add_option("--lambda", in_lambda, "confidence exponent at inference");
  infer_cmd->add_option("--workers", in_workers, "parallel per-image workers");
  FilterFlags in_filter;
  in_filter.attach(infer_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "mAP evaluation of predictions");
  std::string ev_pred, ev_gt, ev_setting = "default", ev_rare, ev_out;
  double ev_iou = 0.5;
  eval_cmd->add_option("--predictions", ev_pred, "predictions (jsonl)")->required();
  eval_cmd->add_option("--groundtruth", ev_gt, "ground truth (jsonl)")->required();
  eval_cmd->add_option("--setting", ev_setting, "default | known-objects");
  eval_cmd->add_option("--rare", ev_rare, "rare interaction-class list (json)");
  eval_cmd->add_option("--iou-min", ev_iou, "matching IoU threshold");
  eval_cmd->add_option("--out", ev_out, "output report file")->required();

  auto* delta_cmd =
      app.add_subcommand("analyze-deltas", "score change between two checkpoints");
  std::string dl_det, dl_gt, dl_a, dl_b, dl_cat, dl_val, dl_out;
  double dl_threshold = 0.05, dl_lambda = 2.8;
  delta_cmd->add_option("--detections", dl_det, "detections (jsonl)")->required();
  delta_cmd->add_option("--groundtruth", dl_gt, "ground truth (jsonl)")->required();
  delta_cmd->add_option("--checkpoint-a", dl_a, "reference checkpoint")->required();
  delta_cmd->add_option("--checkpoint-b", dl_b, "modified checkpoint")->required();
  delta_cmd->add_option("--categories", dl_cat, "category table")->required();
  delta_cmd->add_option("--validity", dl_val, "action validity table")->required();
  delta_cmd->add_option("--threshold", dl_threshold, "easy-negative score threshold");
  delta_cmd->add_option("--lambda", dl_lambda, "confidence exponent");
  delta_cmd->add_option("--out", dl_out, "output directory")->required();
  FilterFlags dl_filter;
  dl_filter.attach(delta_cmd);

  auto* int_cmd = app.add_subcommand("intervene", "attention intervention on one image");
  std::string iv_det, iv_img, iv_ckpt, iv_edits, iv_cat, iv_val, iv_out;
  double iv_lambda = 2.8;
  int_cmd->add_option("--detections", iv_det, "detections (jsonl)")->required();
  int_cmd->add_option("--image-id", iv_img, "image to analyze")->required();
  int_cmd->add_option("--checkpoint", iv_ckpt, "model checkpoint")->required();
  int_cmd->add_option("--edits", iv_edits, "attention edit list (json)")->required();
  int_cmd->add_option("--categories", iv_cat, "category table")->required();
  int_cmd->add_option("--validity", iv_val, "action validity table")->required();
  int_cmd->add_option("--lambda", iv_lambda, "confidence exponent");
  int_cmd->add_option("--out", iv_out, "output result file (json)")->required();
  FilterFlags iv_filter;
  iv_filter.attach(int_cmd);

  auto* attn_cmd = app.add_subcommand("export-attn", "export attention maps for one image");
  std::string at_det, at_img, at_ckpt, at_cat, at_out;
  attn_cmd->add_option("--detections", at_det, "detections (jsonl)")->required();
  attn_cmd->add_option("--image-id", at_img, "image to analyze")->required();
  attn_cmd->add_option("--checkpoint", at_ckpt, "model checkpoint")->required();
  attn_cmd->add_option("--categories", at_cat, "category table")->required();
  attn_cmd->add_option("--out", at_out, "output attention file (jsonl)")->required();
  FilterFlags at_filter;
  at_filter.attach(attn_cmd);

  auto* bench_cmd = app.add_subcommand("bench-pairwise", 
                                       "measure pair-token growth across token counts");
  std::size_t bn_m = 64, bn_heads = 4, bn_actions = 3;
  std::string bn_sizes = "8,16,32,64", bn_out;
  bench_cmd->add_option("--m", bn_m, "feature dimension");
  bench_cmd->add_option("--heads", bn_heads, "attention heads");
  bench_cmd->add_option("--actions", bn_actions, "action classes");
  bench_cmd->add_option("--sizes", bn_sizes, "comma-separated token counts");
  bench_cmd->add_option("--out", bn_out, "output file")->required();

  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(gen_spec, seed, gen_out);

    if (train_cmd->parsed()) {
      upt::KvConfig cfg = tr_cfg.empty() ? upt::KvConfig() : upt::KvConfig::from_file(tr_cfg);
      EffectiveConfig eff;
      upt::HeadConfig head_cfg = tr_head.resolve(cfg, eff);
      upt::TrainConfig train_cfg = tr_train.resolve(cfg, seed, eff);
      upt::FilterConfig filter = tr_filter.resolve(cfg, eff);

      auto images = upt::read_detections(tr_det);
      auto gt = upt::read_groundtruth(tr_gt);
      auto cats = upt::read_categories(tr_cat);
      auto validity = upt::read_action_validity(tr_val);
      if (head_cfg.num_actions == 0) {
        head_cfg.num_actions = static_cast<std::size_t>(validity.num_actions);
      }
      // Feature dimension follows the data unless pinned by flag or config.
      if (!tr_head.m_given(cfg) && !images.empty() && !images[0].detections.empty()) {
        head_cfg.feature_dim = images[0].detections[0].feature.size();
      }
      eff.set("m", head_cfg.feature_dim);
      eff.set("num_actions", head_cfg.num_actions);
      eff.print("train");

      upt::Dataset data{std::move(images), std::move(gt)};
      upt::Dataset eval_set;
      const upt::Dataset* eval_ptr = nullptr;
      if (!tr_eval_det.empty()) {
        if (tr_eval_gt.empty()) {
          throw upt::io_error("--eval-detections requires --eval-groundtruth");
        }
        eval_set.images = upt::read_detections(tr_eval_det);
        eval_set.gt = upt::read_groundtruth(tr_eval_gt);
        eval_ptr = &eval_set;
      }

      auto head = upt::make_interaction_head(head_cfg, seed);
      auto metrics = upt::train(head, data, eval_ptr, cats, validity, filter, train_cfg,
                                tr_quiet ? nullptr : &std::cout);
      ensure_dir(tr_out);
      upt::save_checkpoint(join(tr_out, "checkpoint.json"), head);
      upt::write_metrics(join(tr_out, "metrics.jsonl"), metrics);
      std::cout << "train: wrote checkpoint and metrics to " << tr_out << std::endl;
      return 0;
    }

    if (infer_cmd->parsed()) {
      upt::KvConfig cfg = in_cfg.empty() ? upt::KvConfig() : upt::KvConfig::from_file(in_cfg);
      EffectiveConfig eff;
      upt::PipelineConfig pcfg;
      pcfg.filter = in_filter.resolve(cfg, eff);
      pcfg.lambda = pick(in_lambda_opt, in_lambda, cfg, "lambda", pcfg.lambda);
      pcfg.workers = in_workers;
      eff.set("lambda", pcfg.lambda);
      eff.set("workers", pcfg.workers);
      eff.print("infer");

      auto head = upt::load_checkpoint(in_ckpt);
      auto images = upt::read_detections(in_det);
      auto cats = upt::read_categories(in_cat);
      auto validity = upt::read_action_validity(in_val);
      auto records = upt::predict_records(head, images, cats, validity, pcfg);
      upt::write_predictions(in_out, records);
      std::cout << "infer: wrote " << records.size() << " predictions to " << in_out
                << std::endl;
      return 0;
    }

    if (eval_cmd->parsed()) {
      if (ev_setting != "default" && ev_setting != "known-objects") {
        throw upt::io_error("--setting must be 'default' or 'known-objects'");
      }
      EffectiveConfig eff;
      eff.set("setting", ev_setting);
      eff.set("iou_min", ev_iou);
      eff.print("eval");
      auto preds = upt::read_predictions(ev_pred);
      auto gt = upt::read_groundtruth(ev_gt);
      std::set<upt::InteractionClass> rare;
      const std::set<upt::InteractionClass>* rare_ptr = nullptr;
      if (!ev_rare.empty()) {
        rare = upt::read_rare_classes(ev_rare);
        rare_ptr = &rare;
      }
      auto report = upt::evaluate(preds, gt, ev_setting == "known-objects", ev_iou, rare_ptr);
      auto out = upt::detail::open_output(ev_out);
      out << upt::format_report(report);
      std::cout << "eval: full_map " << upt::detail::fmt_double(report.full_mean) << " over "
                << report.classes.size() << " classes -> " << ev_out << std::endl;
      return 0;
    }

    if (delta_cmd->parsed()) {
      EffectiveConfig eff;
      upt::PipelineConfig pcfg;
      upt::KvConfig cfg;
      pcfg.filter = dl_filter.resolve(cfg, eff);
      pcfg.lambda = dl_lambda;
      eff.set("lambda", dl_lambda);
      eff.set("threshold", dl_threshold);
      eff.print("analyze-deltas");

      auto model_a = upt::load_checkpoint(dl_a);
      auto model_b = upt::load_checkpoint(dl_b);
      upt::Dataset data;
      data.images = upt::read_detections(dl_det);
      data.gt = upt::read_groundtruth(dl_gt);
      auto cats = upt::read_categories(dl_cat);
      auto validity = upt::read_action_validity(dl_val);
      std::vector<upt::DeltaRecord> scatter;
      auto table = upt::score_deltas(model_a, model_b, data, cats, validity, pcfg, dl_threshold,
                                     &scatter);
      ensure_dir(dl_out);
      auto out = upt::detail::open_output(join(dl_out, "delta_table.txt"));
      out << upt::format_delta_table(table);
      upt::write_scatter(join(dl_out, "scatter.jsonl"), scatter);
      std::cout << upt::format_delta_table(table);
      return 0;
    }

    if (int_cmd->parsed()) {
      EffectiveConfig eff;
      upt::PipelineConfig pcfg;
      upt::KvConfig cfg;
      pcfg.filter = iv_filter.resolve(cfg, eff);
      pcfg.lambda = iv_lambda;
      eff.set("lambda", iv_lambda);
      eff.set("image_id", iv_img);
      eff.print("intervene");

      auto head = upt::load_checkpoint(iv_ckpt);
      auto images = upt::read_detections(iv_det);
      const auto& img = find_image(images, iv_img);
      auto cats = upt::read_categories(iv_cat);
      auto validity = upt::read_action_validity(iv_val);
      auto edits = read_edits(iv_edits);
      auto outcome = upt::intervene_attention(head, img, edits, cats, validity, pcfg);

      nlohmann::json j;
      j["image_id"] = iv_img;
      auto pairs = nlohmann::json::array();
      for (const auto& p : outcome.pairs) pairs.push_back({p.i, p.j});
      j["pairs"] = std::move(pairs);
      j["baseline"] = outcome.baseline;
      j["edited"] = outcome.edited;
      auto out = upt::detail::open_output(iv_out);
      out << j.dump(2) << '\n';
      std::cout << "intervene: wrote " << iv_out << std::endl;
      return 0;
    }

    if (attn_cmd->parsed()) {
      EffectiveConfig eff;
      upt::PipelineConfig pcfg;
      upt::KvConfig cfg;
      pcfg.filter = at_filter.resolve(cfg, eff);
      eff.set("image_id", at_img);
      eff.print("export-attn");

      auto head = upt::load_checkpoint(at_ckpt);
      auto images = upt::read_detections(at_det);
      const auto& img = find_image(images, at_img);
      auto cats = upt::read_categories(at_cat);
      upt::export_attention(head, img, cats, pcfg, at_out);
      std::cout << "export-attn: wrote " << at_out << std::endl;
      return 0;
    }

    if (bench_cmd->parsed()) {
      return run_bench(bn_m, bn_heads, bn_actions, bn_sizes, seed, bn_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
