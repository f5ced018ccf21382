#include "upt/train.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using upt::HeadConfig;
using upt::SynthSpec;
using upt::TrainConfig;

namespace {

HeadConfig tiny_head_config() {
  HeadConfig cfg;
  cfg.feature_dim = 16;
  cfg.heads = 2;
  cfg.coop_layers = 1;
  cfg.comp_layers = 1;
  cfg.branches = 2;
  cfg.num_actions = 3;
  return cfg;
}

SynthSpec tiny_spec(std::size_t images) {
  SynthSpec spec;
  spec.train_images = images;
  spec.test_images = 10;
  spec.feature_dim = 16;
  return spec;
}

TEST(Schedule, LearningRateDropsByFactorAtEpoch) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(upt::lr_at_epoch(cfg, 0), 1e-4);
  EXPECT_DOUBLE_EQ(upt::lr_at_epoch(cfg, 9), 1e-4);
  EXPECT_DOUBLE_EQ(upt::lr_at_epoch(cfg, 10), 1e-4 / 10.0);
  EXPECT_NEAR(upt::lr_at_epoch(cfg, 10), 1e-5, 1e-20);
  EXPECT_DOUBLE_EQ(upt::lr_at_epoch(cfg, 19), 1e-4 / 10.0);
}

TEST(Labels, BoxMatchingAssignsPositives) {
  // One human, one object; GT matches them for action 1.
  upt::ImageDetections img;
  img.image_id = "i";
  upt::Detection h;
  h.box = {0.3, 0.5, 0.2, 0.2};
  h.score = 0.9;
  h.class_id = 0;
  h.feature.assign(16, 0.1);
  upt::Detection o;
  o.box = {0.6, 0.5, 0.2, 0.2};
  o.score = 0.8;
  o.class_id = 1;
  o.feature.assign(16, -0.1);
  img.detections = {h, o};

  upt::GroundTruthPair g{"i", {0.31, 0.5, 0.2, 0.2}, {0.6, 0.51, 0.2, 0.2}, 1, 0};
  upt::CategoryTable cats;
  cats.entries = {{0, "person", true}, {1, "thing", false}};
  upt::ActionValidity validity;
  validity.num_actions = 3;
  validity.valid[0] = {};
  validity.valid[1] = {0, 1};

  TrainConfig tcfg;
  auto ex = upt::build_train_example(img, {&g}, cats, validity, upt::FilterConfig{}, tcfg, 3);
  ASSERT_EQ(ex.pairs.size(), 1u);
  EXPECT_DOUBLE_EQ(ex.targets.at({0, 0}), 1.0);  // matched action
  EXPECT_DOUBLE_EQ(ex.targets.at({0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(ex.mask.at({0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(ex.mask.at({0, 2}), 0.0);  // invalid action slot
  EXPECT_DOUBLE_EQ(ex.confidence.at({0, 0}), 0.9 * 0.8);
}

TEST(Train, LossDecreasesOnTinySyntheticRun) {
  auto data = upt::gen_synthetic(tiny_spec(40), 21);
  auto head = upt::make_interaction_head(tiny_head_config(), 22);
  TrainConfig tcfg;
  tcfg.epochs = 3;
  tcfg.lr = 1e-3;  // short smoke run, faster rate
  tcfg.lr_drop_epoch = 99;
  tcfg.seed = 23;
  auto metrics = upt::train(head, data.train, &data.test, data.categories, data.validity,
                            upt::FilterConfig{}, tcfg);
  ASSERT_EQ(metrics.size(), 3u);
  for (const auto& m : metrics) EXPECT_TRUE(std::isfinite(m.loss));
  EXPECT_LT(metrics.back().loss, metrics.front().loss);
}

TEST(Train, DeterministicPerSeed) {
  auto data = upt::gen_synthetic(tiny_spec(15), 31);
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.seed = 32;
  auto run = [&]() {
    auto head = upt::make_interaction_head(tiny_head_config(), 33);
    return upt::train(head, data.train, &data.test, data.categories, data.validity,
                      upt::FilterConfig{}, tcfg);
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].loss, b[i].loss);
    EXPECT_EQ(a[i].toy_map, b[i].toy_map);
  }
}

TEST(Train, MetricsFileBitIdenticalAcrossRuns) {
  auto data = upt::gen_synthetic(tiny_spec(10), 41);
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.seed = 42;
  auto dir = std::filesystem::temp_directory_path() / "upt_train_test";
  std::filesystem::create_directories(dir);
  auto write_run = [&](const std::string& name) {
    auto head = upt::make_interaction_head(tiny_head_config(), 43);
    auto metrics = upt::train(head, data.train, nullptr, data.categories, data.validity,
                              upt::FilterConfig{}, tcfg);
    std::string path = (dir / name).string();
    upt::write_metrics(path, metrics);
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(write_run("m1.jsonl"), write_run("m2.jsonl"));
}

TEST(Train, EmptyDatasetRejected) {
  auto head = upt::make_interaction_head(tiny_head_config(), 51);
  upt::Dataset empty;
  upt::CategoryTable cats;
  cats.entries = {{0, "person", true}};
  upt::ActionValidity validity;
  validity.num_actions = 3;
  EXPECT_THROW(upt::train(head, empty, nullptr, cats, validity, upt::FilterConfig{},
                          TrainConfig{}),
               std::invalid_argument);
}

}  // namespace
