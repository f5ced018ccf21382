#include "upt/analysis.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using upt::AttnEdit;
using upt::HeadConfig;
using upt::PipelineConfig;
using upt::SynthSpec;

namespace {

struct Fixture {
  upt::SynthData data;
  upt::InteractionHead head;
  PipelineConfig cfg;

  Fixture()
      : data(upt::gen_synthetic(make_spec(), 61)), head(upt::make_interaction_head(make_head(), 62)) {}

  static SynthSpec make_spec() {
    SynthSpec spec;
    spec.train_images = 8;
    spec.test_images = 0;
    spec.feature_dim = 16;
    return spec;
  }
  static HeadConfig make_head() {
    HeadConfig cfg;
    cfg.feature_dim = 16;
    cfg.heads = 2;
    cfg.coop_layers = 1;
    cfg.comp_layers = 1;
    cfg.branches = 2;
    cfg.num_actions = 3;
    return cfg;
  }
};

TEST(ScoreDeltas, IdenticalModelsGiveZeroDeltasAndPartition) {
  Fixture f;
  std::vector<upt::DeltaRecord> scatter;
  auto table = upt::score_deltas(f.head, f.head, f.data.train, f.data.categories,
                                 f.data.validity, f.cfg, 0.05, &scatter);
  EXPECT_EQ(table.positives.count + table.easy_negatives.count + table.hard_negatives.count,
            scatter.size());
  for (const auto& r : scatter) EXPECT_EQ(r.delta, 0.0);
  EXPECT_EQ(table.positives.mean, 0.0);
  EXPECT_EQ(table.hard_negatives.median, 0.0);

  // Bucketing is deterministic and must partition all observations.
  std::size_t pos = 0, easy = 0, hard = 0;
  for (const auto& r : scatter) {
    if (r.positive)
      ++pos;
    else if (r.ref_score < 0.05)
      ++easy;
    else
      ++hard;
  }
  EXPECT_EQ(pos, table.positives.count);
  EXPECT_EQ(easy, table.easy_negatives.count);
  EXPECT_EQ(hard, table.hard_negatives.count);
}

TEST(ScoreDeltas, DifferentModelsProduceNonzeroDeltas) {
  Fixture f;
  auto other = upt::make_interaction_head(Fixture::make_head(), 63);
  std::vector<upt::DeltaRecord> scatter;
  upt::score_deltas(f.head, other, f.data.train, f.data.categories, f.data.validity, f.cfg,
                    0.05, &scatter);
  bool any = false;
  for (const auto& r : scatter) any = any || r.delta != 0.0;
  EXPECT_TRUE(any);
}

TEST(ScoreDeltas, TableFormatHasHeaderRow) {
  upt::DeltaTable t;
  t.positives = {3, 0.5, 0.25};
  std::string text = upt::format_delta_table(t);
  EXPECT_NE(text.find("bucket count mean median"), std::string::npos);
  EXPECT_NE(text.find("positives 3 "), std::string::npos);
  EXPECT_NE(text.find("easy_negatives 0 "), std::string::npos);
}

TEST(Intervene, EmptyEditListIsBitExactIdentity) {
  Fixture f;
  const auto& img = f.data.train.images[0];
  auto outcome = upt::intervene_attention(f.head, img, {}, f.data.categories, f.data.validity,
                                          f.cfg);
  ASSERT_EQ(outcome.baseline.size(), outcome.edited.size());
  for (std::size_t k = 0; k < outcome.baseline.size(); ++k) {
    EXPECT_EQ(outcome.baseline[k], outcome.edited[k]);
  }
}

TEST(Intervene, NegInfEditZeroesExportedWeight) {
  Fixture f;
  const auto& img = f.data.train.images[0];
  auto tokens = upt::build_tokens(img, f.data.categories, f.cfg.filter);
  ASSERT_GE(tokens.size(), 2u);
  std::vector<AttnEdit> edits{{0, 0, 1, AttnEdit::Kind::neg_inf, 0.0}};
  upt::NoGradGuard ng;
  auto fwd = upt::forward(f.head, tokens, edits, /*collect_attention=*/true);
  for (const auto& w : fwd.attn.unary[0]) EXPECT_EQ(w.at({0, 1}), 0.0);
}

TEST(Intervene, SetWeightBypassesRenormalization) {
  Fixture f;
  const auto& img = f.data.train.images[0];
  auto tokens = upt::build_tokens(img, f.data.categories, f.cfg.filter);
  ASSERT_GE(tokens.size(), 2u);
  std::vector<AttnEdit> edits{{0, 0, 1, AttnEdit::Kind::set_weight, 1.0}};
  upt::NoGradGuard ng;
  auto fwd = upt::forward(f.head, tokens, edits, /*collect_attention=*/true);
  for (const auto& w : fwd.attn.unary[0]) {
    EXPECT_EQ(w.at({0, 1}), 1.0);
    double row = 0.0;
    for (std::size_t j = 0; j < tokens.size(); ++j) row += w.at({0, j});
    EXPECT_GT(row, 1.0 + 1e-9);  // row deliberately not re-normalized
  }
}

TEST(Intervene, InvalidIndexThrows) {
  Fixture f;
  const auto& img = f.data.train.images[0];
  std::vector<AttnEdit> edits{{0, 99, 0, AttnEdit::Kind::neg_inf, 0.0}};
  EXPECT_THROW(upt::intervene_attention(f.head, img, edits, f.data.categories, f.data.validity,
                                        f.cfg),
               std::out_of_range);
}

TEST(ExportAttention, MatricesAreRowStochasticAndRoundTrip) {
  Fixture f;
  const auto& img = f.data.train.images[1];
  auto dir = std::filesystem::temp_directory_path() / "upt_analysis_test";
  std::filesystem::create_directories(dir);
  std::string path = (dir / "attn.jsonl").string();
  upt::export_attention(f.head, img, f.data.categories, f.cfg, path);

  auto tokens = upt::build_tokens(img, f.data.categories, f.cfg.filter);
  upt::NoGradGuard ng;
  auto fwd = upt::forward(f.head, tokens, {}, true);

  auto parsed = upt::read_attention(path);
  EXPECT_EQ(parsed.image_id, img.image_id);
  EXPECT_EQ(parsed.pairs.size(), fwd.pairs.size());
  std::size_t n = tokens.size(), k = fwd.pairs.size();
  std::size_t heads = f.head.config.heads;
  ASSERT_EQ(parsed.maps.size(), heads * 2);  // 1 coop + 1 comp layer
  for (const auto& m : parsed.maps) {
    std::size_t dim = m.kind == "unary" ? n : k;
    EXPECT_EQ(m.rows, dim);
    EXPECT_EQ(m.cols, dim);
    for (std::size_t r = 0; r < m.rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < m.cols; ++c) total += m.values[r * m.cols + c];
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
  // Round trip reproduces the in-memory weights exactly.
  for (const auto& m : parsed.maps) {
    const auto& source = m.kind == "unary" ? fwd.attn.unary : fwd.attn.pairwise;
    const upt::Tensor& w = source[m.layer][m.head];
    EXPECT_EQ(m.values, w.values());
  }
}

}  // namespace
