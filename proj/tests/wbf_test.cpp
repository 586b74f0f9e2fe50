#include <gtest/gtest.h>

#include <map>

#include "btcxr/manifest.hpp"
#include "btcxr/wbf.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace btcxr;
using namespace btcxr::wbf;

namespace {

const std::string kFixtures = BTCXR_FIXTURE_DIR;

TEST(FuseImage, SingletonIsUnchanged) {
  const Box b(2, 0.1, 0.2, 0.3, 0.4, 0.65, "R1");
  const auto out = fuse_image({b}, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].members.size(), 1u);
  EXPECT_EQ(out[0].fused, b);
}

TEST(FuseImage, IdenticalBoxesAverageScore) {
  const auto out = fuse_image({Box(0, 0.1, 0.1, 0.5, 0.5, 0.8), Box(0, 0.1, 0.1, 0.5, 0.5, 0.6)}, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_DOUBLE_EQ(out[0].fused.x_min(), 0.1);
  EXPECT_DOUBLE_EQ(out[0].fused.y_max(), 0.5);
  EXPECT_NEAR(out[0].fused.score(), 0.7, 1e-15);
}

TEST(FuseImage, OverlapBelowThresholdKeepsTwoClusters) {
  const Box a(0, 0, 0, 0.4, 0.4), b(0, 0, 0, 0.2, 0.2);
  EXPECT_NEAR(iou(a, b), 0.25, 1e-15);
  EXPECT_EQ(fuse_image({a, b}, {}).size(), 2u);
}

TEST(FuseImage, DifferentClassesNeverMerge) {
  EXPECT_EQ(fuse_image({Box(0, 0.1, 0.1, 0.5, 0.5), Box(1, 0.1, 0.1, 0.5, 0.5)}, {}).size(), 2u);
}

TEST(FuseImage, RaterWeightsPullTheFusedBox) {
  FusionConfig cfg;
  cfg.rater_weights = {{"R1", 3.0}, {"R2", 1.0}};
  const auto out = fuse_image({Box(0, 0.1, 0.1, 0.5, 0.5, 1.0, "R1"), Box(0, 0.2, 0.1, 0.5, 0.5, 1.0, "R2")}, cfg);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].fused.x_min(), 0.125, 1e-15);
}

TEST(FuseImage, ScaledScoreModePenalizesLoneRaters) {
  FusionConfig cfg;
  cfg.score_mode = ScoreMode::mean_scaled_by_rater_count;
  const auto out = fuse_image({Box(0, 0.1, 0.1, 0.5, 0.5, 0.9, "R1"), Box(0, 0.1, 0.1, 0.5, 0.5, 0.9, "R2"),
                               Box(0, 0.6, 0.6, 0.9, 0.9, 0.9, "R3")},
                              cfg);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].fused.score(), 0.9 * 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(out[1].fused.score(), 0.9 / 3.0, 1e-15);
}

TEST(FusionConfig, Validation) {
  FusionConfig cfg;
  cfg.iou_threshold = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.iou_threshold = 1.0;
  EXPECT_NO_THROW(cfg.validate());
  cfg.rater_weights["R1"] = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(FuseImage, MatchesGreedyReplayOracle) {
  SplitMix64 rng(404);
  FusionConfig cfg;
  cfg.rater_weights = {{"R0", 1.0}, {"R1", 2.0}, {"R2", 0.5}};
  for (int t = 0; t < 300; ++t) {
    const auto boxes = testutil::rated_boxes(rng, 8, 3);
    std::vector<oracle::OracleBox> ob;
    for (const auto& b : boxes) {
      ob.push_back({b.class_id(), b.x_min(), b.y_min(), b.x_max(), b.y_max(), b.score(), cfg.weight_of(b)});
    }
    auto expected = oracle::wbf_replay(ob, cfg.iou_threshold);
    auto got = fuse_image(boxes, cfg);
    ASSERT_EQ(got.size(), expected.size()) << "trial " << t;
    // Compare as multisets keyed by (class, member count, coordinates).
    std::vector<bool> used(expected.size(), false);
    for (const auto& g : got) {
      bool found = false;
      for (std::size_t k = 0; k < expected.size() && !found; ++k) {
        const auto& e = expected[k];
        if (used[k] || e.cls != g.fused.class_id() || e.members.size() != g.members.size()) continue;
        if (std::abs(e.x0 - g.fused.x_min()) < 1e-12 && std::abs(e.y0 - g.fused.y_min()) < 1e-12 &&
            std::abs(e.x1 - g.fused.x_max()) < 1e-12 && std::abs(e.y1 - g.fused.y_max()) < 1e-12 &&
            std::abs(e.score - g.fused.score()) < 1e-12) {
          used[k] = found = true;
        }
      }
      EXPECT_TRUE(found) << "trial " << t;
    }
  }
}

TEST(FuseImage, StructuralProperties) {
  SplitMix64 rng(77);
  for (int t = 0; t < 500; ++t) {
    const auto boxes = testutil::rated_boxes(rng, 10, 3);
    FusionConfig cfg;
    const auto out = fuse_image(boxes, cfg);

    std::size_t members = 0;
    for (const auto& c : out) {
      members += c.members.size();
      double x0 = 1, y0 = 1, x1 = 0, y1 = 0;
      double wx = 0, w = 0;
      for (const auto& m : c.members) {
        EXPECT_EQ(m.class_id(), c.fused.class_id());
        x0 = std::min(x0, m.x_min());
        y0 = std::min(y0, m.y_min());
        x1 = std::max(x1, m.x_max());
        y1 = std::max(y1, m.y_max());
        wx += m.score() * m.x_min();
        w += m.score();
      }
      // Envelope of member coordinates, with a little slack for rounding.
      EXPECT_GE(c.fused.x_min(), x0 - 1e-15);
      EXPECT_GE(c.fused.y_min(), y0 - 1e-15);
      EXPECT_LE(c.fused.x_max(), x1 + 1e-15);
      EXPECT_LE(c.fused.y_max(), y1 + 1e-15);
      // Recomputable from members.
      EXPECT_NEAR(c.fused.x_min(), wx / w, 1e-12);
    }
    EXPECT_EQ(members, boxes.size());
    EXPECT_LE(out.size(), boxes.size());

    // Equality of counts iff no same-class pair exceeded the threshold. Every
    // merge needs one such pair, and a pair of singletons above the threshold
    // forces a merge on the second one processed.
    bool any_pair = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      for (std::size_t j = i + 1; j < boxes.size(); ++j) {
        if (boxes[i].class_id() == boxes[j].class_id() && iou(boxes[i], boxes[j]) > cfg.iou_threshold) any_pair = true;
      }
    }
    EXPECT_EQ(out.size() == boxes.size(), !any_pair) << "trial " << t;
  }
}

TEST(FuseImage, EqualWeightsGiveArithmeticMean) {
  SplitMix64 rng(9);
  for (int t = 0; t < 200; ++t) {
    const auto base = testutil::random_box(rng, 0, 0.2);
    std::vector<Box> boxes;
    const std::size_t n = 2 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) boxes.push_back(testutil::jitter_box(rng, base, 0.01, 0.5));
    const auto out = fuse_image(boxes, {});
    ASSERT_EQ(out.size(), 1u);
    double x0 = 0, y1 = 0;
    for (const auto& b : boxes) {
      x0 += b.x_min();
      y1 += b.y_max();
    }
    EXPECT_NEAR(out[0].fused.x_min(), x0 / static_cast<double>(n), 1e-14);
    EXPECT_NEAR(out[0].fused.y_max(), y1 / static_cast<double>(n), 1e-14);
    EXPECT_NEAR(out[0].fused.score(), 0.5, 1e-15);
  }
}

TEST(FuseManifest, SingletonImagesOnlyLoseRaterIds) {
  DatasetManifest m;
  m.label_names = {"A", "B"};
  m.images.push_back({"a", 100, 100, {Box(0, 0.1, 0.1, 0.2, 0.2, 1.0, "R1")}, {}, Source::vindr});
  m.images.push_back({"b", 100, 100, {Box(1, 0.3, 0.1, 0.6, 0.2, 0.4, "R2")}, {}, Source::vindr});
  m.images.push_back({"c", 100, 100, {}, {}, Source::vindr});
  const auto out = fuse_manifest(m, {});
  ASSERT_EQ(out.images.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_EQ(out.images[i].boxes.size(), m.images[i].boxes.size());
    for (std::size_t k = 0; k < out.images[i].boxes.size(); ++k) {
      EXPECT_EQ(out.images[i].boxes[k], m.images[i].boxes[k].without_rater());
    }
  }
}

TEST(FuseManifest, ThreeRatersCollapseToOneBox) {
  SplitMix64 rng(5);
  DatasetManifest m;
  m.label_names = {"Nodule"};
  for (int i = 0; i < 50; ++i) {
    const auto base = testutil::random_box(rng, 0, 0.2);
    ImageRecord im{"img" + std::to_string(i), 512, 512, {}, {}, Source::vindr};
    for (int r = 0; r < 3; ++r) im.boxes.push_back(testutil::jitter_box(rng, base, 0.01, 1.0, "R" + std::to_string(r)));
    ASSERT_EQ(oracle::connected_groups(im.boxes, 0.4), 1u);
    m.images.push_back(std::move(im));
  }
  const auto out = fuse_manifest(m, {});
  for (const auto& im : out.images) EXPECT_EQ(im.boxes.size(), 1u);
}

TEST(FuseManifest, PerClassHistogramNeverGrows) {
  const auto m = parse_vindr_csv(io::read_file(kFixtures + "/vindr_mini.csv"),
                                 parse_dims_csv(io::read_file(kFixtures + "/vindr_mini_dims.csv")));
  const auto out = fuse_manifest(m, {});
  std::map<int, int> before, after;
  for (const auto& im : m.images) {
    for (const auto& b : im.boxes) ++before[b.class_id()];
  }
  for (const auto& im : out.images) {
    for (const auto& b : im.boxes) ++after[b.class_id()];
  }
  for (const auto& [cls, n] : before) EXPECT_LE(after[cls], n) << "class " << cls;
  for (const auto& [cls, n] : after) EXPECT_GT(before[cls], 0);
  EXPECT_LT(box_count(out), box_count(m));
}

TEST(FuseManifest, ThreadCountDoesNotChangeOutput) {
  SplitMix64 rng(12);
  DatasetManifest m;
  m.label_names = {"A", "B", "C"};
  for (int i = 0; i < 200; ++i) {
    m.images.push_back({"img" + std::to_string(i), 256, 256, testutil::rated_boxes(rng, 8, 3), {}, Source::vindr});
  }
  EXPECT_EQ(dump_manifest(fuse_manifest(m, {}, 1)), dump_manifest(fuse_manifest(m, {}, 8)));
}

}  // namespace
