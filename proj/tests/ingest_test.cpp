#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "btcxr/manifest.hpp"
#include "test_util.hpp"

using namespace btcxr;

namespace {

const std::string kFixtures = BTCXR_FIXTURE_DIR;

ErrorCode code_of(const std::function<void()>& fn, std::string* context = nullptr) {
  try {
    fn();
  } catch (const Error& e) {
    if (context) *context = e.context();
    return e.code();
  }
  ADD_FAILURE() << "expected btcxr::Error";
  return ErrorCode::InvalidArgument;
}

const DimsTable kDims{{"A", {1000, 500}}, {"B", {800, 800}}};

TEST(ParseVindr, ThreeRowFixture) {
  const std::string csv =
      "image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max\n"
      "A,Nodule/Mass,8,R1,100,50,300,150\n"
      "A,Nodule/Mass,8,R2,110,60,310,140\n"
      "B,No finding,14,R1,,,,\n";
  const auto m = parse_vindr_csv(csv, kDims);
  ASSERT_EQ(m.images.size(), 2u);
  EXPECT_EQ(m.images[0].image_id, "A");
  ASSERT_EQ(m.images[0].boxes.size(), 2u);
  EXPECT_TRUE(m.images[1].boxes.empty());
  EXPECT_EQ(m.images[0].boxes[0], Box(8, 0.1, 0.1, 0.3, 0.3, 1.0, "R1"));
  EXPECT_EQ(*m.images[0].boxes[1].rater_id(), "R2");
  ASSERT_EQ(m.label_names.size(), 9u);
  EXPECT_EQ(m.label_names[8], "Nodule/Mass");
  EXPECT_NO_THROW(m.validate());
}

TEST(ParseVindr, InvertedBoxIsMalformedRowWithIndex) {
  const std::string csv =
      "image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max\n"
      "A,Nodule/Mass,8,R1,100,50,300,150\n"
      "A,Nodule/Mass,8,R1,400,50,300,150\n";
  std::string ctx;
  EXPECT_EQ(code_of([&] { parse_vindr_csv(csv, kDims); }, &ctx), ErrorCode::MalformedRow);
  EXPECT_EQ(ctx, "row 3");
}

TEST(ParseVindr, MissingDimensionAndBadNumbers) {
  const std::string header = "image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max\n";
  EXPECT_EQ(code_of([&] { parse_vindr_csv(header + "Z,Nodule/Mass,8,R1,1,1,2,2\n", kDims); }),
            ErrorCode::MissingDimension);
  std::string ctx;
  EXPECT_EQ(code_of([&] { parse_vindr_csv(header + "A,Nodule/Mass,8,R1,1,x,2,2\n", kDims); }, &ctx),
            ErrorCode::MalformedRow);
  EXPECT_EQ(ctx, "row 2");
}

TEST(ParseVindr, ZeroWidthBoxIsDegenerateWithRowContext) {
  const std::string csv =
      "image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max\n"
      "A,Nodule/Mass,8,R1,100,50,100,150\n";
  std::string ctx;
  EXPECT_EQ(code_of([&] { parse_vindr_csv(csv, kDims); }, &ctx), ErrorCode::DegenerateBox);
  EXPECT_EQ(ctx, "row 2");
}

TEST(ParseVindr, BoxesPastImageEdgeAreClipped) {
  const std::string csv =
      "image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max\n"
      "A,Nodule/Mass,0,R1,900,400,1100,600\n";
  const auto m = parse_vindr_csv(csv, kDims);
  EXPECT_EQ(m.images[0].boxes[0], Box(0, 0.9, 0.8, 1.0, 1.0, 1.0, "R1"));
}

TEST(ParseVindr, NoFindingMatchIsCaseInsensitiveAndTrimmed) {
  const std::string csv =
      "image_id,class_name,class_id,rad_id,x_min,y_min,x_max,y_max\n"
      "B,  NO FINDING ,14,R1,,,,\n";
  const auto m = parse_vindr_csv(csv, kDims);
  ASSERT_EQ(m.images.size(), 1u);
  EXPECT_TRUE(m.images[0].boxes.empty());
  EXPECT_TRUE(m.label_names.empty());
}

TEST(ParseVindr, DenormalizedBoxesReproducePixels) {
  const auto csv_text = io::read_file(kFixtures + "/vindr_mini.csv");
  const auto dims = parse_dims_csv(io::read_file(kFixtures + "/vindr_mini_dims.csv"));
  const auto m = quantized(parse_vindr_csv(csv_text, dims));
  const auto table = csv::parse(csv_text);
  std::map<std::string, std::vector<std::array<double, 4>>> pixels;
  for (const auto& r : table.rows) {
    if (r[4].empty()) continue;
    pixels[r[0]].push_back({std::stod(r[4]), std::stod(r[5]), std::stod(r[6]), std::stod(r[7])});
  }
  for (const auto& im : m.images) {
    const auto& px = pixels[im.image_id];
    ASSERT_EQ(px.size(), im.boxes.size());
    for (std::size_t k = 0; k < px.size(); ++k) {
      EXPECT_NEAR(im.boxes[k].x_min() * im.width, px[k][0], 0.5);
      EXPECT_NEAR(im.boxes[k].y_min() * im.height, px[k][1], 0.5);
      EXPECT_NEAR(im.boxes[k].x_max() * im.width, px[k][2], 0.5);
      EXPECT_NEAR(im.boxes[k].y_max() * im.height, px[k][3], 0.5);
    }
  }
}

TEST(ParseVindr, MiniFixtureSchema) {
  const auto m = parse_vindr_csv(io::read_file(kFixtures + "/vindr_mini.csv"),
                                 parse_dims_csv(io::read_file(kFixtures + "/vindr_mini_dims.csv")));
  EXPECT_EQ(m.images.size(), 3u);
  EXPECT_EQ(m.images[0].boxes.size(), 5u);
  EXPECT_EQ(m.images[1].boxes.size(), 0u);
  EXPECT_EQ(m.images[2].boxes.size(), 3u);
  EXPECT_EQ(m.label_names.size(), 12u);
  EXPECT_EQ(m.label_names[11], "Pleural thickening");
  EXPECT_EQ(m.label_names[1], "class_1");
}

TEST(ParseNih, PipeSeparatedLabels) {
  const auto m = parse_nih_csv("Image Index,Finding Labels\nimg1.png,Cardiomegaly|Effusion\nimg2.png,No Finding\n");
  ASSERT_EQ(m.images.size(), 2u);
  EXPECT_EQ(m.label_names, (std::vector<std::string>{"Cardiomegaly", "Effusion"}));
  EXPECT_EQ(m.images[0].labels, (std::vector<int>{0, 1}));
  EXPECT_TRUE(m.images[1].labels.empty());
  EXPECT_EQ(m.images[0].width, kDefaultNihSide);
}

TEST(ParseNih, EmptyIdIsMalformed) {
  EXPECT_EQ(code_of([] { parse_nih_csv("Image Index,Finding Labels\n,Hernia\n"); }), ErrorCode::MalformedRow);
}

TEST(ParseNih, DimensionsFromOriginalImageColumns) {
  const auto m = parse_nih_csv(io::read_file(kFixtures + "/nih_mini.csv"));
  ASSERT_EQ(m.images.size(), 10u);
  EXPECT_EQ(m.images[0].width, 2682);
  EXPECT_EQ(m.images[0].height, 2749);
}

TEST(ParseNih, LabelHistogramMatchesLineCountOracle) {
  const std::string text = io::read_file(kFixtures + "/nih_mini.csv");
  const auto m = parse_nih_csv(text);

  // Oracle: split each raw line on ',' and take the second field, then '|'.
  std::map<std::string, int> expected;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  int lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++lines;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    std::string field = line.substr(c1 + 1, c2 - c1 - 1);
    std::istringstream fs(field);
    std::string lab;
    while (std::getline(fs, lab, '|')) {
      if (lab != "No Finding") ++expected[lab];
    }
  }
  std::map<std::string, int> got;
  for (const auto& im : m.images) {
    for (int l : im.labels) ++got[m.label_names[static_cast<std::size_t>(l)]];
  }
  EXPECT_EQ(static_cast<int>(m.images.size()), lines);
  EXPECT_EQ(got, expected);
}

TEST(Manifest, RoundTripIsIdentity) {
  const auto m = parse_vindr_csv(io::read_file(kFixtures + "/vindr_mini.csv"),
                                 parse_dims_csv(io::read_file(kFixtures + "/vindr_mini_dims.csv")));
  const auto path = std::filesystem::temp_directory_path() / "btcxr_manifest_rt.json";
  save_manifest(m, path);
  EXPECT_EQ(load_manifest(path), quantized(m));
  std::filesystem::remove(path);
}

TEST(Manifest, UnknownVersionIsRejected) {
  EXPECT_EQ(code_of([] { parse_manifest(R"({"version":"99","label_names":[],"images":[],"provenance":{}})"); }),
            ErrorCode::SchemaVersionMismatch);
}

TEST(Manifest, FourteenLabelOrderSurvivesRoundTrip) {
  DatasetManifest m;
  m.label_names = {"Aortic enlargement", "Atelectasis", "Calcification", "Cardiomegaly", "Consolidation", "ILD",
                   "Infiltration", "Lung Opacity", "Nodule/Mass", "Other lesion", "Pleural effusion",
                   "Pleural thickening", "Pneumothorax", "Pulmonary fibrosis"};
  m.provenance["source"] = "canonical";
  for (int k = 0; k < 14; ++k) {
    ImageRecord im{"img" + std::to_string(k), 1024, 1024, {Box(13 - k, 0.1, 0.1, 0.2, 0.25)}, {}, Source::canonical};
    m.images.push_back(im);
  }
  const auto back = parse_manifest(dump_manifest(m));
  EXPECT_EQ(back.label_names, m.label_names);
  EXPECT_EQ(back, m);
}

TEST(Manifest, KeysAndPrecisionOnDisk) {
  DatasetManifest m;
  m.label_names = {"A"};
  m.images.push_back({"x", 10, 10, {Box(0, 1.0 / 3.0, 0.1, 0.5, 0.6, 1.0, "R1")}, {0}, Source::canonical});
  const std::string text = dump_manifest(m);
  EXPECT_NE(text.find("\"x_min\": 0.333333333,"), std::string::npos) << text;
  const auto first = text.find("\"version\"");
  EXPECT_LT(first, text.find("\"label_names\""));
  EXPECT_LT(text.find("\"label_names\""), text.find("\"images\""));
  EXPECT_LT(text.find("\"images\""), text.find("\"provenance\""));
}

// Random manifests: load(save(m)) == m once coordinates sit on the 9-digit grid.
TEST(Manifest, RandomRoundTripProperty) {
  SplitMix64 rng(31);
  for (int t = 0; t < 40; ++t) {
    DatasetManifest m;
    const int n_labels = 1 + static_cast<int>(rng.below(14));
    for (int l = 0; l < n_labels; ++l) m.label_names.push_back("L" + std::to_string(l));
    m.provenance["source"] = "canonical";
    m.provenance["note"] = "trial " + std::to_string(t);
    const int n_images = static_cast<int>(rng.below(20));
    for (int i = 0; i < n_images; ++i) {
      ImageRecord im{"id_" + std::to_string(t) + "_" + std::to_string(i),
                     1 + static_cast<int>(rng.below(4000)), 1 + static_cast<int>(rng.below(4000)), {}, {},
                     Source::canonical};
      const int n_boxes = static_cast<int>(rng.below(6));
      for (int b = 0; b < n_boxes; ++b) {
        auto box = testutil::random_box(rng, static_cast<int>(rng.below(static_cast<std::uint64_t>(n_labels))), 0.01,
                                        rng.uniform());
        if (rng.below(2)) box = Box(box.class_id(), box.x_min(), box.y_min(), box.x_max(), box.y_max(), box.score(), "R" + std::to_string(b));
        im.boxes.push_back(box);
      }
      for (int l = 0; l < n_labels; ++l) {
        if (rng.below(3) == 0) im.labels.push_back(l);
      }
      m.images.push_back(std::move(im));
    }
    const auto q = quantized(m);
    const auto back = parse_manifest(dump_manifest(q));
    EXPECT_EQ(back, q);
    EXPECT_EQ(dump_manifest(back), dump_manifest(q));
  }
}

}  // namespace
