#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "detkit/io.hpp"

using namespace detkit;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("detkit_io_" + std::to_string(std::random_device{}()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Quarter-pixel coordinates keep x + w exact.
double quarter(std::mt19937_64& rng, int hi) {
  return std::uniform_int_distribution<int>(0, 4 * hi)(rng) / 4.0;
}

AnnotationFile random_file(std::mt19937_64& rng) {
  AnnotationFile f;
  const int n_img = std::uniform_int_distribution<int>(0, 4)(rng);
  for (int i = 0; i < n_img; ++i) f.images.push_back({i * 3 + 1, quarter(rng, 640), quarter(rng, 480)});
  for (int c = 0; c < 3; ++c) f.categories.push_back({c + 10, "cat" + std::to_string(c)});
  if (n_img == 0) return f;
  const int n_ann = std::uniform_int_distribution<int>(0, 12)(rng);
  for (int a = 0; a < n_ann; ++a) {
    const auto& img = f.images[static_cast<std::size_t>(a) % f.images.size()];
    f.annotations.push_back({a + 100,
                             {img.id, 10 + a % 3,
                              Box::from_xywh(quarter(rng, 300), quarter(rng, 300), quarter(rng, 100),
                                             quarter(rng, 100))}});
  }
  return f;
}

}  // namespace

TEST(Annotations, EmptyArrays) {
  const auto f = parse_annotations(R"({"images": [], "annotations": [], "categories": []})");
  EXPECT_TRUE(f.ground_truths().empty());
}

TEST(Annotations, BboxIsCornerFormInMemory) {
  const auto f = parse_annotations(R"({
    "images": [{"id": 1, "width": 100, "height": 80}],
    "categories": [{"id": 3, "name": "car"}],
    "annotations": [{"id": 9, "image_id": 1, "category_id": 3, "bbox": [10, 20, 30, 40]}]})");
  ASSERT_EQ(f.ground_truths().size(), 1u);
  EXPECT_EQ(f.ground_truths()[0].box, (Box{10, 20, 40, 60}));
  EXPECT_EQ(f.ground_truths()[0].category_id, 3);
}

TEST(Annotations, RandomRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(8);
  for (int k = 0; k < 50; ++k) {
    const auto f = random_file(rng);
    save_annotations(dir / "a.json", f);
    EXPECT_EQ(load_annotations(dir / "a.json"), f);
  }
}

TEST(Annotations, MalformedJsonReportsLine) {
  try {
    parse_annotations("{\n  \"images\": [\n  ,]\n}", "bad.json");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json:3:"), std::string::npos) << e.what();
  }
}

TEST(Annotations, DanglingReferencesNameTheField) {
  const char* text = R"({"images": [{"id": 1, "width": 1, "height": 1}],
    "categories": [{"id": 1, "name": "a"}],
    "annotations": [{"id": 1, "image_id": 2, "category_id": 1, "bbox": [0, 0, 1, 1]}]})";
  try {
    parse_annotations(text, "x.json");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("annotations[0].image_id"), std::string::npos) << e.what();
  }
}

TEST(Annotations, RejectsInvalidContent) {
  const std::string head = R"({"images": [{"id": 1, "width": 1, "height": 1}], "categories": [{"id": 1, "name": "a"}], "annotations": [)";
  EXPECT_THROW(parse_annotations(head + R"({"id": 1, "image_id": 1, "category_id": 2, "bbox": [0, 0, 1, 1]}]})"), FormatError);
  EXPECT_THROW(parse_annotations(head + R"({"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, -1, 1]}]})"), FormatError);
  EXPECT_THROW(parse_annotations(head + R"({"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1]}]})"), FormatError);
  EXPECT_THROW(parse_annotations(head + R"({"id": 1, "image_id": 1, "category_id": 1}]})"), FormatError);
  EXPECT_THROW(parse_annotations(head + R"({"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1]},
                                             {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1]}]})"), FormatError);
  EXPECT_THROW(parse_annotations(R"({"images": [], "annotations": []})"), FormatError);
}

TEST(Detections, RoundTripWithOptionalIou) {
  TempDir dir;
  std::vector<Detection> dets{{1, 2, Box::from_xywh(1.5, 2.25, 10, 20), 0.75, 0.5, std::nullopt},
                              {3, 1, Box::from_xywh(0, 0, 4, 4), 0.125, std::nullopt, std::nullopt}};
  save_detections(dir / "d.json", dets);
  EXPECT_EQ(load_detections(dir / "d.json"), dets);
}

TEST(Detections, RejectsOutOfRangeValues) {
  EXPECT_THROW(parse_detections(R"([{"image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 1.5}])"), FormatError);
  EXPECT_THROW(parse_detections(R"([{"image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.5, "predicted_iou": -0.1}])"), FormatError);
  EXPECT_THROW(parse_detections(R"({"image_id": 1})"), FormatError);
  const auto ok = parse_detections(R"([{"image_id": 1, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 0.5, "predicted_iou": null}])");
  EXPECT_FALSE(ok[0].predicted_iou.has_value());
}

TEST(Files, AtomicWriteLeavesNoTemp) {
  TempDir dir;
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  EXPECT_EQ(read_file(dir / "f.txt"), "two");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "")) ++n;
  EXPECT_EQ(n, 1u);
  EXPECT_THROW(read_file(dir / "missing.txt"), std::runtime_error);
}

TEST(Scene, AnnotationFileFromSimulation) {
  SimConfig cfg;
  cfg.n_images = 5;
  const auto scene = generate(cfg);
  const auto f = annotation_file_from_scene(scene);
  EXPECT_EQ(f.ground_truths(), scene.ground_truths);
  EXPECT_EQ(f.categories.size(), scene.categories.size());
  EXPECT_EQ(f.categories[0].name, "c0");
}

TEST(Report, Json) {
  EvalReport r;
  r.ap = 0.5;
  r.ap_at_threshold[0] = 0.75;
  const auto j = report_to_json(r);
  EXPECT_EQ(j["AP"], 0.5);
  EXPECT_EQ(j["AP50"], 0.75);
  EXPECT_EQ(j["AP_at_threshold"]["0.50"], 0.75);
  EXPECT_EQ(j["precision_curves"]["0.95"].size(), kRecallPoints);
}

TEST(Config, SimRoundTripAndStrictness) {
  SimConfig c;
  c.seed = 99;
  c.gt_per_image = {2, 4};
  c.iou_noise = 0.3;
  const auto back = sim_config_from_json(sim_config_to_json(c));
  EXPECT_EQ(sim_config_to_json(back), sim_config_to_json(c));
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.gt_per_image.max, 4);
  EXPECT_EQ(sim_config_from_json(nlohmann::json::object()).n_images, SimConfig{}.n_images);
  EXPECT_THROW(sim_config_from_json({{"n_imgs", 3}}), FormatError);
  EXPECT_THROW(sim_config_from_json({{"n_images", "three"}}), FormatError);
}

TEST(Config, TrainRoundTripAndStrictness) {
  toy::TrainConfig c;
  c.epochs = 7;
  c.batch_size = 3;
  c.propagate_target_iou_gradient = true;
  c.iou_loss = IouLossKind::l2;
  c.fusion_alpha = 0.3;
  c.scene.grid_width = 6;
  c.anchors.sizes = {12.0};
  const auto back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
  EXPECT_EQ(back.batch_size, 3);
  EXPECT_EQ(back.iou_loss, IouLossKind::l2);
  EXPECT_EQ(back.fusion_alpha, 0.3);
  EXPECT_EQ(back.anchors.sizes, std::vector<double>{12.0});
  EXPECT_THROW(train_config_from_json({{"scene", {{"grid", 3}}}}), FormatError);
  EXPECT_THROW(train_config_from_json({{"iou_loss", "huber"}}), FormatError);
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir;
  toy::TrainConfig cfg;
  cfg.hidden_units = 4;
  const toy::ToyDetector det(cfg);
  const auto params = toy::init_params(det, 3);
  save_checkpoint(dir / "m.ckpt", params, cfg);
  const auto [loaded, loaded_cfg] = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(loaded.values, params.values);
  EXPECT_EQ(loaded.shape, params.shape);
  EXPECT_EQ(train_config_to_json(loaded_cfg), train_config_to_json(cfg));
}

TEST(Checkpoint, RejectsCorruption) {
  TempDir dir;
  toy::TrainConfig cfg;
  cfg.hidden_units = 4;
  const toy::ToyDetector det(cfg);
  const auto params = toy::init_params(det, 3);
  save_checkpoint(dir / "m.ckpt", params, cfg);
  const std::string text = read_file(dir / "m.ckpt");
  const auto nl = text.find('\n');
  write_file_atomic(dir / "short.ckpt", text.substr(0, nl) + "\n[1, 2, 3]\n");
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), FormatError);
  write_file_atomic(dir / "broken.ckpt", text.substr(0, nl) + "\n[1, 2,\n");
  EXPECT_THROW(load_checkpoint(dir / "broken.ckpt"), FormatError);
  write_file_atomic(dir / "nohead.ckpt", "[1, 2]");
  EXPECT_THROW(load_checkpoint(dir / "nohead.ckpt"), FormatError);
}
