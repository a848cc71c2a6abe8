#include "detkit/io.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace detkit {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "detkit-toy-checkpoint";
constexpr int kCheckpointVersion = 1;

[[noreturn]] void fail(std::string_view source, const std::string& field, const std::string& msg) {
  throw FormatError(std::string(source) + ": " + field + ": " + msg);
}

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json parse_text(std::string_view text, std::string_view source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw FormatError(std::string(source) + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": malformed JSON: " + e.what());
  }
}

// Typed accessors with a field path for error messages.
class Fields {
 public:
  explicit Fields(std::string_view source) : source_(source) {}

  const json& member(const json& obj, const char* key, const std::string& path) const {
    if (!obj.is_object()) {
      fail(source_, path, "expected an object");
    }
    const auto it = obj.find(key);
    if (it == obj.end()) {
      fail(source_, path + "." + key, "missing field");
    }
    return *it;
  }

  const json& array(const json& v, const std::string& path) const {
    if (!v.is_array()) {
      fail(source_, path, "expected an array");
    }
    return v;
  }

  double number(const json& v, const std::string& path) const {
    if (!v.is_number()) {
      fail(source_, path, "expected a number");
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) {
      fail(source_, path, "expected a finite number");
    }
    return x;
  }

  std::int64_t integer(const json& v, const std::string& path) const {
    if (!v.is_number_integer()) {
      fail(source_, path, "expected an integer");
    }
    return v.get<std::int64_t>();
  }

  std::string string(const json& v, const std::string& path) const {
    if (!v.is_string()) {
      fail(source_, path, "expected a string");
    }
    return v.get<std::string>();
  }

  bool boolean(const json& v, const std::string& path) const {
    if (!v.is_boolean()) {
      fail(source_, path, "expected true or false");
    }
    return v.get<bool>();
  }

  Box bbox(const json& v, const std::string& path) const {
    if (!v.is_array() || v.size() != 4) {
      fail(source_, path, "expected [x, y, w, h]");
    }
    const double x = number(v[0], path + "[0]");
    const double y = number(v[1], path + "[1]");
    const double w = number(v[2], path + "[2]");
    const double h = number(v[3], path + "[3]");
    if (w < 0.0 || h < 0.0) {
      fail(source_, path, "width and height must be >= 0");
    }
    return Box::from_xywh(x, y, w, h);
  }

  double unit(const json& v, const std::string& path) const {
    const double x = number(v, path);
    if (x < 0.0 || x > 1.0) {
      fail(source_, path, "must lie in [0, 1]");
    }
    return x;
  }

  std::string_view source() const { return source_; }

 private:
  std::string_view source_;
};

json bbox_json(const Box& b) { return json::array({b.x1, b.y1, b.width(), b.height()}); }

std::string indexed(const char* section, std::size_t i) {
  return std::string(section) + "[" + std::to_string(i) + "]";
}

// Strict object reader for config files.
using Setter = std::function<void(const json&, const std::string&)>;

void apply_fields(const json& j, const std::string& path, const std::map<std::string, Setter>& setters,
                  std::string_view source) {
  if (!j.is_object()) {
    fail(source, path, "expected an object");
  }
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) {
      fail(source, path + "." + key, "unknown key");
    }
    it->second(value, path + "." + key);
  }
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const auto tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  return parse_text(text, path.string());
}

// ---- annotations ----------------------------------------------------------

std::vector<GroundTruthObject> AnnotationFile::ground_truths() const {
  std::vector<GroundTruthObject> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) {
    out.push_back(a.object);
  }
  return out;
}

AnnotationFile parse_annotations(std::string_view text, std::string_view source) {
  const json root = parse_text(text, source);
  const Fields f(source);
  AnnotationFile file;

  std::set<ImageId> image_ids;
  const json& images = f.array(f.member(root, "images", "$"), "images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string path = indexed("images", i);
    ImageInfo info;
    info.id = f.integer(f.member(images[i], "id", path), path + ".id");
    info.width = f.number(f.member(images[i], "width", path), path + ".width");
    info.height = f.number(f.member(images[i], "height", path), path + ".height");
    if (info.width < 0.0 || info.height < 0.0) {
      fail(source, path, "width and height must be >= 0");
    }
    if (!image_ids.insert(info.id).second) {
      fail(source, path + ".id", "duplicate image id " + std::to_string(info.id));
    }
    file.images.push_back(info);
  }

  std::set<CategoryId> category_ids;
  const json& categories = f.array(f.member(root, "categories", "$"), "categories");
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const std::string path = indexed("categories", i);
    CategoryInfo cat;
    cat.id = f.integer(f.member(categories[i], "id", path), path + ".id");
    cat.name = f.string(f.member(categories[i], "name", path), path + ".name");
    if (!category_ids.insert(cat.id).second) {
      fail(source, path + ".id", "duplicate category id " + std::to_string(cat.id));
    }
    file.categories.push_back(cat);
  }

  std::set<std::int64_t> annotation_ids;
  const json& annotations = f.array(f.member(root, "annotations", "$"), "annotations");
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const std::string path = indexed("annotations", i);
    const json& a = annotations[i];
    Annotation ann;
    ann.id = f.integer(f.member(a, "id", path), path + ".id");
    ann.object.image_id = f.integer(f.member(a, "image_id", path), path + ".image_id");
    ann.object.category_id = f.integer(f.member(a, "category_id", path), path + ".category_id");
    ann.object.box = f.bbox(f.member(a, "bbox", path), path + ".bbox");
    if (!annotation_ids.insert(ann.id).second) {
      fail(source, path + ".id", "duplicate annotation id " + std::to_string(ann.id));
    }
    if (!image_ids.contains(ann.object.image_id)) {
      fail(source, path + ".image_id", "unknown image id " + std::to_string(ann.object.image_id));
    }
    if (!category_ids.contains(ann.object.category_id)) {
      fail(source, path + ".category_id", "unknown category id " + std::to_string(ann.object.category_id));
    }
    file.annotations.push_back(ann);
  }
  return file;
}

AnnotationFile load_annotations(const std::filesystem::path& path) {
  return parse_annotations(read_file(path), path.string());
}

std::string annotations_to_json(const AnnotationFile& file) {
  json root = {{"images", json::array()}, {"annotations", json::array()}, {"categories", json::array()}};
  for (const auto& img : file.images) {
    root["images"].push_back({{"id", img.id}, {"width", img.width}, {"height", img.height}});
  }
  for (const auto& a : file.annotations) {
    root["annotations"].push_back({{"id", a.id},
                                   {"image_id", a.object.image_id},
                                   {"category_id", a.object.category_id},
                                   {"bbox", bbox_json(a.object.box)}});
  }
  for (const auto& c : file.categories) {
    root["categories"].push_back({{"id", c.id}, {"name", c.name}});
  }
  return root.dump(1) + "\n";
}

void save_annotations(const std::filesystem::path& path, const AnnotationFile& file) {
  write_file_atomic(path, annotations_to_json(file));
}

AnnotationFile annotation_file_from_scene(const SimScene& scene) {
  AnnotationFile file;
  file.images = scene.images;
  for (CategoryId c : scene.categories) {
    file.categories.push_back(CategoryInfo{c, "c" + std::to_string(c)});
  }
  for (std::size_t i = 0; i < scene.ground_truths.size(); ++i) {
    file.annotations.push_back(Annotation{static_cast<std::int64_t>(i + 1), scene.ground_truths[i]});
  }
  return file;
}

// ---- detections -------------------------------------------------------------

std::vector<Detection> parse_detections(std::string_view text, std::string_view source) {
  const json root = parse_text(text, source);
  const Fields f(source);
  const json& arr = f.array(root, "$");
  std::vector<Detection> dets;
  dets.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = "[" + std::to_string(i) + "]";
    const json& v = arr[i];
    Detection d;
    d.image_id = f.integer(f.member(v, "image_id", path), path + ".image_id");
    d.category_id = f.integer(f.member(v, "category_id", path), path + ".category_id");
    d.box = f.bbox(f.member(v, "bbox", path), path + ".bbox");
    d.score = f.unit(f.member(v, "score", path), path + ".score");
    if (const auto it = v.find("predicted_iou"); it != v.end() && !it->is_null()) {
      d.predicted_iou = f.unit(*it, path + ".predicted_iou");
    }
    dets.push_back(d);
  }
  return dets;
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  return parse_detections(read_file(path), path.string());
}

std::string detections_to_json(std::span<const Detection> dets) {
  json root = json::array();
  for (const auto& d : dets) {
    json v = {{"image_id", d.image_id}, {"category_id", d.category_id}, {"bbox", bbox_json(d.box)},
              {"score", d.score}};
    if (d.predicted_iou) {
      v["predicted_iou"] = *d.predicted_iou;
    }
    root.push_back(std::move(v));
  }
  return root.dump(1) + "\n";
}

void save_detections(const std::filesystem::path& path, std::span<const Detection> dets) {
  write_file_atomic(path, detections_to_json(dets));
}

// ---- reports and configs ------------------------------------------------------

json report_to_json(const EvalReport& report) {
  json j;
  j["AP"] = report.ap;
  json by_thr = json::object();
  char key[16];
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    std::snprintf(key, sizeof(key), "%.2f", kIouThresholds[t]);
    by_thr[key] = report.ap_at_threshold[t];
  }
  j["AP_at_threshold"] = by_thr;
  j["AP50"] = report.ap50();
  j["AP60"] = report.ap60();
  j["AP70"] = report.ap70();
  j["AP75"] = report.ap75();
  j["AP80"] = report.ap80();
  j["AP90"] = report.ap90();
  j["AP_small"] = report.ap_small;
  j["AP_medium"] = report.ap_medium;
  j["AP_large"] = report.ap_large;
  j["num_categories_evaluated"] = report.num_categories_evaluated;
  json curves = json::object();
  for (std::size_t t = 0; t < kIouThresholds.size(); ++t) {
    std::snprintf(key, sizeof(key), "%.2f", kIouThresholds[t]);
    curves[key] = report.pr_curves[t];
  }
  j["precision_curves"] = curves;
  return j;
}

namespace {

constexpr std::string_view kConfigSource = "config";

template <class T>
Setter set_int(T& out) {
  return [&out](const json& v, const std::string& path) {
    const std::int64_t x = Fields(kConfigSource).integer(v, path);
    if constexpr (std::is_unsigned_v<T>) {
      if (x < 0) {
        fail(kConfigSource, path, "must be >= 0");
      }
    }
    out = static_cast<T>(x);
  };
}

Setter set_double(double& out) {
  return [&out](const json& v, const std::string& path) { out = Fields(kConfigSource).number(v, path); };
}

Setter set_bool(bool& out) {
  return [&out](const json& v, const std::string& path) { out = Fields(kConfigSource).boolean(v, path); };
}

Setter set_range(IntRange& out) {
  return [&out](const json& v, const std::string& path) {
    const Fields f(kConfigSource);
    if (!v.is_array() || v.size() != 2) {
      fail(kConfigSource, path, "expected [min, max]");
    }
    out.min = static_cast<int>(f.integer(v[0], path + "[0]"));
    out.max = static_cast<int>(f.integer(v[1], path + "[1]"));
  };
}

Setter set_doubles(std::vector<double>& out) {
  return [&out](const json& v, const std::string& path) {
    const Fields f(kConfigSource);
    f.array(v, path);
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(f.number(v[i], path + "[" + std::to_string(i) + "]"));
    }
  };
}

json range_json(const IntRange& r) { return json::array({r.min, r.max}); }

}  // namespace

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  const std::map<std::string, Setter> setters{
      {"seed", set_int(c.seed)},
      {"n_images", set_int(c.n_images)},
      {"num_categories", set_int(c.num_categories)},
      {"image_width", set_double(c.image_width)},
      {"image_height", set_double(c.image_height)},
      {"gt_per_image", set_range(c.gt_per_image)},
      {"detections_per_gt", set_range(c.detections_per_gt)},
      {"min_object_size", set_double(c.min_object_size)},
      {"max_object_size", set_double(c.max_object_size)},
      {"localization_noise", set_double(c.localization_noise)},
      {"score_coupling", set_double(c.score_coupling)},
      {"score_scale", set_double(c.score_scale)},
      {"score_offset", set_double(c.score_offset)},
      {"classification_margin", set_double(c.classification_margin)},
      {"iou_noise", set_double(c.iou_noise)},
      {"false_positive_rate", set_double(c.false_positive_rate)},
      {"misclassification_rate", set_double(c.misclassification_rate)},
  };
  apply_fields(j, "$", setters, kConfigSource);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string(kConfigSource) + ": " + e.what());
  }
  return c;
}

json sim_config_to_json(const SimConfig& c) {
  return {{"seed", c.seed},
          {"n_images", c.n_images},
          {"num_categories", c.num_categories},
          {"image_width", c.image_width},
          {"image_height", c.image_height},
          {"gt_per_image", range_json(c.gt_per_image)},
          {"detections_per_gt", range_json(c.detections_per_gt)},
          {"min_object_size", c.min_object_size},
          {"max_object_size", c.max_object_size},
          {"localization_noise", c.localization_noise},
          {"score_coupling", c.score_coupling},
          {"score_scale", c.score_scale},
          {"score_offset", c.score_offset},
          {"classification_margin", c.classification_margin},
          {"iou_noise", c.iou_noise},
          {"false_positive_rate", c.false_positive_rate},
          {"misclassification_rate", c.misclassification_rate}};
}

toy::TrainConfig train_config_from_json(const json& j) {
  toy::TrainConfig c;
  const std::map<std::string, Setter> scene{
      {"grid_width", set_int(c.scene.grid_width)},
      {"grid_height", set_int(c.scene.grid_height)},
      {"cell_size", set_double(c.scene.cell_size)},
      {"num_categories", set_int(c.scene.num_categories)},
      {"objects_per_scene", set_range(c.scene.objects_per_scene)},
      {"min_object_size", set_double(c.scene.min_object_size)},
      {"max_object_size", set_double(c.scene.max_object_size)},
      {"pixel_noise", set_double(c.scene.pixel_noise)},
      {"category_confusion", set_double(c.scene.category_confusion)},
  };
  const std::map<std::string, Setter> anchors{
      {"sizes", set_doubles(c.anchors.sizes)},
      {"aspect_ratios", set_doubles(c.anchors.aspect_ratios)},
  };
  const std::map<std::string, Setter> focal{
      {"gamma", set_double(c.focal.gamma)},
      {"balance", set_double(c.focal.balance)},
  };
  const std::map<std::string, Setter> nms_fields{
      {"iou_threshold", set_double(c.nms.iou_threshold)},
      {"max_kept",
       [&c](const json& v, const std::string& path) {
         if (v.is_null()) {
           c.nms.max_kept.reset();
           return;
         }
         const auto x = Fields(kConfigSource).integer(v, path);
         if (x < 0) {
           fail(kConfigSource, path, "must be >= 0");
         }
         c.nms.max_kept = static_cast<std::size_t>(x);
       }},
  };
  auto nested = [](const std::map<std::string, Setter>& fields) {
    return [&fields](const json& v, const std::string& path) { apply_fields(v, path, fields, kConfigSource); };
  };
  const std::map<std::string, Setter> top{
      {"seed", set_int(c.seed)},
      {"epochs", set_int(c.epochs)},
      {"learning_rate", set_double(c.learning_rate)},
      {"batch_size", set_int(c.batch_size)},
      {"positive_threshold", set_double(c.positive_threshold)},
      {"negative_threshold", set_double(c.negative_threshold)},
      {"propagate_target_iou_gradient", set_bool(c.propagate_target_iou_gradient)},
      {"warmup_epochs", set_int(c.warmup_epochs)},
      {"iou_loss",
       [&c](const json& v, const std::string& path) {
         try {
           c.iou_loss = parse_iou_loss_kind(Fields(kConfigSource).string(v, path));
         } catch (const std::invalid_argument& e) {
           fail(kConfigSource, path, e.what());
         }
       }},
      {"fusion_alpha",
       [&c](const json& v, const std::string& path) {
         if (v.is_null()) {
           c.fusion_alpha.reset();
         } else {
           c.fusion_alpha = Fields(kConfigSource).number(v, path);
         }
       }},
      {"train_scenes", set_int(c.train_scenes)},
      {"eval_scenes", set_int(c.eval_scenes)},
      {"hidden_units", set_int(c.hidden_units)},
      {"neighborhood_radius", set_int(c.neighborhood_radius)},
      {"init_scale", set_double(c.init_scale)},
      {"smooth_l1_beta", set_double(c.smooth_l1_beta)},
      {"score_threshold", set_double(c.score_threshold)},
      {"max_detections_per_scene", set_int(c.max_detections_per_scene)},
      {"focal", nested(focal)},
      {"nms", nested(nms_fields)},
      {"scene", nested(scene)},
      {"anchors", nested(anchors)},
  };
  apply_fields(j, "$", top, kConfigSource);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string(kConfigSource) + ": " + e.what());
  }
  return c;
}

json train_config_to_json(const toy::TrainConfig& c) {
  json nms_json = {{"iou_threshold", c.nms.iou_threshold}, {"max_kept", nullptr}};
  if (c.nms.max_kept) {
    nms_json["max_kept"] = *c.nms.max_kept;
  }
  return {{"seed", c.seed},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"positive_threshold", c.positive_threshold},
          {"negative_threshold", c.negative_threshold},
          {"propagate_target_iou_gradient", c.propagate_target_iou_gradient},
          {"warmup_epochs", c.warmup_epochs},
          {"iou_loss", std::string(to_string(c.iou_loss))},
          {"fusion_alpha", c.fusion_alpha ? json(*c.fusion_alpha) : json(nullptr)},
          {"train_scenes", c.train_scenes},
          {"eval_scenes", c.eval_scenes},
          {"hidden_units", c.hidden_units},
          {"neighborhood_radius", c.neighborhood_radius},
          {"init_scale", c.init_scale},
          {"smooth_l1_beta", c.smooth_l1_beta},
          {"score_threshold", c.score_threshold},
          {"max_detections_per_scene", c.max_detections_per_scene},
          {"focal", {{"gamma", c.focal.gamma}, {"balance", c.focal.balance}}},
          {"nms", nms_json},
          {"scene",
           {{"grid_width", c.scene.grid_width},
            {"grid_height", c.scene.grid_height},
            {"cell_size", c.scene.cell_size},
            {"num_categories", c.scene.num_categories},
            {"objects_per_scene", range_json(c.scene.objects_per_scene)},
            {"min_object_size", c.scene.min_object_size},
            {"max_object_size", c.scene.max_object_size},
            {"pixel_noise", c.scene.pixel_noise},
            {"category_confusion", c.scene.category_confusion}}},
          {"anchors", {{"sizes", c.anchors.sizes}, {"aspect_ratios", c.anchors.aspect_ratios}}}};
}

// ---- checkpoints --------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const toy::ToyModelParams& params,
                     const toy::TrainConfig& cfg) {
  const auto& s = params.shape;
  const json header = {{"format", kCheckpointFormat},
                       {"version", kCheckpointVersion},
                       {"shape",
                        {{"num_categories", s.num_categories},
                         {"anchor_types", s.anchor_types},
                         {"feature_dim", s.feature_dim},
                         {"hidden", s.hidden}}},
                       {"count", params.values.size()},
                       {"config", train_config_to_json(cfg)}};
  write_file_atomic(path, header.dump() + "\n" + json(params.values).dump() + "\n");
}

std::pair<toy::ToyModelParams, toy::TrainConfig> load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const std::string source = path.string();
  const auto newline = text.find('\n');
  if (newline == std::string::npos) {
    fail(source, "header", "expected a header line followed by the parameter array");
  }
  const json header = parse_text(std::string_view(text).substr(0, newline), source);
  const Fields f(source);
  if (f.string(f.member(header, "format", "header"), "header.format") != kCheckpointFormat ||
      f.integer(f.member(header, "version", "header"), "header.version") != kCheckpointVersion) {
    fail(source, "header", "not a version 1 toy checkpoint");
  }
  toy::TrainConfig cfg;
  try {
    cfg = train_config_from_json(f.member(header, "config", "header"));
  } catch (const FormatError& e) {
    fail(source, "header.config", e.what());
  }
  const toy::ToyDetector det(cfg);
  const json& shape = f.member(header, "shape", "header");
  toy::ModelShape s;
  s.num_categories = static_cast<int>(f.integer(f.member(shape, "num_categories", "header.shape"), "header.shape.num_categories"));
  s.anchor_types = static_cast<int>(f.integer(f.member(shape, "anchor_types", "header.shape"), "header.shape.anchor_types"));
  s.feature_dim = static_cast<int>(f.integer(f.member(shape, "feature_dim", "header.shape"), "header.shape.feature_dim"));
  s.hidden = static_cast<int>(f.integer(f.member(shape, "hidden", "header.shape"), "header.shape.hidden"));
  if (!(s == det.shape())) {
    fail(source, "header.shape", "does not match the architecture implied by the config");
  }

  // Line numbers in body errors are offset by the header line.
  json body;
  try {
    body = json::parse(text.begin() + static_cast<std::ptrdiff_t>(newline) + 1, text.end());
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(std::string_view(text).substr(newline + 1), e.byte > 0 ? e.byte - 1 : 0);
    throw FormatError(source + ":" + std::to_string(line + 1) + ":" + std::to_string(col) +
                      ": malformed parameter array: " + e.what());
  }
  f.array(body, "values");
  const auto count = f.integer(f.member(header, "count", "header"), "header.count");
  if (count < 0 || static_cast<std::size_t>(count) != s.total() || body.size() != s.total()) {
    fail(source, "values", "expected " + std::to_string(s.total()) + " parameters, found " +
                               std::to_string(body.size()));
  }
  toy::ToyModelParams params(s);
  for (std::size_t i = 0; i < body.size(); ++i) {
    params.values[i] = f.number(body[i], "values[" + std::to_string(i) + "]");
  }
  return {std::move(params), cfg};
}

}  // namespace detkit
