#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "detkit/detection.hpp"
#include "detkit/evalmap.hpp"
#include "detkit/simgen.hpp"
#include "detkit/toydet.hpp"

namespace detkit {

// Malformed or inconsistent input. The message names the source and either
// the line/column of a syntax error or the offending field path.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Writes to a sibling temp file, then renames over path.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

struct CategoryInfo {
  CategoryId id = 0;
  std::string name;

  friend bool operator==(const CategoryInfo&, const CategoryInfo&) = default;
};

struct Annotation {
  std::int64_t id = 0;
  GroundTruthObject object;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct AnnotationFile {
  std::vector<ImageInfo> images;
  std::vector<Annotation> annotations;
  std::vector<CategoryInfo> categories;

  std::vector<GroundTruthObject> ground_truths() const;

  friend bool operator==(const AnnotationFile&, const AnnotationFile&) = default;
};

// bbox is [x, y, w, h] on disk, corner form in memory.
AnnotationFile parse_annotations(std::string_view text, std::string_view source = "<memory>");
AnnotationFile load_annotations(const std::filesystem::path& path);
std::string annotations_to_json(const AnnotationFile& file);
void save_annotations(const std::filesystem::path& path, const AnnotationFile& file);

std::vector<Detection> parse_detections(std::string_view text, std::string_view source = "<memory>");
std::vector<Detection> load_detections(const std::filesystem::path& path);
std::string detections_to_json(std::span<const Detection> dets);
void save_detections(const std::filesystem::path& path, std::span<const Detection> dets);

// Annotation file for a simulated scene; categories are named "c<id>".
AnnotationFile annotation_file_from_scene(const SimScene& scene);

nlohmann::json report_to_json(const EvalReport& report);

// Unknown keys are rejected; absent keys keep their defaults.
SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json sim_config_to_json(const SimConfig& cfg);
toy::TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const toy::TrainConfig& cfg);
// Parses a whole file into JSON, FormatError with line context on failure.
nlohmann::json load_json(const std::filesystem::path& path);

// Line 1: JSON header (format, shape, config echo, count). Line 2: the
// parameter values as a flat JSON array.
void save_checkpoint(const std::filesystem::path& path, const toy::ToyModelParams& params,
                     const toy::TrainConfig& cfg);
std::pair<toy::ToyModelParams, toy::TrainConfig> load_checkpoint(const std::filesystem::path& path);

}  // namespace detkit
