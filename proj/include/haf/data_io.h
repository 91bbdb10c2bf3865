#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "haf/backbone.h"
#include "haf/geo.h"

namespace haf {

enum class Split { kTrain, kVal, kTestQuery, kTestReference };

const char* split_name(Split s);
std::optional<Split> parse_split(const std::string& s);

struct GeoImageRecord {
  std::string image_id;
  std::filesystem::path path;  // relative paths resolve against the manifest dir
  GeoPoint geo;
  Split split = Split::kTrain;

  bool operator==(const GeoImageRecord&) const = default;
};

struct DatasetManifest {
  std::string name = "unnamed";
  int version = 1;
  CoordinateMode coordinates = CoordinateMode::kGeo;
  std::vector<GeoImageRecord> records;
  std::filesystem::path base_dir;  // not serialized

  // Unique ids and coordinate ranges; throws DataError naming the record.
  void validate() const;
  // Additionally requires at least one train and one val record.
  void require_trainable() const;

  std::vector<const GeoImageRecord*> split(Split s) const;
  const GeoImageRecord* find(const std::string& image_id) const;
  std::filesystem::path resolve(const GeoImageRecord& record) const;
  double distance_m(const GeoImageRecord& a, const GeoImageRecord& b) const;

  bool operator==(const DatasetManifest& o) const {
    return name == o.name && version == o.version && coordinates == o.coordinates &&
           records == o.records;
  }
};

// Parse errors carry "<source>:<line>:" prefixes.
DatasetManifest parse_manifest(std::istream& in, const std::string& source_name);
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct PreprocessConfig {
  int height = 256;
  int width = 256;
  std::array<float, 3> mean = {0.485f, 0.456f, 0.406f};  // RGB, on [0, 1] pixels
  std::array<float, 3> std = {0.229f, 0.224f, 0.225f};

  void validate() const;
};

// Aspect-preserving resize to cover (height, width), center crop, RGB
// channel normalization. Accepts 8-bit BGR or grayscale.
ImageTensor preprocess_image(const cv::Mat& image, const PreprocessConfig& config);
ImageTensor load_image(const std::filesystem::path& path, const PreprocessConfig& config);
ImageTensor load_image(const DatasetManifest& manifest, const GeoImageRecord& record,
                       const PreprocessConfig& config);
// 8-bit BGR after resize + crop, before normalization (used for overlays).
cv::Mat load_display_image(const std::filesystem::path& path, const PreprocessConfig& config);

}  // namespace haf
