#include "haf/data_io.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "haf/error.h"

namespace haf {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& where) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + " expected a number, got '" + s + "'");
  }
}

cv::Mat resize_and_crop(const cv::Mat& src, int height, int width) {
  const double scale = std::max(static_cast<double>(height) / src.rows,
                                static_cast<double>(width) / src.cols);
  const int rh = std::max(height, static_cast<int>(std::lround(src.rows * scale)));
  const int rw = std::max(width, static_cast<int>(std::lround(src.cols * scale)));
  cv::Mat resized;
  cv::resize(src, resized, cv::Size(rw, rh), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
  const int y0 = (rh - height) / 2;
  const int x0 = (rw - width) / 2;
  return resized(cv::Rect(x0, y0, width, height)).clone();
}

cv::Mat read_bgr(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw DataError("I/O error: cannot read image '" + path.string() + "'");
  }
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("decode error: cannot decode image '" + path.string() + "'");
  return img;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTestQuery: return "test_query";
    case Split::kTestReference: return "test_reference";
  }
  return "?";
}

std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test_query") return Split::kTestQuery;
  if (s == "test_reference") return Split::kTestReference;
  return std::nullopt;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (r.image_id.empty()) throw DataError("record with empty image_id");
    if (!ids.insert(r.image_id).second) {
      throw DataError("duplicate image_id '" + r.image_id + "'");
    }
    if (!std::isfinite(r.geo.a) || !std::isfinite(r.geo.b)) {
      throw DataError("record '" + r.image_id + "' has non-finite coordinates");
    }
    if (coordinates == CoordinateMode::kGeo) {
      if (r.geo.a < -90.0 || r.geo.a > 90.0) {
        throw DataError("record '" + r.image_id + "' latitude out of range [-90, 90]");
      }
      if (r.geo.b < -180.0 || r.geo.b > 180.0) {
        throw DataError("record '" + r.image_id + "' longitude out of range [-180, 180]");
      }
    }
  }
}

void DatasetManifest::require_trainable() const {
  validate();
  if (split(Split::kTrain).empty()) throw DataError("manifest '" + name + "' has no train records");
  if (split(Split::kVal).empty()) throw DataError("manifest '" + name + "' has no val records");
}

std::vector<const GeoImageRecord*> DatasetManifest::split(Split s) const {
  std::vector<const GeoImageRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

const GeoImageRecord* DatasetManifest::find(const std::string& image_id) const {
  for (const auto& r : records) {
    if (r.image_id == image_id) return &r;
  }
  return nullptr;
}

std::filesystem::path DatasetManifest::resolve(const GeoImageRecord& record) const {
  if (record.path.is_absolute() || base_dir.empty()) return record.path;
  return base_dir / record.path;
}

double DatasetManifest::distance_m(const GeoImageRecord& a, const GeoImageRecord& b) const {
  return geo_distance_m(a.geo, b.geo, coordinates);
}

DatasetManifest parse_manifest(std::istream& in, const std::string& source_name) {
  DatasetManifest m;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source_name + ":" + std::to_string(line_no) + ":";
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.rfind("#!", 0) == 0) {
      const std::string kv = trim(t.substr(2));
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw DataError(where + " directive without '='");
      const std::string key = trim(kv.substr(0, eq));
      const std::string value = trim(kv.substr(eq + 1));
      if (key == "name") {
        m.name = value;
      } else if (key == "version") {
        m.version = static_cast<int>(parse_number(value, where));
        if (m.version != 1) throw DataError(where + " unsupported manifest version " + value);
      } else if (key == "coordinates") {
        if (value == "geo") {
          m.coordinates = CoordinateMode::kGeo;
        } else if (value == "planar") {
          m.coordinates = CoordinateMode::kPlanar;
        } else {
          throw DataError(where + " coordinates must be 'geo' or 'planar'");
        }
      } else {
        throw DataError(where + " unknown directive '" + key + "'");
      }
      continue;
    }
    if (t[0] == '#') continue;
    const auto fields = split_csv(t);
    if (!header_seen) {
      const std::vector<std::string> geo_header = {"image_id", "path", "lat", "lon", "split"};
      const std::vector<std::string> planar_header = {"image_id", "path", "x", "y", "split"};
      const auto& expected =
          m.coordinates == CoordinateMode::kGeo ? geo_header : planar_header;
      if (fields != expected) {
        throw DataError(where + " expected header '" + (expected == geo_header
                                                              ? "image_id,path,lat,lon,split"
                                                              : "image_id,path,x,y,split") +
                        "'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 5) {
      throw DataError(where + " expected 5 fields, got " + std::to_string(fields.size()));
    }
    GeoImageRecord r;
    r.image_id = fields[0];
    r.path = fields[1];
    r.geo = {parse_number(fields[2], where), parse_number(fields[3], where)};
    const auto split = parse_split(fields[4]);
    if (!split) throw DataError(where + " unknown split '" + fields[4] + "'");
    r.split = *split;
    if (r.image_id.empty() || r.path.empty()) throw DataError(where + " empty id or path");
    m.records.push_back(std::move(r));
  }
  if (!header_seen) throw DataError(source_name + ": missing header line");
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  DatasetManifest m = parse_manifest(in, path.string());
  m.base_dir = path.parent_path();
  return m;
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  const bool geo = manifest.coordinates == CoordinateMode::kGeo;
  out << "# haf dataset manifest\n";
  out << "#! name=" << manifest.name << "\n";
  out << "#! version=" << manifest.version << "\n";
  out << "#! coordinates=" << (geo ? "geo" : "planar") << "\n";
  out << (geo ? "image_id,path,lat,lon,split\n" : "image_id,path,x,y,split\n");
  out << std::setprecision(17);
  for (const auto& r : manifest.records) {
    out << r.image_id << "," << r.path.generic_string() << "," << r.geo.a << "," << r.geo.b
        << "," << split_name(r.split) << "\n";
  }
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  write_manifest(out, manifest);
  if (!out) throw DataError("write failure on '" + path.string() + "'");
}

void PreprocessConfig::validate() const {
  if (height < 64 || width < 64 || height % 16 != 0 || width % 16 != 0) {
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be >= 64 and divisible by 16");
  }
}

ImageTensor preprocess_image(const cv::Mat& image, const PreprocessConfig& config) {
  config.validate();
  if (image.empty() || image.depth() != CV_8U) throw DataError("expected a non-empty 8-bit image");
  cv::Mat bgr;
  if (image.channels() == 1) {
    cv::cvtColor(image, bgr, cv::COLOR_GRAY2BGR);
  } else if (image.channels() == 4) {
    cv::cvtColor(image, bgr, cv::COLOR_BGRA2BGR);
  } else if (image.channels() == 3) {
    bgr = image;
  } else {
    throw DataError("unsupported channel count " + std::to_string(image.channels()));
  }
  const cv::Mat cropped = resize_and_crop(bgr, config.height, config.width);
  ImageTensor t;
  t.height = config.height;
  t.width = config.width;
  t.pixels.resize(static_cast<Eigen::Index>(t.height) * t.width, 3);
  for (int y = 0; y < t.height; ++y) {
    const auto* row = cropped.ptr<cv::Vec3b>(y);
    for (int x = 0; x < t.width; ++x) {
      const Eigen::Index i = static_cast<Eigen::Index>(y) * t.width + x;
      for (int c = 0; c < 3; ++c) {
        const float v = row[x][2 - c] / 255.0f;  // BGR -> RGB
        t.pixels(i, c) = (v - config.mean[c]) / config.std[c];
      }
    }
  }
  return t;
}

ImageTensor load_image(const std::filesystem::path& path, const PreprocessConfig& config) {
  return preprocess_image(read_bgr(path), config);
}

ImageTensor load_image(const DatasetManifest& manifest, const GeoImageRecord& record,
                       const PreprocessConfig& config) {
  return load_image(manifest.resolve(record), config);
}

cv::Mat load_display_image(const std::filesystem::path& path, const PreprocessConfig& config) {
  config.validate();
  return resize_and_crop(read_bgr(path), config.height, config.width);
}

}  // namespace haf
