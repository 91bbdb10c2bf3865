#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "haf/data_io.h"

namespace haf {

struct FixtureConfig {
  std::uint64_t seed = 7;
  int n_places = 8;
  int images_per_place = 6;
  int image_size = 256;
  double place_spacing_m = 150.0;
  double intra_place_radius_m = 2.4;
  GeoPoint origin = {47.3769, 8.5417};
};

// Axis-aligned landmark footprint in image pixels, [x0, x1) x [y0, y1).
struct LandmarkBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;
  bool small = false;
};

struct RenderedImage {
  cv::Mat bgr;  // 8-bit, image_size x image_size
  std::vector<LandmarkBox> landmarks;  // one large, one small
};

// Procedural scene for one place, rendered with per-image viewpoint and
// illumination jitter. Pure function of (seed, place, index, size).
RenderedImage render_fixture_image(std::uint64_t seed, int place, int index, int image_size);

// Writes images/<id>.png and manifest.txt under `out_dir`. Splits per place:
// first half train, last image test_query (when >= 4 images), rest val.
DatasetManifest generate_synthetic_fixture(const std::filesystem::path& out_dir,
                                           const FixtureConfig& config);

Split fixture_split(int index, int images_per_place);

}  // namespace haf
