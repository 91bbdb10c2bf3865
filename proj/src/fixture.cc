#include "haf/fixture.h"

#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "haf/error.h"

namespace haf {
namespace {

struct Color {
  double r, g, b;
};

enum class Pattern { kStripes, kChecker, kDots, kRings };

struct Landmark {
  double cx, cy, half;  // scene coordinates on [0, 1]
  Pattern pattern;
  double frequency;
  double angle;
  Color fg, bg;
};

struct Scene {
  Color top, bottom;
  double gradient_angle;
  Landmark large, small;
};

struct Jitter {
  double tx, ty, scale, gain, bias, noise;
};

Color random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(20.0, 235.0);
  return {u(rng), u(rng), u(rng)};
}

Landmark random_landmark(std::mt19937_64& rng, double half_lo, double half_hi, double freq_lo,
                         double freq_hi) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Landmark l;
  l.half = half_lo + (half_hi - half_lo) * u01(rng);
  l.cx = 0.5;
  l.cy = 0.5;
  l.pattern = static_cast<Pattern>(std::uniform_int_distribution<int>(0, 3)(rng));
  l.frequency = freq_lo + (freq_hi - freq_lo) * u01(rng);
  l.angle = std::numbers::pi * u01(rng);
  l.fg = random_color(rng);
  l.bg = random_color(rng);
  return l;
}

Scene make_scene(std::uint64_t seed, int place) {
  std::mt19937_64 rng(seed * 1000003ull + static_cast<std::uint64_t>(place) * 7919ull + 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Scene s;
  s.top = random_color(rng);
  s.bottom = random_color(rng);
  s.gradient_angle = 2.0 * std::numbers::pi * u01(rng);
  s.large = random_landmark(rng, 0.19, 0.23, 3.0, 6.0);
  s.small = random_landmark(rng, 0.06, 0.075, 3.0, 5.0);
  // Large landmark on one side, small one in the opposite quadrant.
  const bool left = u01(rng) < 0.5;
  const bool up = u01(rng) < 0.5;
  s.large.cx = left ? 0.32 + 0.06 * u01(rng) : 0.62 + 0.06 * u01(rng);
  s.large.cy = up ? 0.32 + 0.06 * u01(rng) : 0.62 + 0.06 * u01(rng);
  s.small.cx = left ? 0.78 + 0.06 * u01(rng) : 0.16 + 0.06 * u01(rng);
  s.small.cy = up ? 0.78 + 0.06 * u01(rng) : 0.16 + 0.06 * u01(rng);
  return s;
}

Jitter make_jitter(std::uint64_t seed, int place, int index) {
  std::mt19937_64 rng(seed * 2654435761ull + static_cast<std::uint64_t>(place) * 104729ull +
                      static_cast<std::uint64_t>(index) * 15485863ull + 17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Jitter j;
  j.tx = 0.04 * u(rng);
  j.ty = 0.04 * u(rng);
  j.scale = 1.0 + 0.05 * u(rng);
  j.gain = 1.0 + 0.15 * u(rng);
  j.bias = 12.0 * u(rng);
  j.noise = 3.0;
  return j;
}

double pattern_value(const Landmark& l, double u, double v) {
  // (u, v) in [-1, 1] landmark-local coordinates.
  const double ca = std::cos(l.angle);
  const double sa = std::sin(l.angle);
  const double ru = ca * u - sa * v;
  const double rv = sa * u + ca * v;
  const double f = l.frequency;
  switch (l.pattern) {
    case Pattern::kStripes:
      return std::sin(std::numbers::pi * f * ru) > 0.0 ? 1.0 : 0.0;
    case Pattern::kChecker:
      return (std::sin(std::numbers::pi * f * ru) * std::sin(std::numbers::pi * f * rv)) > 0.0
                 ? 1.0
                 : 0.0;
    case Pattern::kDots: {
      const double cu = ru * f / 2.0 - std::round(ru * f / 2.0);
      const double cv = rv * f / 2.0 - std::round(rv * f / 2.0);
      return (cu * cu + cv * cv) < 0.09 ? 1.0 : 0.0;
    }
    case Pattern::kRings:
      return std::sin(std::numbers::pi * f * std::hypot(u, v) * 1.5) > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

bool landmark_color(const Landmark& l, double sx, double sy, Color* out) {
  const double u = (sx - l.cx) / l.half;
  const double v = (sy - l.cy) / l.half;
  if (std::abs(u) > 1.0 || std::abs(v) > 1.0) return false;
  const double t = pattern_value(l, u, v);
  *out = {l.bg.r + t * (l.fg.r - l.bg.r), l.bg.g + t * (l.fg.g - l.bg.g),
          l.bg.b + t * (l.fg.b - l.bg.b)};
  return true;
}

LandmarkBox project_box(const Landmark& l, const Jitter& j, int size, bool small) {
  auto to_px = [&](double scene) { return ((scene - 0.5) * j.scale + 0.5) * size; };
  LandmarkBox b;
  b.small = small;
  b.x0 = std::clamp(static_cast<int>(std::floor(to_px(l.cx - l.half + j.tx))), 0, size);
  b.x1 = std::clamp(static_cast<int>(std::ceil(to_px(l.cx + l.half + j.tx))), 0, size);
  b.y0 = std::clamp(static_cast<int>(std::floor(to_px(l.cy - l.half + j.ty))), 0, size);
  b.y1 = std::clamp(static_cast<int>(std::ceil(to_px(l.cy + l.half + j.ty))), 0, size);
  return b;
}

}  // namespace

RenderedImage render_fixture_image(std::uint64_t seed, int place, int index, int image_size) {
  if (image_size < 16) throw ConfigError("fixture image_size too small");
  const Scene scene = make_scene(seed, place);
  const Jitter jit = make_jitter(seed, place, index);
  std::mt19937_64 noise_rng(seed ^ (static_cast<std::uint64_t>(place) << 32) ^
                            static_cast<std::uint64_t>(index) * 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> noise(0.0, jit.noise);

  RenderedImage out;
  out.bgr.create(image_size, image_size, CV_8UC3);
  const double gx = std::cos(scene.gradient_angle);
  const double gy = std::sin(scene.gradient_angle);
  for (int y = 0; y < image_size; ++y) {
    auto* row = out.bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image_size; ++x) {
      // Image -> scene coordinates (inverse of the viewpoint jitter).
      const double ix = (x + 0.5) / image_size;
      const double iy = (y + 0.5) / image_size;
      const double sx = (ix - 0.5) / jit.scale + 0.5 - jit.tx;
      const double sy = (iy - 0.5) / jit.scale + 0.5 - jit.ty;
      Color c;
      if (!landmark_color(scene.small, sx, sy, &c) && !landmark_color(scene.large, sx, sy, &c)) {
        const double t = std::clamp(0.5 + 0.5 * ((sx - 0.5) * gx + (sy - 0.5) * gy) * 1.4, 0.0, 1.0);
        c = {scene.top.r + t * (scene.bottom.r - scene.top.r),
             scene.top.g + t * (scene.bottom.g - scene.top.g),
             scene.top.b + t * (scene.bottom.b - scene.top.b)};
      }
      const double vals[3] = {c.b, c.g, c.r};
      for (int ch = 0; ch < 3; ++ch) {
        const double v = vals[ch] * jit.gain + jit.bias + noise(noise_rng);
        row[x][ch] = static_cast<unsigned char>(std::clamp(std::lround(v), 0l, 255l));
      }
    }
  }
  out.landmarks.push_back(project_box(scene.large, jit, image_size, false));
  out.landmarks.push_back(project_box(scene.small, jit, image_size, true));
  return out;
}

Split fixture_split(int index, int images_per_place) {
  const int n_train = (images_per_place + 1) / 2;
  const int n_test = images_per_place >= 4 ? 1 : 0;
  if (index < n_train) return Split::kTrain;
  if (index >= images_per_place - n_test) return Split::kTestQuery;
  return Split::kVal;
}

DatasetManifest generate_synthetic_fixture(const std::filesystem::path& out_dir,
                                           const FixtureConfig& config) {
  if (config.n_places < 2) throw ConfigError("fixture needs n_places >= 2 (no negatives otherwise)");
  if (config.images_per_place < 2) throw ConfigError("fixture needs images_per_place >= 2");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw DataError("cannot create '" + (out_dir / "images").string() + "': " + ec.message());

  DatasetManifest m;
  m.name = "synthetic-" + std::to_string(config.seed);
  m.coordinates = CoordinateMode::kGeo;
  m.base_dir = out_dir;
  const int grid = static_cast<int>(std::ceil(std::sqrt(config.n_places)));
  for (int p = 0; p < config.n_places; ++p) {
    const double east = (p % grid) * config.place_spacing_m;
    const double north = (p / grid) * config.place_spacing_m;
    std::mt19937_64 geo_rng(config.seed * 31ull + static_cast<std::uint64_t>(p));
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> radius(0.0, config.intra_place_radius_m);
    for (int i = 0; i < config.images_per_place; ++i) {
      const RenderedImage img = render_fixture_image(config.seed, p, i, config.image_size);
      GeoImageRecord r;
      r.image_id = "p" + std::to_string(p) + "_i" + std::to_string(i);
      r.path = std::filesystem::path("images") / (r.image_id + ".png");
      const double a = angle(geo_rng);
      const double rad = radius(geo_rng);
      r.geo = offset_geo(config.origin, east + rad * std::cos(a), north + rad * std::sin(a));
      r.split = fixture_split(i, config.images_per_place);
      const auto file = out_dir / r.path;
      if (!cv::imwrite(file.string(), img.bgr)) {
        throw DataError("cannot write fixture image '" + file.string() + "'");
      }
      m.records.push_back(std::move(r));
    }
  }
  save_manifest(m, out_dir / "manifest.txt");
  return m;
}

}  // namespace haf
