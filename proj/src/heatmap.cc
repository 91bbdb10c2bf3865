#include "haf/heatmap.h"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "haf/error.h"

namespace haf {
namespace {

cv::Mat score_grid(const DenseLevelOutput& level) {
  cv::Mat grid(level.height, level.width, CV_32F);
  for (int y = 0; y < level.height; ++y) {
    for (int x = 0; x < level.width; ++x) {
      grid.at<float>(y, x) = static_cast<float>(level.scores[y * level.width + x]);
    }
  }
  return grid;
}

cv::Mat normalized(const cv::Mat& m, int height, int width) {
  cv::Mat up;
  if (m.rows == height && m.cols == width) {
    up = m.clone();
  } else {
    cv::resize(m, up, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  }
  double lo = 0.0, hi = 0.0;
  cv::minMaxLoc(up, &lo, &hi);
  if (hi > 0.0) up /= hi;
  return up;
}

}  // namespace

cv::Mat score_intensity(const DenseLevelOutput& level, int height, int width) {
  return normalized(score_grid(level), height, width);
}

cv::Mat fused_intensity(const DecodedLevels& decoded, const AdaptiveWeights& weights, int height,
                        int width) {
  cv::Mat sum;
  for (int l = 0; l < 3; ++l) {
    cv::Mat g = score_grid(decoded[l]);
    if (!sum.empty() && g.size() != sum.size()) {
      cv::resize(g, g, sum.size(), 0, 0, cv::INTER_LINEAR);
    }
    if (sum.empty()) {
      sum = weights[l] * g;
    } else {
      sum += weights[l] * g;
    }
  }
  return normalized(sum, height, width);
}

cv::Mat overlay_heatmap(const cv::Mat& bgr, const cv::Mat& intensity, double alpha) {
  if (bgr.type() != CV_8UC3) throw ShapeError("overlay expects an 8-bit BGR image");
  if (bgr.size() != intensity.size()) throw ShapeError("overlay and intensity sizes differ");
  cv::Mat bytes;
  intensity.convertTo(bytes, CV_8U, 255.0);
  cv::Mat colour;
  cv::applyColorMap(bytes, colour, cv::COLORMAP_JET);
  cv::Mat out;
  cv::addWeighted(colour, alpha, bgr, 1.0 - alpha, 0.0, out);
  return out;
}

HeatmapSet render_heatmaps(const cv::Mat& display_bgr, const DecodedLevels& decoded,
                           const AdaptiveWeights& weights, double alpha) {
  const int h = display_bgr.rows;
  const int w = display_bgr.cols;
  HeatmapSet set;
  for (int l = 0; l < 3; ++l) {
    set.intensity[l] = score_intensity(decoded[l], h, w);
    set.overlay[l] = overlay_heatmap(display_bgr, set.intensity[l], alpha);
  }
  set.fused_intensity = fused_intensity(decoded, weights, h, w);
  set.fused_overlay = overlay_heatmap(display_bgr, set.fused_intensity, alpha);
  return set;
}

std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set,
                                                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  auto write = [&](const std::string& name, const cv::Mat& image) {
    const auto path = dir / name;
    if (!cv::imwrite(path.string(), image)) throw DataError("cannot write '" + path.string() + "'");
    paths.push_back(path);
  };
  for (int l = 0; l < 3; ++l) write("heatmap_" + std::string(kLevelNames[l]) + ".png", set.overlay[l]);
  write("heatmap_fused.png", set.fused_overlay);
  return paths;
}

}  // namespace haf
