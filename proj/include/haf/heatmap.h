#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "haf/attention_decoder.h"
#include "haf/objective.h"

namespace haf {

// Detection scores of one level resized to (height, width) and divided by
// their maximum, CV_32F in [0, 1].
cv::Mat score_intensity(const DenseLevelOutput& level, int height, int width);

// Levels combined as sum_l w_l * s_l before the same normalization.
cv::Mat fused_intensity(const DecodedLevels& decoded, const AdaptiveWeights& weights, int height,
                        int width);

// JET colour map of `intensity` alpha-blended over an 8-bit BGR image.
cv::Mat overlay_heatmap(const cv::Mat& bgr, const cv::Mat& intensity, double alpha = 0.5);

struct HeatmapSet {
  std::array<cv::Mat, 3> intensity;
  cv::Mat fused_intensity;
  std::array<cv::Mat, 3> overlay;
  cv::Mat fused_overlay;
};

HeatmapSet render_heatmaps(const cv::Mat& display_bgr, const DecodedLevels& decoded,
                           const AdaptiveWeights& weights, double alpha = 0.5);

// Writes heatmap_l.png, heatmap_m.png, heatmap_h.png, heatmap_fused.png and
// returns their paths.
std::vector<std::filesystem::path> write_heatmaps(const HeatmapSet& set,
                                                  const std::filesystem::path& dir);

}  // namespace haf
