#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Core>

#include "haf/backbone.h"
#include "haf/tensor.h"

namespace haf {

enum Level : int { kLow = 0, kMid = 1, kHigh = 2 };
inline constexpr std::array<const char*, 3> kLevelNames = {"l", "m", "h"};

// Channel plan of the three projection heads.
struct HeadConfig {
  std::array<int, 3> tap_channels = {256, 512, 512};
  std::array<double, 3> multipliers = {1.5, 1.0, 0.5};
  // Standard deviation of the normal init used for every head layer.
  // Descriptors are L2-normalized, so the loss is invariant to the head weight
  // scale and the effective step is lr / |theta|^2; small heads learn at lr 1e-4.
  double init_std = 1e-3;

  int out_channels(int level) const;
  int total_channels() const;
  // Throws ConfigError for non-positive widths.
  void validate() const;
};

// One projection head: ReLU6 1x1 conv, bilinear upsample, then the adaptive
// spatial fusion gate (3x3 conv -> sigmoid, multiplied into the upsampled map).
struct ProjectionLevelParams {
  RowMatrixD weight;  // tap_channels x out_channels
  Eigen::VectorXd bias;
  RowMatrixD gate_weight;  // 9 x out_channels, row = (dy + 1) * 3 + (dx + 1)
  double gate_bias = 0.0;
};

struct ProjectionParams {
  std::array<ProjectionLevelParams, 3> levels;

  static ProjectionParams random(const HeadConfig& config, std::uint64_t seed);
  static ProjectionParams zeros(const HeadConfig& config);
};

// {F_l, F_m, F_h}, all at half the input resolution.
struct HierarchicalFeatureSet {
  std::array<FeatureMapD, 3> levels;

  const FeatureMapD& low() const { return levels[kLow]; }
  const FeatureMapD& mid() const { return levels[kMid]; }
  const FeatureMapD& high() const { return levels[kHigh]; }
  int total_channels() const;
};

// Intermediates retained for the backward pass of one projection head.
struct ProjectionCache {
  FeatureMapD tap;
  RowMatrixD pre_activation;
  FeatureMapD upsampled;
  Eigen::VectorXd gate;
};

inline double relu6(double x) { return x < 0.0 ? 0.0 : (x > 6.0 ? 6.0 : x); }

// Bilinear resize, align_corners = false (half-pixel centers, edge clamped).
FeatureMapD upsample_bilinear(const FeatureMapD& input, int out_height, int out_width);
FeatureMapD upsample_bilinear_backward(const FeatureMapD& grad_output, int in_height,
                                       int in_width);

FeatureMapD project_level(const FeatureMapF& tap, int out_height, int out_width,
                          const ProjectionLevelParams& params,
                          ProjectionCache* cache = nullptr);

// Accumulates parameter gradients into `grad` (which must be shaped like params).
void project_level_backward(const ProjectionCache& cache, const ProjectionLevelParams& params,
                            const FeatureMapD& grad_output, ProjectionLevelParams* grad);

// Output spatial shape is 2x the C3 tap, i.e. half the input resolution.
HierarchicalFeatureSet project_taps(const RawTapSet& taps, const ProjectionParams& params);

}  // namespace haf
