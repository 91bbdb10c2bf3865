#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "haf/hier_features.h"
#include "haf/tensor.h"

namespace haf {

// Added to the descriptor norm before dividing.
inline constexpr double kDescriptorEpsilon = 1e-12;
// Pixels whose attention-weighted vector is shorter than this are flagged and
// never take part in correspondence matching.
inline constexpr double kFlagNormThreshold = 1e-8;

// Per-level mask generator: 1x1 conv to one channel, then softplus.
struct MaskLevelParams {
  Eigen::VectorXd weight;
  double bias = 0.0;
};

struct MaskParams {
  std::array<MaskLevelParams, 3> levels;

  static MaskParams random(const HeadConfig& config, std::uint64_t seed);
  static MaskParams zeros(const HeadConfig& config);
};

// {m1, m2, m3}, each an H/2 x W/2 x 1 non-negative map.
struct AttentionMaskSet {
  std::array<FeatureMapD, 3> masks;
};

struct AttentionWeightedFeatures {
  std::array<FeatureMapD, 3> levels;
};

struct DescriptorField {
  FeatureMapD descriptors;     // unit rows, or zero rows where flagged
  Eigen::VectorXd norms;       // norm before normalization
  std::vector<std::uint8_t> flagged;
};

struct DetectionScores {
  Eigen::VectorXd scores;          // s, sums to one
  Eigen::VectorXd max_response;    // strongest channel response per pixel
  std::vector<int> channel_argmax; // lowest index wins ties
  double total = 0.0;
  bool uniform_fallback = false;
};

struct DenseLevelOutput {
  int height = 0;
  int width = 0;
  RowMatrixD descriptors;  // K: pixels x channels
  Eigen::VectorXd scores;  // s
  std::vector<int> channel_argmax;
  std::vector<std::uint8_t> flagged;

  Eigen::Index pixels() const { return descriptors.rows(); }
  int channels() const { return static_cast<int>(descriptors.cols()); }
};

using DecodedLevels = std::array<DenseLevelOutput, 3>;

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

FeatureMapD compute_mask(const FeatureMapD& features, const MaskLevelParams& params);
AttentionMaskSet compute_masks(const HierarchicalFeatureSet& features, const MaskParams& params);

FeatureMapD apply_attention(const FeatureMapD& features, const FeatureMapD& mask);
AttentionWeightedFeatures apply_attention(const HierarchicalFeatureSet& features,
                                          const AttentionMaskSet& masks);

DescriptorField dense_descriptors(const FeatureMapD& weighted);
DetectionScores detection_scores(const FeatureMapD& weighted);
DenseLevelOutput decode_level(const FeatureMapD& weighted);
DecodedLevels decode(const HierarchicalFeatureSet& features, const AttentionMaskSet& masks);

// Forward intermediates of one level, from projected features to (K, s).
struct DecoderCache {
  FeatureMapD features;
  Eigen::VectorXd mask_pre;
  Eigen::VectorXd mask;
  FeatureMapD weighted;
  DescriptorField field;
  DetectionScores detection;
};

DenseLevelOutput decode_level_from_params(const FeatureMapD& features,
                                          const MaskLevelParams& params,
                                          DecoderCache* cache = nullptr);

// Given dL/dK and dL/ds, accumulates mask parameter gradients into `grad` and
// returns dL/dF for the projected features.
FeatureMapD decode_level_backward(const DecoderCache& cache, const MaskLevelParams& params,
                                  const RowMatrixD& grad_descriptors,
                                  const Eigen::VectorXd& grad_scores, MaskLevelParams* grad);

}  // namespace haf
