#include "haf/attention_decoder.h"

#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "haf/error.h"

namespace haf {
namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_mask_shape(const FeatureMapD& features, const FeatureMapD& mask) {
  if (mask.height != features.height || mask.width != features.width || mask.channels() != 1) {
    throw ShapeError("mask " + shape_string(mask) + " does not match features " +
                     shape_string(features));
  }
}

}  // namespace

MaskParams MaskParams::zeros(const HeadConfig& config) {
  config.validate();
  MaskParams p;
  for (int l = 0; l < 3; ++l) {
    p.levels[l].weight = Eigen::VectorXd::Zero(config.out_channels(l));
    p.levels[l].bias = 0.0;
  }
  return p;
}

MaskParams MaskParams::random(const HeadConfig& config, std::uint64_t seed) {
  MaskParams p = zeros(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, config.init_std);
  for (auto& lv : p.levels) {
    for (Eigen::Index i = 0; i < lv.weight.size(); ++i) lv.weight(i) = dist(rng);
  }
  return p;
}

FeatureMapD compute_mask(const FeatureMapD& features, const MaskLevelParams& params) {
  if (features.channels() != params.weight.size()) {
    throw ShapeError("mask head expects " + std::to_string(params.weight.size()) +
                     " channels, got " + shape_string(features));
  }
  FeatureMapD mask(features.height, features.width, 1);
  mask.data.col(0) = ((features.data * params.weight).array() + params.bias)
                         .unaryExpr([](double v) { return softplus(v); })
                         .matrix();
  return mask;
}

AttentionMaskSet compute_masks(const HierarchicalFeatureSet& features, const MaskParams& params) {
  AttentionMaskSet set;
  for (int l = 0; l < 3; ++l) set.masks[l] = compute_mask(features.levels[l], params.levels[l]);
  return set;
}

FeatureMapD apply_attention(const FeatureMapD& features, const FeatureMapD& mask) {
  check_mask_shape(features, mask);
  FeatureMapD out;
  out.height = features.height;
  out.width = features.width;
  out.data = mask.data.col(0).asDiagonal() * features.data;
  return out;
}

AttentionWeightedFeatures apply_attention(const HierarchicalFeatureSet& features,
                                          const AttentionMaskSet& masks) {
  AttentionWeightedFeatures out;
  for (int l = 0; l < 3; ++l) out.levels[l] = apply_attention(features.levels[l], masks.masks[l]);
  return out;
}

DescriptorField dense_descriptors(const FeatureMapD& weighted) {
  DescriptorField field;
  field.descriptors = weighted;
  field.norms = weighted.data.rowwise().norm();
  field.flagged.assign(static_cast<size_t>(weighted.pixels()), 0);
  for (Eigen::Index i = 0; i < weighted.pixels(); ++i) {
    const double n = field.norms(i);
    field.descriptors.data.row(i) /= (n + kDescriptorEpsilon);
    if (n < kFlagNormThreshold) field.flagged[static_cast<size_t>(i)] = 1;
  }
  return field;
}

DetectionScores detection_scores(const FeatureMapD& weighted) {
  DetectionScores det;
  const Eigen::Index n = weighted.pixels();
  det.max_response.resize(n);
  det.channel_argmax.resize(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    // Strict comparison keeps the lowest channel index on ties.
    int best = 0;
    double best_v = weighted.data(i, 0);
    for (int c = 1; c < weighted.channels(); ++c) {
      if (weighted.data(i, c) > best_v) {
        best_v = weighted.data(i, c);
        best = c;
      }
    }
    det.max_response(i) = best_v;
    det.channel_argmax[static_cast<size_t>(i)] = best;
  }
  det.total = det.max_response.sum();
  if (!(det.total > 0.0) || !std::isfinite(det.total)) {
    spdlog::warn("detection map has no positive response; using uniform scores");
    det.uniform_fallback = true;
    det.scores = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  } else {
    det.scores = det.max_response / det.total;
  }
  return det;
}

DenseLevelOutput decode_level(const FeatureMapD& weighted) {
  DescriptorField field = dense_descriptors(weighted);
  DetectionScores det = detection_scores(weighted);
  DenseLevelOutput out;
  out.height = weighted.height;
  out.width = weighted.width;
  out.descriptors = std::move(field.descriptors.data);
  out.flagged = std::move(field.flagged);
  out.scores = std::move(det.scores);
  out.channel_argmax = std::move(det.channel_argmax);
  return out;
}

DecodedLevels decode(const HierarchicalFeatureSet& features, const AttentionMaskSet& masks) {
  const AttentionWeightedFeatures weighted = apply_attention(features, masks);
  DecodedLevels out;
  for (int l = 0; l < 3; ++l) out[l] = decode_level(weighted.levels[l]);
  return out;
}

DenseLevelOutput decode_level_from_params(const FeatureMapD& features,
                                          const MaskLevelParams& params, DecoderCache* cache) {
  if (!cache) return decode_level(apply_attention(features, compute_mask(features, params)));

  cache->features = features;
  cache->mask_pre = (features.data * params.weight).array() + params.bias;
  cache->mask = cache->mask_pre.unaryExpr([](double v) { return softplus(v); });
  cache->weighted.height = features.height;
  cache->weighted.width = features.width;
  cache->weighted.data = cache->mask.asDiagonal() * features.data;
  cache->field = dense_descriptors(cache->weighted);
  cache->detection = detection_scores(cache->weighted);

  DenseLevelOutput out;
  out.height = features.height;
  out.width = features.width;
  out.descriptors = cache->field.descriptors.data;
  out.flagged = cache->field.flagged;
  out.scores = cache->detection.scores;
  out.channel_argmax = cache->detection.channel_argmax;
  return out;
}

FeatureMapD decode_level_backward(const DecoderCache& cache, const MaskLevelParams& params,
                                  const RowMatrixD& grad_descriptors,
                                  const Eigen::VectorXd& grad_scores, MaskLevelParams* grad) {
  const FeatureMapD& wf = cache.weighted;
  const Eigen::Index n = wf.pixels();
  RowMatrixD grad_weighted = RowMatrixD::Zero(n, wf.channels());

  // s = D / sum(D), D = max over channels.
  if (!cache.detection.uniform_fallback) {
    const auto& det = cache.detection;
    const double dot = grad_scores.dot(det.scores);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double grad_max = (grad_scores(i) - dot) / det.total;
      grad_weighted(i, det.channel_argmax[static_cast<size_t>(i)]) += grad_max;
    }
  }

  // K = F' / (|F'| + eps)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = cache.field.norms(i);
    const double denom = norm + kDescriptorEpsilon;
    auto g = grad_descriptors.row(i);
    grad_weighted.row(i) += g / denom;
    if (norm > 0.0) {
      const double proj = g.dot(wf.data.row(i));
      grad_weighted.row(i) -= wf.data.row(i) * (proj / (denom * denom * norm));
    }
  }

  // F' = m * F
  const FeatureMapD& f = cache.features;
  const Eigen::VectorXd grad_mask = grad_weighted.cwiseProduct(f.data).rowwise().sum();
  FeatureMapD grad_features;
  grad_features.height = f.height;
  grad_features.width = f.width;
  grad_features.data = cache.mask.asDiagonal() * grad_weighted;

  // m = softplus(F w + b)
  const Eigen::VectorXd grad_mask_pre =
      grad_mask.cwiseProduct(cache.mask_pre.unaryExpr([](double v) { return sigmoid(v); }));
  grad->weight.noalias() += f.data.transpose() * grad_mask_pre;
  grad->bias += grad_mask_pre.sum();
  grad_features.data.noalias() += grad_mask_pre * params.weight.transpose();
  return grad_features;
}

}  // namespace haf
