#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "haf/attention_decoder.h"

namespace haf {

struct Correspondence {
  int query = 0;      // pixel index in the query level
  int reference = 0;  // pixel index in the reference level
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  std::string method = "mutual-nn";

  bool empty() const { return pairs.empty(); }
  size_t size() const { return pairs.size(); }
};

// Mutual nearest neighbours under Euclidean descriptor distance, skipping
// flagged pixels. Ties resolve to the lowest pixel index.
CorrespondenceSet find_correspondences(const DenseLevelOutput& query,
                                       const DenseLevelOutput& reference);

// dL/dK and dL/ds for one decoded level.
struct LevelGrad {
  RowMatrixD descriptors;
  Eigen::VectorXd scores;

  static LevelGrad zeros_like(const DenseLevelOutput& level);
};

// Score products below this make the weighting fall back to uniform.
inline constexpr double kDegenerateWeightSum = 1e-12;

// Detection-weighted descriptor distance. Returns 0 for an empty set. When
// gradient accumulators are given, adds `scale` * dDelta/d(K, s) into them.
double weighted_distance(const DenseLevelOutput& query, const DenseLevelOutput& reference,
                         const CorrespondenceSet& corr, double scale = 0.0,
                         LevelGrad* grad_query = nullptr, LevelGrad* grad_reference = nullptr);

double triplet_loss(double distance_positive, double distance_negative, double margin);

class AdaptiveWeights {
 public:
  // Throws ConfigError unless every weight is in [0, 1] and they sum to 1.
  AdaptiveWeights(double w1, double w2, double w3);
  static AdaptiveWeights defaults() { return {0.1, 0.4, 0.5}; }

  double operator[](int level) const { return w_[level]; }
  const std::array<double, 3>& values() const { return w_; }

 private:
  std::array<double, 3> w_;
};

double total_loss(const std::array<double, 3>& level_losses, const AdaptiveWeights& weights);

struct LossBreakdown {
  std::array<double, 3> distance_positive{};
  std::array<double, 3> distance_negative{};
  std::array<double, 3> level_loss{};
  std::array<bool, 3> skipped{};  // empty correspondence set on either pair
  double total = 0.0;
  double margin = 0.0;
};

struct TripletGrads {
  std::array<LevelGrad, 3> query;
  std::array<LevelGrad, 3> positive;
  std::array<LevelGrad, 3> negative;
};

// Correspondences for each (pair, level) of a triplet. Held fixed while
// differentiating.
struct TripletMatches {
  std::array<CorrespondenceSet, 3> positive;
  std::array<CorrespondenceSet, 3> negative;
};

TripletMatches match_triplet(const DecodedLevels& query, const DecodedLevels& positive,
                             const DecodedLevels& negative);

// Per-level triplet loss combined with the adaptive weights. If `grads` is
// non-null it receives `scale` * dL_total/d(K, s) for all three images.
LossBreakdown triplet_objective(const DecodedLevels& query, const DecodedLevels& positive,
                                const DecodedLevels& negative, const TripletMatches& matches,
                                const AdaptiveWeights& weights, double margin,
                                double scale = 1.0, TripletGrads* grads = nullptr);

}  // namespace haf
