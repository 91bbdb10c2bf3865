#include "haf/objective.h"

#include <cmath>
#include <limits>

#include "haf/error.h"

namespace haf {

CorrespondenceSet find_correspondences(const DenseLevelOutput& query,
                                       const DenseLevelOutput& reference) {
  CorrespondenceSet set;
  if (query.channels() != reference.channels()) {
    throw ShapeError("correspondences need levels with equal channel counts");
  }
  std::vector<int> qi;
  std::vector<int> ri;
  for (Eigen::Index i = 0; i < query.pixels(); ++i) {
    if (!query.flagged[static_cast<size_t>(i)]) qi.push_back(static_cast<int>(i));
  }
  for (Eigen::Index i = 0; i < reference.pixels(); ++i) {
    if (!reference.flagged[static_cast<size_t>(i)]) ri.push_back(static_cast<int>(i));
  }
  if (qi.empty() || ri.empty()) return set;

  // Squared distances via |a|^2 + |b|^2 - 2ab in float32; matching only needs
  // the ordering.
  const int c = query.channels();
  RowMatrixF qa(qi.size(), c);
  RowMatrixF ra(ri.size(), c);
  for (size_t k = 0; k < qi.size(); ++k) qa.row(k) = query.descriptors.row(qi[k]).cast<float>();
  for (size_t k = 0; k < ri.size(); ++k) ra.row(k) = reference.descriptors.row(ri[k]).cast<float>();
  const Eigen::VectorXf qn = qa.rowwise().squaredNorm();
  const Eigen::VectorXf rn = ra.rowwise().squaredNorm();
  Eigen::MatrixXf d2 = -2.0f * (qa * ra.transpose());
  d2.colwise() += qn;
  d2.rowwise() += rn.transpose();

  const Eigen::Index nq = d2.rows();
  const Eigen::Index nr = d2.cols();
  std::vector<Eigen::Index> q_best(nq);
  std::vector<Eigen::Index> r_best(nr, 0);
  std::vector<float> r_best_v(nr, std::numeric_limits<float>::infinity());
  for (Eigen::Index a = 0; a < nq; ++a) {
    Eigen::Index best = 0;
    float best_v = std::numeric_limits<float>::infinity();
    for (Eigen::Index b = 0; b < nr; ++b) {
      const float v = d2(a, b);
      if (v < best_v) {
        best_v = v;
        best = b;
      }
      if (v < r_best_v[b]) {
        r_best_v[b] = v;
        r_best[b] = a;
      }
    }
    q_best[a] = best;
  }
  for (Eigen::Index a = 0; a < nq; ++a) {
    if (r_best[q_best[a]] == a) {
      set.pairs.push_back({qi[a], ri[q_best[a]]});
    }
  }
  return set;
}

LevelGrad LevelGrad::zeros_like(const DenseLevelOutput& level) {
  LevelGrad g;
  g.descriptors = RowMatrixD::Zero(level.pixels(), level.channels());
  g.scores = Eigen::VectorXd::Zero(level.pixels());
  return g;
}

double weighted_distance(const DenseLevelOutput& query, const DenseLevelOutput& reference,
                         const CorrespondenceSet& corr, double scale, LevelGrad* grad_query,
                         LevelGrad* grad_reference) {
  if (corr.empty()) return 0.0;
  const size_t n = corr.size();
  std::vector<double> products(n);
  std::vector<double> dists(n);
  double product_sum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    const auto& p = corr.pairs[k];
    products[k] = query.scores(p.query) * reference.scores(p.reference);
    dists[k] = (query.descriptors.row(p.query) - reference.descriptors.row(p.reference)).norm();
    product_sum += products[k];
  }
  const bool uniform = product_sum < kDegenerateWeightSum;
  double delta = 0.0;
  for (size_t k = 0; k < n; ++k) {
    const double w = uniform ? 1.0 / static_cast<double>(n) : products[k] / product_sum;
    delta += w * dists[k];
  }

  const bool want_grad = grad_query && grad_reference && scale != 0.0;
  if (!want_grad) return delta;
  for (size_t k = 0; k < n; ++k) {
    const auto& p = corr.pairs[k];
    const double w = uniform ? 1.0 / static_cast<double>(n) : products[k] / product_sum;
    if (dists[k] > 0.0) {
      const Eigen::RowVectorXd diff =
          query.descriptors.row(p.query) - reference.descriptors.row(p.reference);
      const double coeff = scale * w / dists[k];
      grad_query->descriptors.row(p.query) += coeff * diff;
      grad_reference->descriptors.row(p.reference) -= coeff * diff;
    }
    if (!uniform) {
      const double grad_product = scale * (dists[k] - delta) / product_sum;
      grad_query->scores(p.query) += grad_product * reference.scores(p.reference);
      grad_reference->scores(p.reference) += grad_product * query.scores(p.query);
    }
  }
  return delta;
}

double triplet_loss(double distance_positive, double distance_negative, double margin) {
  return std::max(margin + distance_positive - distance_negative, 0.0);
}

AdaptiveWeights::AdaptiveWeights(double w1, double w2, double w3) : w_{w1, w2, w3} {
  for (double w : w_) {
    if (!(w >= 0.0 && w <= 1.0)) {
      throw ConfigError("adaptive weights must lie in [0, 1]");
    }
  }
  if (std::abs(w1 + w2 + w3 - 1.0) > 1e-9) {
    throw ConfigError("adaptive weights must sum to 1 (got " + std::to_string(w1 + w2 + w3) +
                      ")");
  }
}

double total_loss(const std::array<double, 3>& level_losses, const AdaptiveWeights& weights) {
  return weights[0] * level_losses[0] + weights[1] * level_losses[1] +
         weights[2] * level_losses[2];
}

TripletMatches match_triplet(const DecodedLevels& query, const DecodedLevels& positive,
                             const DecodedLevels& negative) {
  TripletMatches m;
  for (int l = 0; l < 3; ++l) {
    m.positive[l] = find_correspondences(query[l], positive[l]);
    m.negative[l] = find_correspondences(query[l], negative[l]);
  }
  return m;
}

LossBreakdown triplet_objective(const DecodedLevels& query, const DecodedLevels& positive,
                                const DecodedLevels& negative, const TripletMatches& matches,
                                const AdaptiveWeights& weights, double margin, double scale,
                                TripletGrads* grads) {
  if (margin < 0.0) throw ConfigError("margin must be non-negative");
  LossBreakdown out;
  out.margin = margin;
  for (int l = 0; l < 3; ++l) {
    const auto& pos_corr = matches.positive[l];
    const auto& neg_corr = matches.negative[l];
    if (pos_corr.empty() || neg_corr.empty()) {
      out.skipped[l] = true;
      out.level_loss[l] = 0.0;
      continue;
    }
    out.distance_positive[l] = weighted_distance(query[l], positive[l], pos_corr);
    out.distance_negative[l] = weighted_distance(query[l], negative[l], neg_corr);
    out.level_loss[l] = triplet_loss(out.distance_positive[l], out.distance_negative[l], margin);
    if (grads && out.level_loss[l] > 0.0 && weights[l] != 0.0) {
      const double s = scale * weights[l];
      weighted_distance(query[l], positive[l], pos_corr, s, &grads->query[l],
                        &grads->positive[l]);
      weighted_distance(query[l], negative[l], neg_corr, -s, &grads->query[l],
                        &grads->negative[l]);
    }
  }
  out.total = total_loss(out.level_loss, weights);
  return out;
}

}  // namespace haf
