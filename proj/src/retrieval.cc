#include "haf/retrieval.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/SVD>

#include "haf/error.h"

namespace haf {

Eigen::VectorXd aggregate_levels(const DecodedLevels& decoded) {
  Eigen::Index total = 0;
  for (const auto& lv : decoded) total += lv.channels();
  Eigen::VectorXd out(total);
  Eigen::Index off = 0;
  for (const auto& lv : decoded) {
    out.segment(off, lv.channels()) = lv.descriptors.transpose() * lv.scores;
    off += lv.channels();
  }
  return out;
}

std::vector<Eigen::VectorXd> regional_aggregates(const DecodedLevels& decoded,
                                                 const std::vector<int>& grids) {
  Eigen::Index total = 0;
  for (const auto& lv : decoded) total += lv.channels();
  std::vector<Eigen::VectorXd> out;
  for (int g : grids) {
    if (g < 1) throw ConfigError("regional grid size must be >= 1");
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        Eigen::VectorXd v(total);
        Eigen::Index off = 0;
        for (const auto& lv : decoded) {
          const int y0 = gy * lv.height / g;
          const int y1 = (gy + 1) * lv.height / g;
          const int x0 = gx * lv.width / g;
          const int x1 = (gx + 1) * lv.width / g;
          Eigen::VectorXd acc = Eigen::VectorXd::Zero(lv.channels());
          double mass = 0.0;
          for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
              const Eigen::Index i = static_cast<Eigen::Index>(y) * lv.width + x;
              acc += lv.scores(i) * lv.descriptors.row(i).transpose();
              mass += lv.scores(i);
            }
          }
          v.segment(off, lv.channels()) = mass > 0.0 ? Eigen::VectorXd(acc / mass) : acc;
          off += lv.channels();
        }
        out.push_back(std::move(v));
      }
    }
  }
  return out;
}

Eigen::VectorXd Projection::apply(const Eigen::VectorXd& x) const {
  if (!fitted()) throw ConfigError("projection has not been fitted");
  if (x.size() != in_dim()) {
    throw ShapeError("projection expects " + std::to_string(in_dim()) + "-D input, got " +
                     std::to_string(x.size()));
  }
  return scale.asDiagonal() * (components * (x - mean));
}

Projection fit_projection(const std::vector<Eigen::VectorXd>& samples,
                          const ProjectionOptions& options) {
  if (options.out_dim < 1) throw ConfigError("projection out_dim must be positive");
  if (options.shrinkage < 0.0) throw ConfigError("projection shrinkage must be >= 0");
  if (static_cast<int>(samples.size()) < options.out_dim) {
    throw DataError("fit_projection needs at least " + std::to_string(options.out_dim) +
                    " samples, got " + std::to_string(samples.size()));
  }
  const Eigen::Index d = samples.front().size();
  if (d < options.out_dim) {
    throw DataError("input dimension " + std::to_string(d) + " is below the output dimension");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (samples[static_cast<size_t>(i)].size() != d) throw ShapeError("ragged projection samples");
    x.row(i) = samples[static_cast<size_t>(i)].transpose();
  }
  Projection p;
  p.mean = x.colwise().mean().transpose();
  x.rowwise() -= p.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const Eigen::MatrixXd& v = svd.matrixV();
  const int k = options.out_dim;
  p.components.resize(k, d);
  p.scale.resize(k);
  Eigen::VectorXd eig(k);
  for (int i = 0; i < k; ++i) {
    eig(i) = i < sv.size() ? sv(i) * sv(i) / static_cast<double>(std::max<Eigen::Index>(n - 1, 1))
                           : 0.0;
    Eigen::VectorXd c = i < v.cols() ? Eigen::VectorXd(v.col(i)) : Eigen::VectorXd::Zero(d);
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c(arg) < 0.0) c = -c;
    p.components.row(i) = c.transpose();
  }
  const double shrink = options.shrinkage * eig.mean();
  const double floor = std::max(1e-12 * eig(0), 1e-300);
  for (int i = 0; i < k; ++i) p.scale(i) = 1.0 / std::sqrt(std::max(eig(i) + shrink, floor));
  return p;
}

GlobalDescriptor global_descriptor(const DecodedLevels& decoded, const Projection& projection,
                                   const std::string& image_id) {
  const Eigen::VectorXd y = projection.apply(aggregate_levels(decoded));
  const double norm = y.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw NumericError("global descriptor for '" + image_id + "' is degenerate");
  }
  GlobalDescriptor g;
  g.image_id = image_id;
  g.vector = (y / norm).cast<float>();
  return g;
}

double descriptor_distance(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a(i)) - static_cast<double>(b(i));
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

RetrievalResult query(const DescriptorDatabase& db, const GlobalDescriptor& descriptor, int k) {
  if (db.entries.empty()) throw DataError("query against an empty database");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (descriptor.vector.size() != db.dims) {
    throw ShapeError("query descriptor has dimension " + std::to_string(descriptor.vector.size()));
  }
  std::vector<RetrievalHit> hits;
  hits.reserve(db.entries.size());
  for (const auto& e : db.entries) {
    hits.push_back({e.image_id, descriptor_distance(descriptor.vector, e.descriptor)});
  }
  const auto less = [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.image_id < b.image_id;
  };
  const size_t keep = std::min(hits.size(), static_cast<size_t>(k));
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    less);
  hits.resize(keep);
  return {descriptor.image_id, std::move(hits)};
}

RecallCurve recall_at_n(const std::vector<RetrievalResult>& results,
                        const std::map<std::string, GeoPoint>& query_geo,
                        const std::map<std::string, GeoPoint>& reference_geo,
                        CoordinateMode mode, double radius_m, const std::vector<int>& ns) {
  RecallCurve curve;
  curve.ns = ns;
  curve.recall.assign(ns.size(), 0.0);
  if (results.empty()) return curve;
  // first_correct[q] = 1-based rank of the first hit inside the radius, or 0.
  std::vector<size_t> first_correct;
  for (const auto& r : results) {
    auto qit = query_geo.find(r.query_id);
    if (qit == query_geo.end()) throw DataError("query '" + r.query_id + "' has no geo-tag");
    size_t rank = 0;
    for (size_t i = 0; i < r.hits.size(); ++i) {
      auto rit = reference_geo.find(r.hits[i].image_id);
      if (rit == reference_geo.end()) {
        throw DataError("reference '" + r.hits[i].image_id + "' has no geo-tag");
      }
      if (geo_distance_m(qit->second, rit->second, mode) <= radius_m) {
        rank = i + 1;
        break;
      }
    }
    first_correct.push_back(rank);
  }
  for (size_t j = 0; j < ns.size(); ++j) {
    size_t hit = 0;
    for (size_t rank : first_correct) {
      if (rank > 0 && rank <= static_cast<size_t>(std::max(ns[j], 0))) ++hit;
    }
    curve.recall[j] = static_cast<double>(hit) / static_cast<double>(results.size());
  }
  return curve;
}

double average_precision(const std::vector<bool>& relevance, std::optional<int> total_relevant) {
  int found = 0;
  double sum = 0.0;
  for (size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i]) {
      ++found;
      sum += static_cast<double>(found) / static_cast<double>(i + 1);
    }
  }
  const int denom = total_relevant ? *total_relevant : found;
  if (denom <= 0) return 0.0;
  return sum / denom;
}

MapResult mean_average_precision(const std::vector<std::vector<bool>>& relevance,
                                 const std::vector<int>& total_relevant) {
  if (!total_relevant.empty() && total_relevant.size() != relevance.size()) {
    throw ConfigError("total_relevant must have one entry per query");
  }
  MapResult out;
  double sum = 0.0;
  for (size_t q = 0; q < relevance.size(); ++q) {
    const int in_list = static_cast<int>(std::count(relevance[q].begin(), relevance[q].end(), true));
    const int total = total_relevant.empty() ? in_list : total_relevant[q];
    if (total == 0) {
      ++out.excluded_queries;
      continue;
    }
    const double ap = average_precision(relevance[q], total);
    out.average_precisions.push_back(ap);
    sum += ap;
    ++out.evaluated_queries;
  }
  if (out.evaluated_queries == 0) throw DataError("no query has a relevant item; mAP undefined");
  out.map = sum / out.evaluated_queries;
  return out;
}

std::vector<PrPoint> precision_recall_curve(const std::vector<RetrievalResult>& results,
                                            const std::vector<bool>& top1_correct) {
  if (results.size() != top1_correct.size()) {
    throw ConfigError("precision_recall_curve needs one correctness flag per query");
  }
  std::vector<size_t> order;
  for (size_t i = 0; i < results.size(); ++i) {
    if (!results[i].hits.empty()) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return results[a].hits.front().distance < results[b].hits.front().distance;
  });
  std::vector<PrPoint> curve;
  const double total = static_cast<double>(results.size());
  size_t retrieved = 0;
  size_t correct = 0;
  for (size_t i = 0; i < order.size(); ++i) {
    ++retrieved;
    if (top1_correct[order[i]]) ++correct;
    const double t = results[order[i]].hits.front().distance;
    const bool last_at_threshold =
        i + 1 == order.size() || results[order[i + 1]].hits.front().distance != t;
    if (!last_at_threshold) continue;
    curve.push_back({t, static_cast<double>(correct) / static_cast<double>(retrieved),
                     static_cast<double>(correct) / total});
  }
  return curve;
}

}  // namespace haf
