#include "haf/pipeline.h"

#include <chrono>
#include <set>

#include <spdlog/spdlog.h>

#include "haf/error.h"

namespace haf {

TapCache::TapCache(const DatasetManifest& manifest, const Backbone& backbone,
                   const PreprocessConfig& preprocess, const std::vector<Split>& splits)
    : manifest_(manifest), preprocess_(preprocess) {
  const std::set<Split> wanted(splits.begin(), splits.end());
  for (const auto& r : manifest_.records) {
    if (!wanted.count(r.split)) continue;
    try {
      taps_.emplace(r.image_id, extract_taps(load_image(manifest_, r, preprocess_), backbone));
    } catch (const DataError& e) {
      spdlog::warn("skipping '{}': {}", r.image_id, e.what());
      skipped_.push_back(r.image_id);
    }
  }
  if (!skipped_.empty()) {
    const std::set<std::string> gone(skipped_.begin(), skipped_.end());
    std::erase_if(manifest_.records,
                  [&](const GeoImageRecord& r) { return gone.count(r.image_id) > 0; });
  }
}

const RawTapSet& TapCache::taps(const std::string& id) const {
  auto it = taps_.find(id);
  if (it == taps_.end()) throw DataError("no cached taps for '" + id + "'");
  return it->second;
}

std::vector<std::string> TapCache::ids(Split split) const {
  std::vector<std::string> out;
  for (const auto& r : manifest_.records) {
    if (r.split == split && taps_.count(r.image_id)) out.push_back(r.image_id);
  }
  return out;
}

std::vector<Eigen::VectorXd> projection_samples(const std::vector<DecodedLevels>& decoded,
                                                int min_samples) {
  std::vector<int> grids = {1, 2, 3};
  int max_grid = 1;
  for (const auto& d : decoded) max_grid = std::max(max_grid, std::min(d[0].height, d[0].width));
  while (true) {
    std::vector<Eigen::VectorXd> samples;
    for (const auto& d : decoded) {
      auto r = regional_aggregates(d, grids);
      samples.insert(samples.end(), std::make_move_iterator(r.begin()),
                     std::make_move_iterator(r.end()));
    }
    if (static_cast<int>(samples.size()) >= min_samples || grids.back() >= max_grid) {
      return samples;
    }
    grids.push_back(grids.back() + 1);
  }
}

Projection fit_projection_on(const TapCache& cache, const HeadParams& heads,
                             const std::vector<std::string>& ids,
                             const ProjectionOptions& options) {
  std::vector<DecodedLevels> decoded;
  decoded.reserve(ids.size());
  for (const auto& id : ids) decoded.push_back(decode_with_params(cache.taps(id), heads));
  return fit_projection(projection_samples(decoded, options.out_dim), options);
}

RetrievalEvaluation evaluate_database(const DescriptorDatabase& db,
                                      const std::vector<GlobalDescriptor>& queries,
                                      const std::map<std::string, GeoPoint>& query_geo,
                                      double radius_m, const std::vector<int>& ns) {
  RetrievalEvaluation ev;
  std::map<std::string, GeoPoint> ref_geo;
  for (const auto& e : db.entries) ref_geo[e.image_id] = e.geo;
  const int k = static_cast<int>(db.entries.size());
  for (const auto& q : queries) ev.results.push_back(query(db, q, k));
  ev.recall = recall_at_n(ev.results, query_geo, ref_geo, db.coordinates, radius_m, ns);

  std::vector<std::vector<bool>> relevance;
  for (const auto& r : ev.results) {
    const GeoPoint& qg = query_geo.at(r.query_id);
    std::vector<bool> rel;
    for (const auto& h : r.hits) {
      rel.push_back(geo_distance_m(qg, ref_geo.at(h.image_id), db.coordinates) <= radius_m);
    }
    ev.top1_correct.push_back(!rel.empty() && rel.front());
    relevance.push_back(std::move(rel));
  }
  ev.pr_curve = precision_recall_curve(ev.results, ev.top1_correct);
  try {
    ev.map = mean_average_precision(relevance);
    ev.map_defined = true;
  } catch (const DataError&) {
    ev.map_defined = false;
  }
  return ev;
}

RetrievalEvaluation evaluate_retrieval(const TapCache& cache, const HeadParams& heads,
                                       const Projection& projection,
                                       const std::vector<std::string>& query_ids,
                                       const std::vector<std::string>& reference_ids,
                                       double radius_m, const std::vector<int>& ns) {
  const auto& manifest = cache.manifest();
  DescriptorDatabase db;
  db.coordinates = manifest.coordinates;
  db.projection = projection;
  for (const auto& id : reference_ids) {
    const auto g = global_descriptor(decode_with_params(cache.taps(id), heads), projection, id);
    db.entries.push_back({id, g.vector, manifest.find(id)->geo});
  }
  std::vector<GlobalDescriptor> queries;
  std::map<std::string, GeoPoint> query_geo;
  for (const auto& id : query_ids) {
    queries.push_back(global_descriptor(decode_with_params(cache.taps(id), heads), projection, id));
    query_geo[id] = manifest.find(id)->geo;
  }
  return evaluate_database(db, queries, query_geo, radius_m, ns);
}

DescriptorDatabase build_database(const DatasetManifest& manifest,
                                  const std::vector<const GeoImageRecord*>& references,
                                  const Model& model, const Projection& projection,
                                  const PreprocessConfig& preprocess,
                                  const std::string& checkpoint_sha256) {
  if (!projection.fitted()) throw ConfigError("build_database needs a fitted projection");
  std::set<std::string> seen;
  for (const auto* r : references) {
    if (!seen.insert(r->image_id).second) {
      throw DataError("duplicate image_id '" + r->image_id + "'");
    }
  }
  DescriptorDatabase db;
  db.coordinates = manifest.coordinates;
  db.checkpoint_sha256 = checkpoint_sha256;
  db.created_unix = std::chrono::duration_cast<std::chrono::seconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count();
  db.projection = projection;
  for (const auto* r : references) {
    ImageTensor image;
    try {
      image = load_image(manifest, *r, preprocess);
    } catch (const DataError& e) {
      spdlog::warn("skipping '{}': {}", r->image_id, e.what());
      continue;
    }
    const auto g = global_descriptor(model.decode(image), projection, r->image_id);
    db.entries.push_back({r->image_id, g.vector, r->geo});
  }
  if (db.entries.empty()) throw DataError("database build produced no entries");
  db.validate();
  return db;
}

}  // namespace haf
