#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "haf/data_io.h"
#include "haf/model.h"
#include "haf/retrieval.h"

namespace haf {

// Backbone taps for a set of manifest records, computed once. The backbone
// is frozen, so taps stay valid while the heads train.
class TapCache {
 public:
  TapCache(const DatasetManifest& manifest, const Backbone& backbone,
           const PreprocessConfig& preprocess, const std::vector<Split>& splits);

  const DatasetManifest& manifest() const { return manifest_; }
  const PreprocessConfig& preprocess() const { return preprocess_; }
  bool contains(const std::string& id) const { return taps_.count(id) > 0; }
  const RawTapSet& taps(const std::string& id) const;
  // Ids in manifest order, restricted to the given split.
  std::vector<std::string> ids(Split split) const;
  const std::vector<std::string>& skipped() const { return skipped_; }

 private:
  DatasetManifest manifest_;
  PreprocessConfig preprocess_;
  std::map<std::string, RawTapSet> taps_;
  std::vector<std::string> skipped_;
};

// Samples for fit_projection: regional aggregates on grids 1..3, refined
// further when that yields fewer than `min_samples` vectors.
std::vector<Eigen::VectorXd> projection_samples(const std::vector<DecodedLevels>& decoded,
                                                int min_samples = kGlobalDim);

Projection fit_projection_on(const TapCache& cache, const HeadParams& heads,
                             const std::vector<std::string>& ids,
                             const ProjectionOptions& options = {});

struct RetrievalEvaluation {
  std::vector<RetrievalResult> results;
  RecallCurve recall;
  std::vector<bool> top1_correct;
  std::vector<PrPoint> pr_curve;
  MapResult map;
  bool map_defined = false;
};

// Queries `query_ids` against a database of `reference_ids`, relevance being
// geo-distance <= radius_m.
RetrievalEvaluation evaluate_retrieval(const TapCache& cache, const HeadParams& heads,
                                       const Projection& projection,
                                       const std::vector<std::string>& query_ids,
                                       const std::vector<std::string>& reference_ids,
                                       double radius_m, const std::vector<int>& ns);

RetrievalEvaluation evaluate_database(const DescriptorDatabase& db,
                                      const std::vector<GlobalDescriptor>& queries,
                                      const std::map<std::string, GeoPoint>& query_geo,
                                      double radius_m, const std::vector<int>& ns);

// One entry per record in `references`. Unreadable images are logged and
// skipped; duplicate ids and an empty result are errors.
DescriptorDatabase build_database(const DatasetManifest& manifest,
                                  const std::vector<const GeoImageRecord*>& references,
                                  const Model& model, const Projection& projection,
                                  const PreprocessConfig& preprocess,
                                  const std::string& checkpoint_sha256 = "");

}  // namespace haf
