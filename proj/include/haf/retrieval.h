#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "haf/attention_decoder.h"
#include "haf/data_io.h"
#include "haf/geo.h"

namespace haf {

inline constexpr int kGlobalDim = 256;

struct GlobalDescriptor {
  std::string image_id;
  Eigen::VectorXf vector;  // kGlobalDim, unit norm
};

// Detection-score-weighted mean of each level's descriptors, concatenated
// (l, m, h). 1,152-D for the default heads.
Eigen::VectorXd aggregate_levels(const DecodedLevels& decoded);

// Aggregates over the whole image and over every cell of 2x2 and 3x3 grids
// (cell means are renormalized by the cell's score mass). These are the
// samples the compaction transform is fitted on.
std::vector<Eigen::VectorXd> regional_aggregates(const DecodedLevels& decoded,
                                                 const std::vector<int>& grids = {1, 2, 3});

// PCA-whitening: y = diag(scale) * components * (x - mean).
struct Projection {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // out_dim x in_dim, orthonormal rows
  Eigen::VectorXd scale;       // 1 / sqrt(eigenvalue + shrinkage)

  bool fitted() const { return components.size() > 0; }
  int in_dim() const { return static_cast<int>(components.cols()); }
  int out_dim() const { return static_cast<int>(components.rows()); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
};

struct ProjectionOptions {
  int out_dim = kGlobalDim;
  // Added to every eigenvalue before whitening, as a fraction of the mean
  // retained eigenvalue.
  double shrinkage = 0.0;
};

// Requires at least out_dim samples; throws DataError otherwise.
Projection fit_projection(const std::vector<Eigen::VectorXd>& samples,
                          const ProjectionOptions& options = {});

GlobalDescriptor global_descriptor(const DecodedLevels& decoded, const Projection& projection,
                                   const std::string& image_id = "");

struct DatabaseEntry {
  std::string image_id;
  Eigen::VectorXf descriptor;
  GeoPoint geo;
};

// Immutable after build; queries may run concurrently.
struct DescriptorDatabase {
  static constexpr std::uint32_t kVersion = 1;

  int dims = kGlobalDim;
  CoordinateMode coordinates = CoordinateMode::kGeo;
  std::string checkpoint_sha256;  // 64 hex chars, or empty
  std::int64_t created_unix = 0;
  Projection projection;
  std::vector<DatabaseEntry> entries;

  // Unique ids, unit-norm descriptors, projection present iff entries exist.
  void validate() const;
  // Writes to "<path>.tmp" and renames into place.
  void save(const std::filesystem::path& path) const;
  static DescriptorDatabase load(const std::filesystem::path& path);
};

struct RetrievalHit {
  std::string image_id;
  double distance = 0.0;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<RetrievalHit> hits;  // ascending distance, ties by image_id
};

// Exact k-NN by Euclidean distance. Throws DataError on an empty database.
RetrievalResult query(const DescriptorDatabase& db, const GlobalDescriptor& descriptor, int k);

double descriptor_distance(const Eigen::VectorXf& a, const Eigen::VectorXf& b);

struct RecallCurve {
  std::vector<int> ns;
  std::vector<double> recall;
};

// Fraction of queries with a top-N hit within `radius_m` of the query's
// location. Throws DataError if any query or hit lacks a geo-tag.
RecallCurve recall_at_n(const std::vector<RetrievalResult>& results,
                        const std::map<std::string, GeoPoint>& query_geo,
                        const std::map<std::string, GeoPoint>& reference_geo,
                        CoordinateMode mode, double radius_m, const std::vector<int>& ns);

struct MapResult {
  double map = 0.0;
  int evaluated_queries = 0;
  int excluded_queries = 0;  // no relevant items
  std::vector<double> average_precisions;
};

// relevance[q][rank] marks whether the item at that rank is relevant.
// total_relevant[q] (if given) is the number of relevant items in the whole
// database; otherwise the relevant items in the list are used.
double average_precision(const std::vector<bool>& relevance, std::optional<int> total_relevant = {});
MapResult mean_average_precision(const std::vector<std::vector<bool>>& relevance,
                                 const std::vector<int>& total_relevant = {});

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Sweeps a distance threshold over each query's top-1 hit: a query counts as
// retrieved when its top-1 distance <= threshold, and as correct when that hit
// lies within the ground-truth radius.
std::vector<PrPoint> precision_recall_curve(const std::vector<RetrievalResult>& results,
                                            const std::vector<bool>& top1_correct);

}  // namespace haf
