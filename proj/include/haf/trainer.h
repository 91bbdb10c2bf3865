#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "haf/data_io.h"
#include "haf/model.h"
#include "haf/objective.h"
#include "haf/pipeline.h"

namespace haf {

struct TripletSpec {
  std::string query_id;
  std::string positive_id;
  std::vector<std::string> negative_ids;
};

enum class MiningScorer {
  kGlobal,  // distance between image-level aggregates (cheap)
  kDense,   // detection-weighted dense distance over mutual-NN matches
};

struct TrainConfig {
  double margin = 0.1;
  int epochs = 30;
  double learning_rate = 1e-4;
  int lr_step_epochs = 5;
  double lr_decay = 0.5;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  int batch_size = 4;
  AdaptiveWeights weights = AdaptiveWeights::defaults();
  std::uint64_t seed = 1;
  double positive_radius_m = 10.0;
  double negative_radius_m = 25.0;
  int negative_sample = 10;
  MiningScorer scorer = MiningScorer::kGlobal;
  double eval_radius_m = 25.0;
  std::vector<int> recall_ns = {1, 5, 10};
  ProjectionOptions projection;
  PreprocessConfig preprocess;
  HeadConfig heads;
  BackboneSource backbone;

  // Throws ConfigError on any invalid field.
  void validate() const;
  // lr(e) = learning_rate * lr_decay^floor(e / lr_step_epochs)
  double learning_rate_at(int epoch) const;
  // Fully resolved configuration as JSON (echoed into outputs).
  std::string to_json() const;
};

struct MiningStats {
  int skipped_no_positive = 0;
  int skipped_no_negative = 0;
};

// Distance between two images under the current model; smaller is closer.
using PairScorer = std::function<double(const std::string&, const std::string&)>;

// Triplets for every train-split query. Deterministic for a fixed
// (config.seed, epoch). With a null scorer the first sampled negative is used.
std::vector<TripletSpec> mine_triplets(const DatasetManifest& manifest, const TrainConfig& config,
                                       int epoch, const PairScorer& scorer,
                                       MiningStats* stats = nullptr);

struct EpochLog {
  int epoch = 0;
  double learning_rate = 0.0;
  std::array<double, 3> level_loss{};  // batch-mean per-level hinge
  double total_loss = 0.0;
  std::vector<int> recall_ns;
  std::vector<double> recall;
  MiningStats mining;
  int skipped_levels = 0;  // (triplet, level) pairs with no correspondences
  int triplets = 0;

  double recall_at(int n) const;
  std::string to_json_line() const;
};

struct TrainResult {
  HeadParams best;
  HeadParams last;
  int best_epoch = -1;
  double best_recall5 = -1.0;
  std::vector<EpochLog> log;
};

struct TrainOutputs {
  std::filesystem::path checkpoint;  // empty: do not write
  std::filesystem::path log;         // line-delimited JSON, empty: do not write
};

// SGD with momentum over the adaptive-weight triplet objective. The frozen
// backbone's taps come from `cache`; the best validation recall@5 epoch is
// kept. Non-finite loss throws NumericError after writing the last finite
// parameters to outputs.checkpoint.
TrainResult train(const TapCache& cache, const TrainConfig& config,
                  const TrainOutputs& outputs = {},
                  const HeadParams* initial = nullptr);
TrainResult train(const DatasetManifest& manifest, const TrainConfig& config,
                  const TrainOutputs& outputs = {});

// Mean loss of one training step, exposed for tests: forward, backward and
// gradient of the batch mean objective at `params`.
struct BatchGradient {
  double total_loss = 0.0;
  std::array<double, 3> level_loss{};
  int skipped_levels = 0;
  HeadParams grad;
};
BatchGradient batch_gradient(const TapCache& cache, const std::vector<TripletSpec>& batch,
                             const HeadParams& params, const TrainConfig& config);

class WeightGrid {
 public:
  // Throws ConfigError unless 1/step is an integer >= 3.
  explicit WeightGrid(double step);
  const std::vector<AdaptiveWeights>& candidates() const { return candidates_; }
  double step() const { return step_; }

 private:
  double step_;
  std::vector<AdaptiveWeights> candidates_;
};

struct GridResult {
  AdaptiveWeights weights;
  double recall5 = 0.0;
  double recall1 = 0.0;
};

// Sorted by recall@5 descending, then larger w3, then larger w2.
void sort_grid_results(std::vector<GridResult>* results);

enum class GridBudget {
  kFull,      // train every candidate for config.epochs from the shared init
  kFast,      // train every candidate for `fast_epochs` from the shared init
  kEvaluate,  // no training: score the initial heads
};

std::vector<GridResult> grid_search_weights(const TapCache& cache, const TrainConfig& base,
                                            const WeightGrid& grid, GridBudget budget,
                                            int fast_epochs = 3);

}  // namespace haf
