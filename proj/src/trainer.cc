#include "haf/trainer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "haf/error.h"

namespace haf {
namespace {

using json = nlohmann::json;

json config_json(const TrainConfig& c) {
  json backbone;
  if (c.backbone.kind == BackboneSource::Kind::kRandom) {
    backbone = {{"source", "random"},
                {"seed", c.backbone.seed},
                {"init", c.backbone.init == BackboneInit::kHeNormal ? "he" : "normal0.01"}};
  } else {
    backbone = {{"source", "file"}, {"path", c.backbone.path.string()}};
  }
  return {{"margin", c.margin},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"lr_step_epochs", c.lr_step_epochs},
          {"lr_decay", c.lr_decay},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"weights", c.weights.values()},
          {"seed", c.seed},
          {"positive_radius_m", c.positive_radius_m},
          {"negative_radius_m", c.negative_radius_m},
          {"negative_sample", c.negative_sample},
          {"scorer", c.scorer == MiningScorer::kGlobal ? "global" : "dense"},
          {"eval_radius_m", c.eval_radius_m},
          {"recall_ns", c.recall_ns},
          {"projection", {{"out_dim", c.projection.out_dim}, {"shrinkage", c.projection.shrinkage}}},
          {"image_height", c.preprocess.height},
          {"image_width", c.preprocess.width},
          {"head_init_std", c.heads.init_std},
          {"backbone", backbone}};
}

std::vector<int> with_required_ns(std::vector<int> ns) {
  for (int n : {1, 5, 10}) {
    if (std::find(ns.begin(), ns.end(), n) == ns.end()) ns.push_back(n);
  }
  std::sort(ns.begin(), ns.end());
  return ns;
}

double recall_for(const RecallCurve& curve, int n) {
  for (size_t i = 0; i < curve.ns.size(); ++i) {
    if (curve.ns[i] == n) return curve.recall[i];
  }
  return 0.0;
}

PairScorer make_scorer(const TapCache& cache, const HeadParams& params, const TrainConfig& config,
                       const std::vector<std::string>& ids) {
  if (config.scorer == MiningScorer::kGlobal) {
    auto vectors = std::make_shared<std::map<std::string, Eigen::VectorXd>>();
    for (const auto& id : ids) {
      Eigen::VectorXd v = aggregate_levels(decode_with_params(cache.taps(id), params));
      const double n = v.norm();
      if (n > 0.0) v /= n;
      (*vectors)[id] = std::move(v);
    }
    return [vectors](const std::string& a, const std::string& b) {
      return (vectors->at(a) - vectors->at(b)).norm();
    };
  }
  auto decoded = std::make_shared<std::map<std::string, DecodedLevels>>();
  for (const auto& id : ids) (*decoded)[id] = decode_with_params(cache.taps(id), params);
  const AdaptiveWeights w = config.weights;
  return [decoded, w](const std::string& a, const std::string& b) {
    const auto& da = decoded->at(a);
    const auto& db = decoded->at(b);
    double d = 0.0;
    for (int l = 0; l < 3; ++l) {
      d += w[l] * weighted_distance(da[l], db[l], find_correspondences(da[l], db[l]));
    }
    return d;
  };
}

json log_json(const EpochLog& e) {
  json recall = json::object();
  for (size_t i = 0; i < e.recall_ns.size(); ++i) {
    recall["recall@" + std::to_string(e.recall_ns[i])] = e.recall[i];
  }
  return {{"epoch", e.epoch},
          {"lr", e.learning_rate},
          {"loss_l", e.level_loss[0]},
          {"loss_m", e.level_loss[1]},
          {"loss_h", e.level_loss[2]},
          {"loss_total", e.total_loss},
          {"recall", recall},
          {"triplets", e.triplets},
          {"skipped_no_positive", e.mining.skipped_no_positive},
          {"skipped_no_negative", e.mining.skipped_no_negative},
          {"skipped_levels", e.skipped_levels}};
}

void write_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                      const HeadParams& params, const TrainResult& result, const char* status) {
  if (path.empty()) return;
  Checkpoint ck;
  ck.backbone_source = config.backbone;
  if (ck.backbone_source.kind == BackboneSource::Kind::kFile && ck.backbone_source.sha256.empty()) {
    ck.backbone_source.sha256 = file_sha256(ck.backbone_source.path);
  }
  ck.heads = params;
  ck.image_height = config.preprocess.height;
  ck.image_width = config.preprocess.width;
  json epochs = json::array();
  for (const auto& e : result.log) epochs.push_back(log_json(e));
  ck.metadata_json = json{{"status", status},
                          {"config", config_json(config)},
                          {"best_epoch", result.best_epoch},
                          {"best_recall@5", result.best_recall5},
                          {"epochs", epochs}}
                         .dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ck.save(path);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin >= 0.0)) throw ConfigError("margin must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (lr_step_epochs < 1) throw ConfigError("lr_step_epochs must be >= 1");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(positive_radius_m > 0.0)) throw ConfigError("positive radius must be > 0");
  if (!(negative_radius_m >= positive_radius_m)) {
    throw ConfigError("negative radius must be >= positive radius");
  }
  if (negative_sample < 1) throw ConfigError("negative_sample must be >= 1");
  if (!(eval_radius_m > 0.0)) throw ConfigError("evaluation radius must be > 0");
  for (int n : recall_ns) {
    if (n < 1) throw ConfigError("recall N values must be >= 1");
  }
  preprocess.validate();
  heads.validate();
}

double TrainConfig::learning_rate_at(int epoch) const {
  return learning_rate * std::pow(lr_decay, epoch / lr_step_epochs);
}

std::string TrainConfig::to_json() const { return config_json(*this).dump(2); }

double EpochLog::recall_at(int n) const {
  for (size_t i = 0; i < recall_ns.size(); ++i) {
    if (recall_ns[i] == n) return recall[i];
  }
  return 0.0;
}

std::string EpochLog::to_json_line() const { return log_json(*this).dump(); }

std::vector<TripletSpec> mine_triplets(const DatasetManifest& manifest, const TrainConfig& config,
                                       int epoch, const PairScorer& scorer, MiningStats* stats) {
  if (manifest.records.empty()) throw DataError("cannot mine triplets from an empty dataset");
  const auto train = manifest.split(Split::kTrain);
  if (train.empty()) throw DataError("manifest has no train records to mine");
  std::mt19937_64 rng(config.seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(epoch));
  MiningStats local;
  std::vector<TripletSpec> out;
  for (const auto* q : train) {
    const GeoImageRecord* positive = nullptr;
    double best = 0.0;
    std::vector<const GeoImageRecord*> pool;
    for (const auto* c : train) {
      if (c == q) continue;
      const double d = manifest.distance_m(*q, *c);
      if (d <= config.positive_radius_m && (!positive || d < best)) {
        positive = c;
        best = d;
      }
      if (d >= config.negative_radius_m) pool.push_back(c);
    }
    if (!positive) {
      ++local.skipped_no_positive;
      spdlog::debug("query '{}' skipped: no positive within {} m", q->image_id,
                    config.positive_radius_m);
      continue;
    }
    if (pool.empty()) {
      ++local.skipped_no_negative;
      spdlog::debug("query '{}' skipped: no negative beyond {} m", q->image_id,
                    config.negative_radius_m);
      continue;
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), static_cast<size_t>(config.negative_sample)));
    const GeoImageRecord* negative = pool.front();
    if (scorer) {
      double hardest = scorer(q->image_id, negative->image_id);
      for (size_t i = 1; i < pool.size(); ++i) {
        const double d = scorer(q->image_id, pool[i]->image_id);
        if (d < hardest) {
          hardest = d;
          negative = pool[i];
        }
      }
    }
    out.push_back({q->image_id, positive->image_id, {negative->image_id}});
  }
  if (stats) *stats = local;
  if (out.empty()) {
    throw DataError("every query was skipped during mining (" +
                    std::to_string(local.skipped_no_positive) + " without positive, " +
                    std::to_string(local.skipped_no_negative) + " without negative)");
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

BatchGradient batch_gradient(const TapCache& cache, const std::vector<TripletSpec>& batch,
                             const HeadParams& params, const TrainConfig& config) {
  BatchGradient out;
  out.grad = params.zeros_like();
  if (batch.empty()) return out;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& t : batch) {
    const HeadForward fq = forward_heads(cache.taps(t.query_id), params);
    const HeadForward fp = forward_heads(cache.taps(t.positive_id), params);
    const HeadForward fn = forward_heads(cache.taps(t.negative_ids.front()), params);
    const TripletMatches matches = match_triplet(fq.decoded, fp.decoded, fn.decoded);
    TripletGrads grads{zero_level_grads(fq.decoded), zero_level_grads(fp.decoded),
                       zero_level_grads(fn.decoded)};
    const LossBreakdown lb = triplet_objective(fq.decoded, fp.decoded, fn.decoded, matches,
                                               config.weights, config.margin, scale, &grads);
    out.total_loss += scale * lb.total;
    for (int l = 0; l < 3; ++l) {
      out.level_loss[l] += scale * lb.level_loss[l];
      if (lb.skipped[l]) ++out.skipped_levels;
    }
    if (lb.total > 0.0) {
      backward_heads(fq, params, grads.query, &out.grad);
      backward_heads(fp, params, grads.positive, &out.grad);
      backward_heads(fn, params, grads.negative, &out.grad);
    }
  }
  return out;
}

TrainResult train(const TapCache& cache, const TrainConfig& config, const TrainOutputs& outputs,
                  const HeadParams* initial) {
  config.validate();
  const auto& manifest = cache.manifest();
  const auto train_ids = cache.ids(Split::kTrain);
  const auto val_ids = cache.ids(Split::kVal);
  if (train_ids.empty()) throw DataError("zero-length training set");
  if (val_ids.empty()) throw DataError("no validation images available");
  const auto ns = with_required_ns(config.recall_ns);

  TrainResult result;
  HeadParams params = initial ? *initial : HeadParams::random(config.heads, config.seed);
  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(params.size());

  std::ofstream log_stream;
  if (!outputs.log.empty()) {
    if (outputs.log.has_parent_path()) std::filesystem::create_directories(outputs.log.parent_path());
    log_stream.open(outputs.log, std::ios::trunc);
    if (!log_stream) throw DataError("cannot write training log '" + outputs.log.string() + "'");
  }

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.learning_rate = config.learning_rate_at(epoch);
    const PairScorer scorer = make_scorer(cache, params, config, train_ids);
    const auto triplets = mine_triplets(manifest, config, epoch, scorer, &entry.mining);
    entry.triplets = static_cast<int>(triplets.size());

    for (size_t start = 0; start < triplets.size(); start += config.batch_size) {
      const size_t end = std::min(triplets.size(), start + static_cast<size_t>(config.batch_size));
      const std::vector<TripletSpec> batch(triplets.begin() + static_cast<std::ptrdiff_t>(start),
                                           triplets.begin() + static_cast<std::ptrdiff_t>(end));
      const BatchGradient g = batch_gradient(cache, batch, params, config);
      Eigen::VectorXd flat = params.flatten();
      Eigen::VectorXd grad = g.grad.flatten();
      if (!std::isfinite(g.total_loss) || !grad.allFinite()) {
        result.last = params;
        write_checkpoint(outputs.checkpoint, config, params, result, "diverged");
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           "; last finite parameters saved");
      }
      const double weight = static_cast<double>(batch.size()) / triplets.size();
      entry.total_loss += weight * g.total_loss;
      for (int l = 0; l < 3; ++l) entry.level_loss[l] += weight * g.level_loss[l];
      entry.skipped_levels += g.skipped_levels;

      grad += config.weight_decay * flat;
      velocity = config.momentum * velocity + grad;
      flat -= entry.learning_rate * velocity;
      params.unflatten(flat);
    }

    const Projection projection = fit_projection_on(cache, params, train_ids, config.projection);
    const RetrievalEvaluation ev = evaluate_retrieval(cache, params, projection, val_ids,
                                                      train_ids, config.eval_radius_m, ns);
    entry.recall_ns = ev.recall.ns;
    entry.recall = ev.recall.recall;
    const double r5 = recall_for(ev.recall, 5);
    if (r5 > result.best_recall5) {
      result.best_recall5 = r5;
      result.best_epoch = epoch;
      result.best = params;
    }
    spdlog::info("epoch {:2d} lr {:.3g} loss {:.5f} (l {:.4f} m {:.4f} h {:.4f}) R@1 {:.3f} R@5 {:.3f}",
                 epoch, entry.learning_rate, entry.total_loss, entry.level_loss[0],
                 entry.level_loss[1], entry.level_loss[2], recall_for(ev.recall, 1), r5);
    if (log_stream) log_stream << entry.to_json_line() << "\n" << std::flush;
    result.log.push_back(std::move(entry));
  }
  result.last = params;
  write_checkpoint(outputs.checkpoint, config, result.best, result, "complete");
  return result;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& config,
                  const TrainOutputs& outputs) {
  config.validate();
  manifest.require_trainable();
  const Backbone backbone = config.backbone.materialize();
  const TapCache cache(manifest, backbone, config.preprocess, {Split::kTrain, Split::kVal});
  return train(cache, config, outputs);
}

WeightGrid::WeightGrid(double step) : step_(step) {
  if (!(step > 0.0)) throw ConfigError("grid step must be positive");
  const double inv = 1.0 / step;
  const int n = static_cast<int>(std::lround(inv));
  if (std::abs(inv - n) > 1e-6 || n < 3) {
    throw ConfigError("grid step must divide 1 into at least 3 parts (got " + std::to_string(step) +
                      ")");
  }
  for (int a = 1; a <= n - 2; ++a) {
    for (int b = 1; a + b <= n - 1; ++b) {
      const int c = n - a - b;
      const double w1 = static_cast<double>(a) / n;
      const double w2 = static_cast<double>(b) / n;
      candidates_.emplace_back(w1, w2, 1.0 - w1 - w2);
      (void)c;
    }
  }
}

void sort_grid_results(std::vector<GridResult>* results) {
  std::stable_sort(results->begin(), results->end(), [](const GridResult& a, const GridResult& b) {
    if (a.recall5 != b.recall5) return a.recall5 > b.recall5;
    if (a.weights[2] != b.weights[2]) return a.weights[2] > b.weights[2];
    return a.weights[1] > b.weights[1];
  });
}

std::vector<GridResult> grid_search_weights(const TapCache& cache, const TrainConfig& base,
                                            const WeightGrid& grid, GridBudget budget,
                                            int fast_epochs) {
  base.validate();
  const HeadParams init = HeadParams::random(base.heads, base.seed);
  std::vector<GridResult> results;
  if (budget == GridBudget::kEvaluate) {
    const auto train_ids = cache.ids(Split::kTrain);
    const auto val_ids = cache.ids(Split::kVal);
    const Projection projection = fit_projection_on(cache, init, train_ids, base.projection);
    const RetrievalEvaluation ev = evaluate_retrieval(cache, init, projection, val_ids, train_ids,
                                                      base.eval_radius_m, {1, 5});
    for (const auto& w : grid.candidates()) {
      results.push_back({w, recall_for(ev.recall, 5), recall_for(ev.recall, 1)});
    }
  } else {
    for (const auto& w : grid.candidates()) {
      TrainConfig cfg = base;
      cfg.weights = w;
      if (budget == GridBudget::kFast) cfg.epochs = fast_epochs;
      const TrainResult r = train(cache, cfg, {}, &init);
      const auto& best = r.log.at(static_cast<size_t>(r.best_epoch));
      results.push_back({w, r.best_recall5, best.recall_at(1)});
    }
  }
  sort_grid_results(&results);
  return results;
}

}  // namespace haf
