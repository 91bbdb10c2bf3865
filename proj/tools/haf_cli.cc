#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "haf/error.h"
#include "haf/fixture.h"
#include "haf/heatmap.h"
#include "haf/pipeline.h"
#include "haf/trainer.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Globals {
  std::uint64_t seed = 1;
  fs::path out = ".";
  std::string log_level = "info";
};

struct TrainArgs {
  fs::path manifest;
  int epochs = 30;
  double learning_rate = 1e-4;
  int lr_step = 5;
  double lr_decay = 0.5;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  int batch_size = 4;
  double margin = 0.1;
  std::vector<double> weights = {0.1, 0.4, 0.5};
  double positive_radius = 10.0;
  double negative_radius = 25.0;
  int negative_sample = 10;
  std::string scorer = "global";
  double eval_radius = 25.0;
  int image_size = 256;
  double shrinkage = 0.0;
  double init_std = haf::HeadConfig{}.init_std;
  fs::path backbone;
  std::uint64_t backbone_seed = 0;
};

struct GridArgs {
  double step = 0.1;
  std::string budget = "fast";
  int fast_epochs = 3;
};

struct IndexArgs {
  fs::path manifest;
  fs::path checkpoint;
  std::string reference_split = "auto";
  std::string fit_split = "train";
  double shrinkage = -1.0;
};

struct QueryArgs {
  fs::path database;
  fs::path checkpoint;
  fs::path image;
  int k = 10;
};

struct EvalArgs {
  fs::path database;
  fs::path checkpoint;
  fs::path manifest;
  std::string query_split = "test_query";
  double radius = 25.0;
  std::vector<int> ns = {1, 5, 10};
};

struct HeatmapArgs {
  fs::path checkpoint;
  fs::path image;
  std::vector<double> weights;
  double alpha = 0.5;
};

struct FixtureArgs {
  int places = 8;
  int images_per_place = 6;
  int image_size = 256;
  double spacing = 150.0;
};

void add_train_options(CLI::App* cmd, TrainArgs* a) {
  cmd->add_option("--manifest", a->manifest, "dataset manifest")->required();
  cmd->add_option("--epochs", a->epochs)->capture_default_str();
  cmd->add_option("--lr", a->learning_rate, "initial learning rate")->capture_default_str();
  cmd->add_option("--lr-step", a->lr_step, "epochs between decays")->capture_default_str();
  cmd->add_option("--lr-decay", a->lr_decay)->capture_default_str();
  cmd->add_option("--momentum", a->momentum)->capture_default_str();
  cmd->add_option("--weight-decay", a->weight_decay)->capture_default_str();
  cmd->add_option("--batch-size", a->batch_size)->capture_default_str();
  cmd->add_option("--margin", a->margin)->capture_default_str();
  cmd->add_option("--weights", a->weights, "adaptive weights w1,w2,w3")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  cmd->add_option("--pos-radius", a->positive_radius, "positive radius in metres")
      ->capture_default_str();
  cmd->add_option("--neg-radius", a->negative_radius, "negative radius in metres")
      ->capture_default_str();
  cmd->add_option("--neg-sample", a->negative_sample, "negatives sampled per query")
      ->capture_default_str();
  cmd->add_option("--scorer", a->scorer, "hard-negative scorer")
      ->check(CLI::IsMember({"global", "dense"}))
      ->capture_default_str();
  cmd->add_option("--eval-radius", a->eval_radius, "validation radius in metres")
      ->capture_default_str();
  cmd->add_option("--image-size", a->image_size)->capture_default_str();
  cmd->add_option("--shrinkage", a->shrinkage, "whitening shrinkage")->capture_default_str();
  cmd->add_option("--init-std", a->init_std, "head init standard deviation")
      ->capture_default_str();
  cmd->add_option("--backbone", a->backbone, "VGG16 parameter archive (random if omitted)");
  cmd->add_option("--backbone-seed", a->backbone_seed)->capture_default_str();
}

haf::AdaptiveWeights parse_weights(const std::vector<double>& w) {
  if (w.size() != 3) throw haf::ConfigError("expected three adaptive weights");
  return haf::AdaptiveWeights(w[0], w[1], w[2]);
}

haf::TrainConfig make_train_config(const TrainArgs& a, const Globals& g) {
  haf::TrainConfig c;
  c.epochs = a.epochs;
  c.learning_rate = a.learning_rate;
  c.lr_step_epochs = a.lr_step;
  c.lr_decay = a.lr_decay;
  c.momentum = a.momentum;
  c.weight_decay = a.weight_decay;
  c.batch_size = a.batch_size;
  c.margin = a.margin;
  c.weights = parse_weights(a.weights);
  c.seed = g.seed;
  c.positive_radius_m = a.positive_radius;
  c.negative_radius_m = a.negative_radius;
  c.negative_sample = a.negative_sample;
  c.scorer = a.scorer == "dense" ? haf::MiningScorer::kDense : haf::MiningScorer::kGlobal;
  c.eval_radius_m = a.eval_radius;
  c.preprocess.height = c.preprocess.width = a.image_size;
  c.projection.shrinkage = a.shrinkage;
  c.heads.init_std = a.init_std;
  if (a.backbone.empty()) {
    c.backbone.kind = haf::BackboneSource::Kind::kRandom;
    c.backbone.seed = a.backbone_seed;
  } else {
    c.backbone.kind = haf::BackboneSource::Kind::kFile;
    c.backbone.path = a.backbone;
    c.backbone.sha256 = haf::file_sha256(a.backbone);
  }
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw haf::DataError("cannot write '" + path.string() + "'");
  f << text;
}

void echo_config(const CLI::App& app, const Globals& g) {
  write_text(g.out / "config.toml", app.config_to_str(true, false));
}

json checkpoint_config(const haf::Checkpoint& ck) {
  const json meta = json::parse(ck.metadata_json, nullptr, false);
  if (meta.is_object() && meta.contains("config")) return meta["config"];
  return json::object();
}

haf::PreprocessConfig checkpoint_preprocess(const haf::Checkpoint& ck) {
  haf::PreprocessConfig p;
  p.height = ck.image_height;
  p.width = ck.image_width;
  return p;
}

std::optional<haf::Split> split_arg(const std::string& s) {
  auto split = haf::parse_split(s);
  if (!split) throw haf::ConfigError("unknown split '" + s + "'");
  return split;
}

int run_train(const TrainArgs& a, const Globals& g) {
  const haf::TrainConfig config = make_train_config(a, g);
  write_text(g.out / "train_config.json", config.to_json() + "\n");
  const haf::DatasetManifest manifest = haf::load_manifest(a.manifest);
  const haf::TrainResult r =
      haf::train(manifest, config, {g.out / "checkpoint.haf", g.out / "train_log.jsonl"});
  std::printf("best epoch %d, validation recall@5 %.4f\n", r.best_epoch, r.best_recall5);
  std::printf("checkpoint: %s\n", (g.out / "checkpoint.haf").string().c_str());
  return kOk;
}

int run_gridsearch(const TrainArgs& a, const GridArgs& grid_args, const Globals& g) {
  const haf::TrainConfig config = make_train_config(a, g);
  const haf::WeightGrid grid(grid_args.step);
  haf::GridBudget budget = haf::GridBudget::kFast;
  if (grid_args.budget == "full") budget = haf::GridBudget::kFull;
  if (grid_args.budget == "evaluate") budget = haf::GridBudget::kEvaluate;
  const haf::DatasetManifest manifest = haf::load_manifest(a.manifest);
  manifest.require_trainable();
  const haf::Backbone backbone = config.backbone.materialize();
  const haf::TapCache cache(manifest, backbone, config.preprocess,
                            {haf::Split::kTrain, haf::Split::kVal});
  const auto results = haf::grid_search_weights(cache, config, grid, budget, grid_args.fast_epochs);
  std::string csv = "rank,w1,w2,w3,recall@5,recall@1\n";
  char line[160];
  for (size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    std::snprintf(line, sizeof line, "%zu,%.4f,%.4f,%.4f,%.6f,%.6f\n", i + 1, r.weights[0],
                  r.weights[1], r.weights[2], r.recall5, r.recall1);
    csv += line;
  }
  write_text(g.out / "grid_report.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return kOk;
}

int run_index(const IndexArgs& a, const Globals& g) {
  const haf::Checkpoint ck = haf::Checkpoint::load(a.checkpoint);
  const haf::Model model = ck.to_model();
  const haf::PreprocessConfig pre = checkpoint_preprocess(ck);
  const haf::DatasetManifest manifest = haf::load_manifest(a.manifest);

  haf::Split ref_split = haf::Split::kTestReference;
  if (a.reference_split == "auto") {
    if (manifest.split(haf::Split::kTestReference).empty()) ref_split = haf::Split::kTrain;
  } else {
    ref_split = *split_arg(a.reference_split);
  }
  const haf::Split fit_split = *split_arg(a.fit_split);
  spdlog::info("indexing split '{}', projection fitted on '{}'", haf::split_name(ref_split),
               haf::split_name(fit_split));

  haf::ProjectionOptions options;
  const json cfg = checkpoint_config(ck);
  options.shrinkage = a.shrinkage >= 0.0 ? a.shrinkage
                      : cfg.contains("projection") ? cfg["projection"].value("shrinkage", 0.0)
                                                   : 0.0;
  const haf::TapCache fit_cache(manifest, *model.backbone, pre, {fit_split});
  const haf::Projection projection =
      haf::fit_projection_on(fit_cache, model.heads, fit_cache.ids(fit_split), options);
  const haf::DescriptorDatabase db =
      haf::build_database(manifest, manifest.split(ref_split), model, projection, pre,
                          haf::file_sha256(a.checkpoint));
  const fs::path path = g.out / "database.hafdb";
  fs::create_directories(g.out);
  db.save(path);
  std::printf("indexed %zu images into %s\n", db.entries.size(), path.string().c_str());
  return kOk;
}

int run_query(const QueryArgs& a, const Globals& g) {
  const haf::DescriptorDatabase db = haf::DescriptorDatabase::load(a.database);
  const haf::Checkpoint ck = haf::Checkpoint::load(a.checkpoint);
  const haf::Model model = ck.to_model();
  const haf::ImageTensor image = haf::load_image(a.image, checkpoint_preprocess(ck));
  const haf::GlobalDescriptor desc =
      haf::global_descriptor(model.decode(image), db.projection, a.image.stem().string());
  const haf::RetrievalResult r = haf::query(db, desc, a.k);
  std::string csv = "rank,image_id,distance\n";
  char line[512];
  for (size_t i = 0; i < r.hits.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%s,%.9g\n", i + 1, r.hits[i].image_id.c_str(),
                  r.hits[i].distance);
    csv += line;
  }
  write_text(g.out / "query_results.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return kOk;
}

int run_eval(const EvalArgs& a, const Globals& g) {
  const haf::DescriptorDatabase db = haf::DescriptorDatabase::load(a.database);
  const haf::Checkpoint ck = haf::Checkpoint::load(a.checkpoint);
  const haf::Model model = ck.to_model();
  const haf::PreprocessConfig pre = checkpoint_preprocess(ck);
  const haf::DatasetManifest manifest = haf::load_manifest(a.manifest);
  const haf::Split split = *split_arg(a.query_split);

  std::vector<haf::GlobalDescriptor> queries;
  std::map<std::string, haf::GeoPoint> query_geo;
  for (const auto* r : manifest.split(split)) {
    try {
      const haf::ImageTensor image = haf::load_image(manifest, *r, pre);
      queries.push_back(haf::global_descriptor(model.decode(image), db.projection, r->image_id));
      query_geo[r->image_id] = r->geo;
    } catch (const haf::DataError& e) {
      spdlog::warn("skipping query '{}': {}", r->image_id, e.what());
    }
  }
  if (queries.empty()) throw haf::DataError("no readable queries in split '" + a.query_split + "'");
  const haf::RetrievalEvaluation ev = haf::evaluate_database(db, queries, query_geo, a.radius, a.ns);

  json report = {{"queries", queries.size()},
                 {"database_size", db.entries.size()},
                 {"radius_m", a.radius}};
  for (size_t i = 0; i < ev.recall.ns.size(); ++i) {
    report["recall@" + std::to_string(ev.recall.ns[i])] = ev.recall.recall[i];
  }
  if (ev.map_defined) {
    report["map"] = ev.map.map;
    report["map_evaluated_queries"] = ev.map.evaluated_queries;
    report["map_excluded_queries"] = ev.map.excluded_queries;
  } else {
    report["map"] = nullptr;
  }
  write_text(g.out / "eval_report.json", report.dump(2) + "\n");

  std::string csv = "threshold,precision,recall\n";
  char line[128];
  for (const auto& p : ev.pr_curve) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g\n", p.threshold, p.precision, p.recall);
    csv += line;
  }
  write_text(g.out / "pr_curve.csv", csv);
  std::printf("%s\n", report.dump(2).c_str());
  return kOk;
}

int run_heatmap(const HeatmapArgs& a, const Globals& g) {
  const haf::Checkpoint ck = haf::Checkpoint::load(a.checkpoint);
  const haf::Model model = ck.to_model();
  const haf::PreprocessConfig pre = checkpoint_preprocess(ck);
  haf::AdaptiveWeights weights = haf::AdaptiveWeights::defaults();
  if (!a.weights.empty()) {
    weights = parse_weights(a.weights);
  } else {
    const json cfg = checkpoint_config(ck);
    if (cfg.contains("weights")) weights = parse_weights(cfg["weights"].get<std::vector<double>>());
  }
  const haf::DecodedLevels decoded = model.decode(haf::load_image(a.image, pre));
  const cv::Mat display = haf::load_display_image(a.image, pre);
  const haf::HeatmapSet set = haf::render_heatmaps(display, decoded, weights, a.alpha);
  for (const auto& p : haf::write_heatmaps(set, g.out)) std::printf("%s\n", p.string().c_str());
  return kOk;
}

int run_fixture(const FixtureArgs& a, const Globals& g) {
  haf::FixtureConfig c;
  c.seed = g.seed;
  c.n_places = a.places;
  c.images_per_place = a.images_per_place;
  c.image_size = a.image_size;
  c.place_spacing_m = a.spacing;
  const haf::DatasetManifest m = haf::generate_synthetic_fixture(g.out, c);
  std::printf("wrote %zu images and %s\n", m.records.size(),
              (g.out / "manifest.txt").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical attention features for image geo-localization"};
  app.set_config("--config", "", "read options from a TOML/INI file (flags override it)");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--log-level", g.log_level)
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train the attention heads");
  add_train_options(train, &train_args);

  TrainArgs grid_train_args;
  GridArgs grid_args;
  auto* grid = app.add_subcommand("gridsearch", "rank adaptive weight combinations");
  add_train_options(grid, &grid_train_args);
  grid->add_option("--step", grid_args.step, "grid step, 1/step must be an integer >= 3")
      ->capture_default_str();
  grid->add_option("--budget", grid_args.budget, "per-candidate training budget")
      ->check(CLI::IsMember({"full", "fast", "evaluate"}))
      ->capture_default_str();
  grid->add_option("--fast-epochs", grid_args.fast_epochs)->capture_default_str();

  IndexArgs index_args;
  auto* index = app.add_subcommand("index", "build a descriptor database");
  index->add_option("--manifest", index_args.manifest)->required();
  index->add_option("--checkpoint", index_args.checkpoint)->required();
  index->add_option("--reference-split", index_args.reference_split,
                    "split to index (auto: test_reference, else train)")
      ->capture_default_str();
  index->add_option("--fit-split", index_args.fit_split, "split the projection is fitted on")
      ->capture_default_str();
  index->add_option("--shrinkage", index_args.shrinkage, "whitening shrinkage (<0: checkpoint's)")
      ->capture_default_str();

  QueryArgs query_args;
  auto* query = app.add_subcommand("query", "retrieve the nearest database images");
  query->add_option("--database", query_args.database)->required();
  query->add_option("--checkpoint", query_args.checkpoint)->required();
  query->add_option("--image", query_args.image)->required();
  query->add_option("-k,--k", query_args.k)->check(CLI::PositiveNumber)->capture_default_str();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "recall@N, mAP and PR curve for a query split");
  eval->add_option("--database", eval_args.database)->required();
  eval->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval->add_option("--manifest", eval_args.manifest)->required();
  eval->add_option("--query-split", eval_args.query_split)->capture_default_str();
  eval->add_option("--radius", eval_args.radius, "ground-truth radius in metres")
      ->capture_default_str();
  eval->add_option("--ns", eval_args.ns, "recall cut-offs")->delimiter(',')->capture_default_str();

  HeatmapArgs heatmap_args;
  auto* heatmap = app.add_subcommand("heatmap", "detection-score overlays per level and fused");
  heatmap->add_option("--checkpoint", heatmap_args.checkpoint)->required();
  heatmap->add_option("--image", heatmap_args.image)->required();
  heatmap->add_option("--weights", heatmap_args.weights, "fusion weights (default: training's)")
      ->delimiter(',')
      ->expected(3);
  heatmap->add_option("--alpha", heatmap_args.alpha)->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();

  FixtureArgs fixture_args;
  auto* fixture = app.add_subcommand("fixture", "write the synthetic geo-tagged dataset");
  fixture->add_option("--places", fixture_args.places)->capture_default_str();
  fixture->add_option("--images-per-place", fixture_args.images_per_place)->capture_default_str();
  fixture->add_option("--image-size", fixture_args.image_size)->capture_default_str();
  fixture->add_option("--spacing", fixture_args.spacing, "metres between places")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  spdlog::set_level(spdlog::level::from_str(g.log_level));
  try {
    fs::create_directories(g.out);
    echo_config(app, g);
    if (*train) return run_train(train_args, g);
    if (*grid) return run_gridsearch(grid_train_args, grid_args, g);
    if (*index) return run_index(index_args, g);
    if (*query) return run_query(query_args, g);
    if (*eval) return run_eval(eval_args, g);
    if (*heatmap) return run_heatmap(heatmap_args, g);
    if (*fixture) return run_fixture(fixture_args, g);
  } catch (const haf::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kConfig;
  } catch (const haf::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const haf::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const haf::ParameterError& e) {
    std::fprintf(stderr, "parameter error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
