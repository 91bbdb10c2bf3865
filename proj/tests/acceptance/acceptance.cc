// One PASS/FAIL line per acceptance criterion; exit status is nonzero if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "../gradcheck.h"
#include "../test_util.h"
#include "haf/attention_decoder.h"
#include "haf/backbone.h"
#include "haf/fixture.h"
#include "haf/hier_features.h"
#include "haf/model.h"
#include "haf/objective.h"
#include "haf/pipeline.h"
#include "haf/retrieval.h"
#include "haf/trainer.h"

namespace {

using namespace haf;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;
std::string transcript;

void emit(const std::string& line) {
  std::fputs(line.c_str(), stdout);
  std::fflush(stdout);
  transcript += line;
}

void report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (secs >= limit_s) {
    o.pass = false;
    o.detail += " (over time limit)";
  }
  if (!o.pass) ++failures;
  emit(format("[%s] %2d %-28s %8.2fs / %.0fs  %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), secs,
           limit_s, o.detail.c_str()));
}


HierarchicalFeatureSet random_features(int h, int w, std::mt19937_64& rng) {
  HierarchicalFeatureSet f;
  const int channels[3] = {24, 32, 16};
  for (int l = 0; l < 3; ++l) f.levels[l] = testutil::random_map(h, w, channels[l], rng, 0.0, 6.0);
  return f;
}

MaskParams random_masks(std::mt19937_64& rng) {
  HeadConfig c;
  c.tap_channels = {16, 32, 32};
  c.multipliers = {1.5, 1.0, 0.5};
  c.init_std = 0.2;
  return MaskParams::random(c, rng());
}

// Criterion 1
Outcome shape_contract() {
  const Backbone bb = Backbone::random(1, BackboneInit::kHeNormal);
  ImageTensor img;
  img.height = img.width = 256;
  std::mt19937_64 rng(1);
  img.pixels = testutil::random_map_f(256, 256, 3, rng, -2.0, 2.0).data;
  const RawTapSet taps = extract_taps(img, bb);
  const HierarchicalFeatureSet f = project_taps(taps, ProjectionParams::random(HeadConfig{}, 2));
  const std::string got = shape_string(f.low()) + " " + shape_string(f.mid()) + " " +
                          shape_string(f.high());
  const bool ok = got == "128x128x384 128x128x512 128x128x256" && f.total_channels() == 1152;
  return {ok, got + format(" total=%d", f.total_channels())};
}

// Criterion 2
Outcome decoder_invariants() {
  std::mt19937_64 rng(2);
  double worst_sum = 0.0;
  long unit = 0, total = 0, flagged_nonzero = 0;
  for (int trial = 0; trial < 100; ++trial) {
    HierarchicalFeatureSet f = random_features(32, 32, rng);
    if (trial % 10 == 0) f.levels[trial % 3].data.row(trial).setZero();
    const MaskParams masks = random_masks(rng);
    for (int l = 0; l < 3; ++l) {
      const DenseLevelOutput out = decode_level_from_params(f.levels[l], masks.levels[l]);
      worst_sum = std::max(worst_sum, std::abs(out.scores.sum() - 1.0));
      for (Eigen::Index p = 0; p < out.pixels(); ++p) {
        const double n = out.descriptors.row(p).norm();
        ++total;
        if (out.flagged[p]) {
          if (n != 0.0) ++flagged_nonzero;
        } else if (std::abs(n - 1.0) <= 1e-6) {
          ++unit;
        }
      }
    }
  }
  const double frac = static_cast<double>(unit) / static_cast<double>(total);
  return {worst_sum <= 1e-6 && frac >= 0.999 && flagged_nonzero == 0,
          format("max|sum-1|=%.2e unit=%.5f flagged_nonzero=%ld", worst_sum, frac, flagged_nonzero)};
}

// Criterion 3
Outcome mask_scale_invariance() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const HierarchicalFeatureSet f = random_features(16, 16, rng);
    const MaskParams masks = random_masks(rng);
    for (int l = 0; l < 3; ++l) {
      const FeatureMapD m = compute_mask(f.levels[l], masks.levels[l]);
      const DenseLevelOutput base = decode_level(apply_attention(f.levels[l], m));
      for (double lambda : {0.5, 3.0}) {
        FeatureMapD scaled = m;
        scaled.data *= lambda;
        const DenseLevelOutput out = decode_level(apply_attention(f.levels[l], scaled));
        worst = std::max(worst, (out.scores - base.scores).cwiseAbs().maxCoeff());
        worst = std::max(worst, (out.descriptors - base.descriptors).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst < 1e-6, format("max-abs change %.2e", worst)};
}

// Criterion 4
Outcome gradient_check_20() {
  double worst = 0.0;
  int min_active = 3;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const testutil::GradCheckReport r = testutil::gradient_check(seed);
    worst = std::max({worst, r.mask_rel_error, r.projection_rel_error});
    min_active = std::min(min_active, r.active_levels);
  }
  return {worst < 1e-4 && min_active == 3,
          format("max relative error %.2e, min active levels %d", worst, min_active)};
}

// Criterion 5
Outcome hinge_closed_form() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(0.0, 3.0), m(0.0, 1.0);
  int mismatches = 0, zeros = 0;
  for (int i = 0; i < 1000; ++i) {
    double pos = d(rng), neg = d(rng);
    const double margin = m(rng);
    if (i % 100 == 0) neg = pos + margin;  // exactly on the boundary
    const double l = triplet_loss(pos, neg, margin);
    const double expected = std::max(margin + pos - neg, 0.0);
    if (l != expected) ++mismatches;
    if ((l == 0.0) != (margin + pos - neg <= 0.0)) ++mismatches;
    if (l < 0.0) ++mismatches;
    zeros += l == 0.0;
  }
  return {mismatches == 0, format("mismatches=%d zero-loss cases=%d", mismatches, zeros)};
}

// Explicit-loop evaluator of the detection-weighted distance.
double brute_weighted_distance(const DenseLevelOutput& q, const DenseLevelOutput& r,
                               const std::vector<std::pair<int, int>>& pairs) {
  if (pairs.empty()) return 0.0;
  std::vector<double> w(pairs.size()), dist(pairs.size());
  double wsum = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto [a, b] = pairs[i];
    w[i] = q.scores[a] * r.scores[b];
    wsum += w[i];
    double acc = 0.0;
    for (int c = 0; c < q.channels(); ++c) {
      const double diff = q.descriptors(a, c) - r.descriptors(b, c);
      acc += diff * diff;
    }
    dist[i] = std::sqrt(acc);
  }
  double out = 0.0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const double weight = wsum < 1e-12 ? 1.0 / static_cast<double>(pairs.size()) : w[i] / wsum;
    out += weight * dist[i];
  }
  return out;
}

// Criterion 6
Outcome weighted_distance_oracle() {
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 2 + static_cast<int>(rng() % 5), w = 2 + static_cast<int>(rng() % 5);
    const int c = 2 + static_cast<int>(rng() % 8);
    DenseLevelOutput q = testutil::random_level(h, w, c, rng);
    DenseLevelOutput r = testutil::random_level(h, w, c, rng);
    if (trial % 10 == 9) {  // degenerate score products
      q.scores *= 1e-8;
      r.scores *= 1e-8;
    }
    CorrespondenceSet corr;
    std::vector<std::pair<int, int>> pairs;
    const int n = static_cast<int>(rng() % static_cast<unsigned>(h * w)) + (trial == 0 ? 0 : 1);
    for (int i = 0; i < (trial == 0 ? 0 : n); ++i) {
      const int a = static_cast<int>(rng() % static_cast<unsigned>(h * w));
      const int b = static_cast<int>(rng() % static_cast<unsigned>(h * w));
      corr.pairs.push_back({a, b});
      pairs.emplace_back(a, b);
    }
    worst = std::max(worst, std::abs(weighted_distance(q, r, corr) -
                                     brute_weighted_distance(q, r, pairs)));
  }
  return {worst <= 1e-10, format("max |diff| %.2e", worst)};
}

// Criterion 7
Outcome retrieval_oracle() {
  std::mt19937_64 rng(7);
  std::normal_distribution<float> g;
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    DescriptorDatabase db;
    db.dims = 32;
    const int n = 1 + static_cast<int>(rng() % 1000);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXf v(db.dims);
      for (int k = 0; k < db.dims; ++k) v[k] = g(rng);
      v.normalize();
      if (i > 0 && rng() % 20 == 0) v = db.entries[rng() % i].descriptor;  // exact ties
      db.entries.push_back({format("id%05d", static_cast<int>(rng() % 100000)) + format("_%d", i), v, {}});
    }
    GlobalDescriptor qd;
    qd.vector = rng() % 4 == 0 ? db.entries[rng() % n].descriptor : db.entries[0].descriptor;
    for (int k = 0; k < db.dims && rng() % 2; ++k) qd.vector[k] += 0.01f * g(rng);
    const int k = 1 + static_cast<int>(rng() % 50);
    const RetrievalResult got = query(db, qd, k);

    std::vector<std::pair<double, std::string>> scan;
    for (const auto& e : db.entries) {
      double acc = 0.0;
      for (int j = 0; j < db.dims; ++j) {
        const double diff = static_cast<double>(qd.vector[j]) - static_cast<double>(e.descriptor[j]);
        acc += diff * diff;
      }
      scan.emplace_back(std::sqrt(acc), e.image_id);
    }
    std::sort(scan.begin(), scan.end());
    const size_t keep = std::min<size_t>(k, scan.size());
    if (got.hits.size() != keep) {
      ++mismatches;
      continue;
    }
    for (size_t i = 0; i < keep; ++i) {
      if (got.hits[i].image_id != scan[i].second || got.hits[i].distance != scan[i].first) {
        ++mismatches;
        break;
      }
    }
  }
  return {mismatches == 0, format("mismatching instances=%d/200", mismatches)};
}

// Criterion 8
Outcome metric_fixtures() {
  std::vector<std::string> problems;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };
  expect(average_precision({true, true}) == 1.0, "AP ranks 1,2");
  expect(average_precision({false, true}) == 0.5, "AP rank 2");
  expect(mean_average_precision({{true, true}, {false, true}}).map == 0.75, "mAP 0.75");

  // 4 queries on a line, references at 0 m or far away.
  std::map<std::string, GeoPoint> qgeo, rgeo;
  for (int i = 0; i < 4; ++i) qgeo["q" + std::to_string(i)] = {1000.0 * i, 0.0};
  for (int i = 0; i < 4; ++i) rgeo["near" + std::to_string(i)] = {1000.0 * i, 1.0};
  for (int i = 0; i < 6; ++i) rgeo["far" + std::to_string(i)] = {50000.0 + i, 0.0};
  std::vector<RetrievalResult> results;
  for (int i = 0; i < 4; ++i) {
    RetrievalResult r{"q" + std::to_string(i), {}};
    for (int f = 0; f < 5; ++f) r.hits.push_back({"far" + std::to_string(f), 1.0 + f});
    if (i < 2) r.hits[3] = {"near" + std::to_string(i), 1.5};
    results.push_back(r);
  }
  const RecallCurve rc = recall_at_n(results, qgeo, rgeo, CoordinateMode::kPlanar, 25.0, {1, 5});
  expect(rc.recall[0] == 0.0 && rc.recall[1] == 0.5, "recall@5 = 0.5 on 4 queries");

  std::vector<RetrievalResult> perfect;
  for (int i = 0; i < 4; ++i) perfect.push_back({"q" + std::to_string(i), {{"near" + std::to_string(i), 0.1}}});
  expect(recall_at_n(perfect, qgeo, rgeo, CoordinateMode::kPlanar, 25.0, {1}).recall[0] == 1.0,
         "recall@1 = 1");

  // Monotone in N on random instances.
  std::mt19937_64 rng(8);
  int violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RetrievalResult> rs;
    for (int i = 0; i < 4; ++i) {
      RetrievalResult r{"q" + std::to_string(i), {}};
      for (int f = 0; f < 10; ++f) {
        const int pick = static_cast<int>(rng() % 10);
        r.hits.push_back({pick < 4 ? "near" + std::to_string(pick) : "far" + std::to_string(pick - 4),
                          static_cast<double>(f)});
      }
      rs.push_back(r);
    }
    const RecallCurve c =
        recall_at_n(rs, qgeo, rgeo, CoordinateMode::kPlanar, 25.0, {1, 2, 3, 5, 8, 10});
    for (size_t i = 1; i < c.recall.size(); ++i) violations += c.recall[i] < c.recall[i - 1];
  }
  expect(violations == 0, "monotone recall");
  std::string detail = problems.empty() ? "all fixtures exact, recall monotone" : "failed:";
  for (const auto& p : problems) detail += " [" + p + "]";
  return {problems.empty(), detail};
}

// Desk-scale training, shared by criteria 9 and 11.
constexpr int kTrainResolution = 96;
struct DeskRun {
  FixtureConfig fixture;
  TrainConfig config;
  TrainResult result;
  bool done = false;
};

DeskRun& desk_run() {
  static DeskRun run;
  if (run.done) return run;
  const auto dir = testutil::scratch_dir("acceptance_fixture");
  const DatasetManifest m = generate_synthetic_fixture(dir, run.fixture);
  run.config.preprocess.height = run.config.preprocess.width = kTrainResolution;
  run.config.seed = 1;
  const Backbone bb = run.config.backbone.materialize();
  const TapCache cache(m, bb, run.config.preprocess, {Split::kTrain, Split::kVal});
  run.result = train(cache, run.config);
  run.done = true;
  return run;
}

// Criterion 9
Outcome desk_learning() {
  const DeskRun& run = desk_run();
  const auto& log = run.result.log;
  const double first = log.front().total_loss, last = log.back().total_loss;
  const double ratio = last / first;
  const double r1 = log[run.result.best_epoch].recall_at(1);
  return {log.size() == 30 && ratio < 0.5 && r1 >= 0.8,
          format("epochs=%zu loss %.4g -> %.4g (ratio %.3f, need < 0.5); val recall@1 %.3f at "
              "retained epoch %d (need >= 0.8)",
              log.size(), first, last, ratio, r1, run.result.best_epoch)};
}

// Criterion 10
Outcome grid_search() {
  const WeightGrid grid(0.1);
  bool reference_triples = true;
  const double triples[4][3] = {{0.1, 0.4, 0.5}, {0.3, 0.3, 0.4}, {0.2, 0.3, 0.5}, {0.1, 0.1, 0.8}};
  for (const auto& t : triples) {
    bool found = false;
    for (const auto& w : grid.candidates()) {
      found |= std::abs(w[0] - t[0]) < 1e-9 && std::abs(w[1] - t[1]) < 1e-9 &&
               std::abs(w[2] - t[2]) < 1e-9;
    }
    reference_triples &= found;
  }
  bool positive = true;
  for (const auto& w : grid.candidates()) positive &= w[0] > 0 && w[1] > 0 && w[2] > 0;

  FixtureConfig fc;
  fc.n_places = 3;
  fc.images_per_place = 4;
  fc.image_size = 64;
  const auto dir = testutil::scratch_dir("acceptance_grid");
  const DatasetManifest m = generate_synthetic_fixture(dir, fc);
  TrainConfig base;
  base.preprocess.height = base.preprocess.width = 64;
  const Backbone bb = base.backbone.materialize();
  const TapCache cache(m, bb, base.preprocess, {Split::kTrain, Split::kVal});
  const std::vector<GridResult> report =
      grid_search_weights(cache, base, grid, GridBudget::kEvaluate);
  bool sorted = true;
  for (size_t i = 1; i < report.size(); ++i) {
    const auto& a = report[i - 1];
    const auto& b = report[i];
    if (a.recall5 != b.recall5) {
      sorted &= a.recall5 > b.recall5;
    } else if (a.weights[2] != b.weights[2]) {
      sorted &= a.weights[2] > b.weights[2];
    } else {
      sorted &= a.weights[1] >= b.weights[1];
    }
  }
  return {grid.candidates().size() == 36 && report.size() == 36 && sorted && reference_triples && positive,
          format("candidates=%zu evaluated=%zu sorted=%d reference triples present=%d",
              grid.candidates().size(), report.size(), sorted, reference_triples)};
}

// Criterion 11
Outcome heatmap_mass() {
  const DeskRun& run = desk_run();
  const Backbone bb = run.config.backbone.materialize();
  const int last = run.fixture.images_per_place - 1;  // held-out test image of place 0
  const auto mass_in_small = [&](int place, int index, double out[3]) {
    const RenderedImage img =
        render_fixture_image(run.fixture.seed, place, index, run.fixture.image_size);
    const DecodedLevels dec =
        decode_with_params(extract_taps(preprocess_image(img.bgr, run.config.preprocess), bb),
                           run.result.best);
    const LandmarkBox* box = nullptr;
    for (const auto& b : img.landmarks) {
      if (b.small) box = &b;
    }
    for (int l = 0; l < 3; ++l) {
      const auto& lv = dec[l];
      const double sx = static_cast<double>(lv.width) / run.fixture.image_size;
      const double sy = static_cast<double>(lv.height) / run.fixture.image_size;
      const int x0 = static_cast<int>(std::floor(box->x0 * sx)), x1 = static_cast<int>(std::ceil(box->x1 * sx));
      const int y0 = static_cast<int>(std::floor(box->y0 * sy)), y1 = static_cast<int>(std::ceil(box->y1 * sy));
      out[l] = 0.0;
      for (int y = std::max(y0, 0); y < std::min(y1, lv.height); ++y) {
        for (int x = std::max(x0, 0); x < std::min(x1, lv.width); ++x) out[l] += lv.scores[y * lv.width + x];
      }
    }
  };
  double mass[3];
  mass_in_small(0, last, mass);
  int agree = 0;
  for (int p = 0; p < run.fixture.n_places; ++p) {
    double other[3];
    mass_in_small(p, last, other);
    agree += other[kLow] > other[kHigh];
  }
  return {mass[kLow] > mass[kHigh],
          format("small-landmark mass l=%.4f h=%.4f (m=%.4f); l > h on %d/%d held-out images",
              mass[kLow], mass[kHigh], mass[kMid], agree, run.fixture.n_places)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  report(1, "shape contract", 10, shape_contract);
  report(2, "decoder invariants", 60, decoder_invariants);
  report(3, "mask-scale invariance", 60, mask_scale_invariance);
  report(4, "gradient check (20 seeds)", 300, gradient_check_20);
  report(5, "hinge closed form", 1, hinge_closed_form);
  report(6, "weighted-distance oracle", 60, weighted_distance_oracle);
  report(7, "retrieval oracle", 60, retrieval_oracle);
  report(8, "metric fixtures", 60, metric_fixtures);
  report(9, "desk-scale learning", 1800, desk_learning);
  report(10, "grid search", 60, grid_search);
  report(11, "heatmap sanity", 60, heatmap_mass);
  emit(format("%s: %d of 11 criteria failed\n", failures ? "FAIL" : "PASS", failures));
  std::ofstream("acceptance_report.txt") << transcript;
  return failures ? 1 : 0;
}
