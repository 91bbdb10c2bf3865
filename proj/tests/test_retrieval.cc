#include <cstdlib>
#include <algorithm>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "haf/error.h"
#include "haf/fixture.h"
#include "haf/pipeline.h"
#include "haf/retrieval.h"
#include "test_util.h"

using namespace haf;

namespace {

Eigen::VectorXf random_unit(int d, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.f, 1.f);
  Eigen::VectorXf v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v.normalized();
}

DescriptorDatabase random_db(int n, int d, std::mt19937_64& rng) {
  DescriptorDatabase db;
  db.dims = d;
  for (int i = 0; i < n; ++i) {
    db.entries.push_back({"img" + std::to_string(i), random_unit(d, rng), {0.0, 0.0}});
  }
  return db;
}

RetrievalResult hits(const std::string& q, std::vector<std::string> ids) {
  RetrievalResult r;
  r.query_id = q;
  double d = 0.0;
  for (auto& id : ids) r.hits.push_back({id, d += 0.1});
  return r;
}

}  // namespace

TEST(Aggregate, UniformScoresConstantDescriptors) {
  DecodedLevels d;
  const int widths[3] = {384, 512, 256};
  std::mt19937_64 rng(1);
  for (int l = 0; l < 3; ++l) {
    d[l] = testutil::random_level(4, 4, widths[l], rng);
    const Eigen::RowVectorXd k = d[l].descriptors.row(0);
    d[l].descriptors.rowwise() = k;
    d[l].scores.setConstant(1.0 / 16.0);
  }
  const Eigen::VectorXd v = aggregate_levels(d);
  ASSERT_EQ(v.size(), 1152);
  EXPECT_LT((v.head(384) - d[0].descriptors.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((v.tail(256) - d[2].descriptors.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Aggregate, RegionalCellsCoverGrids) {
  std::mt19937_64 rng(2);
  DecodedLevels d;
  for (int l = 0; l < 3; ++l) d[l] = testutil::random_level(6, 6, 4, rng);
  EXPECT_EQ(regional_aggregates(d).size(), 1u + 4u + 9u);
  EXPECT_LT((regional_aggregates(d, {1})[0] - aggregate_levels(d)).norm(), 1e-12);
}

TEST(Projection, WhitensFittingSet) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  // correlated 1152-D samples
  std::srand(71);  // Eigen::Random draws from std::rand
  const Eigen::MatrixXd mix = Eigen::MatrixXd::Random(1152, 1152);
  std::vector<Eigen::VectorXd> samples;
  for (int i = 0; i < 300; ++i) {
    Eigen::VectorXd z(1152);
    for (int j = 0; j < 1152; ++j) z[j] = n(rng);
    samples.push_back(mix * z);
  }
  const Projection p = fit_projection(samples);
  EXPECT_EQ(p.out_dim(), 256);
  EXPECT_EQ(p.in_dim(), 1152);
  Eigen::MatrixXd y(256, 300);
  for (int i = 0; i < 300; ++i) y.col(i) = p.apply(samples[i]);
  const Eigen::MatrixXd centered = y.colwise() - y.rowwise().mean();
  const Eigen::MatrixXd cov = centered * centered.transpose() / 299.0;
  const Eigen::MatrixXd off = cov - Eigen::MatrixXd(cov.diagonal().asDiagonal());
  EXPECT_LT(off.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_NEAR(cov.diagonal().minCoeff(), 1.0, 1e-6);
  EXPECT_NEAR(cov.diagonal().maxCoeff(), 1.0, 1e-6);

  const Projection again = fit_projection(samples);
  EXPECT_TRUE(again.components == p.components);
  EXPECT_TRUE(again.scale == p.scale);
}

TEST(Projection, InsufficientSamples) {
  std::srand(96);  // Eigen::Random draws from std::rand
  std::vector<Eigen::VectorXd> samples(100, Eigen::VectorXd::Random(1152));
  EXPECT_THROW(fit_projection(samples), DataError);
  EXPECT_THROW(Projection{}.apply(Eigen::VectorXd::Zero(4)), ConfigError);
}

TEST(Query, MatchesBruteForceScan) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const DescriptorDatabase db = random_db(50, 16, rng);
    const GlobalDescriptor q{"q", random_unit(16, rng)};
    const RetrievalResult r = query(db, q, 10);
    std::vector<std::pair<double, std::string>> all;
    for (const auto& e : db.entries) {
      double s = 0.0;
      for (int i = 0; i < 16; ++i) {
        const double d = static_cast<double>(q.vector[i]) - e.descriptor[i];
        s += d * d;
      }
      all.push_back({std::sqrt(s), e.image_id});
    }
    std::sort(all.begin(), all.end());
    ASSERT_EQ(r.hits.size(), 10u);
    for (int i = 0; i < 10; ++i) {
      EXPECT_EQ(r.hits[i].image_id, all[i].second);
      EXPECT_EQ(r.hits[i].distance, all[i].first);
    }
  }
}

TEST(Query, SelfMatchTiesAndLimits) {
  std::mt19937_64 rng(5);
  DescriptorDatabase db = random_db(5, 8, rng);
  db.entries[3].descriptor = db.entries[1].descriptor;  // exact tie: img1 before img3
  const RetrievalResult r = query(db, {"q", db.entries[1].descriptor}, 100);
  ASSERT_EQ(r.hits.size(), 5u);
  EXPECT_EQ(r.hits[0].image_id, "img1");
  EXPECT_EQ(r.hits[1].image_id, "img3");
  EXPECT_EQ(r.hits[0].distance, 0.0);
  for (size_t i = 1; i < r.hits.size(); ++i) EXPECT_LE(r.hits[i - 1].distance, r.hits[i].distance);
  EXPECT_THROW(query(DescriptorDatabase{}, {"q", random_unit(8, rng)}, 1), DataError);
}

TEST(Recall, HandCountedFixture) {
  // q0 correct at rank 1, q1 at rank 4, q2 and q3 never
  std::map<std::string, GeoPoint> qg = {
      {"q0", {0, 0}}, {"q1", {0, 0}}, {"q2", {0, 0}}, {"q3", {0, 0}}};
  std::map<std::string, GeoPoint> rg = {{"near", {0, 10}}, {"far1", {0, 500}},
                                        {"far2", {0, 600}}, {"far3", {0, 700}},
                                        {"far4", {0, 800}}, {"far5", {0, 900}}};
  const std::vector<RetrievalResult> results = {
      hits("q0", {"near", "far1", "far2", "far3", "far4"}),
      hits("q1", {"far1", "far2", "far3", "near", "far4"}),
      hits("q2", {"far1", "far2", "far3", "far4", "far5"}),
      hits("q3", {"far5", "far4", "far3", "far2", "far1", "near"})};
  const RecallCurve c = recall_at_n(results, qg, rg, CoordinateMode::kPlanar, 25.0, {1, 5, 6});
  EXPECT_DOUBLE_EQ(c.recall[0], 0.25);
  EXPECT_DOUBLE_EQ(c.recall[1], 0.5);
  EXPECT_DOUBLE_EQ(c.recall[2], 0.75);
  qg.erase("q3");
  EXPECT_THROW(recall_at_n(results, qg, rg, CoordinateMode::kPlanar, 25.0, {1}), DataError);
}

TEST(Recall, MonotoneInN) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 100);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<std::string, GeoPoint> qg, rg;
    std::vector<RetrievalResult> results;
    for (int i = 0; i < 12; ++i) rg["r" + std::to_string(i)] = {u(rng), u(rng)};
    for (int q = 0; q < 8; ++q) {
      const std::string id = "q" + std::to_string(q);
      qg[id] = {u(rng), u(rng)};
      std::vector<std::string> ids;
      for (int i = 0; i < 12; ++i) ids.push_back("r" + std::to_string(i));
      std::shuffle(ids.begin(), ids.end(), rng);
      results.push_back(hits(id, ids));
    }
    const RecallCurve c =
        recall_at_n(results, qg, rg, CoordinateMode::kPlanar, 20.0, {1, 2, 3, 5, 8, 12, 100});
    for (size_t i = 1; i < c.recall.size(); ++i) EXPECT_GE(c.recall[i], c.recall[i - 1]);
    int any = 0;
    for (const auto& r : results) {
      bool hit = false;
      for (const auto& h : r.hits) {
        hit |= geo_distance_m(qg[r.query_id], rg[h.image_id], CoordinateMode::kPlanar) <= 20.0;
      }
      any += hit;
    }
    EXPECT_DOUBLE_EQ(c.recall.back(), any / 8.0);
  }
}

TEST(AveragePrecision, HandExamples) {
  EXPECT_DOUBLE_EQ(average_precision({true, true}), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({false, true}), 0.5);
  const MapResult m = mean_average_precision({{true, true}, {false, true}, {false, false}});
  EXPECT_DOUBLE_EQ(m.map, 0.75);
  EXPECT_EQ(m.evaluated_queries, 2);
  EXPECT_EQ(m.excluded_queries, 1);
  EXPECT_THROW(mean_average_precision({{false}, {false, false}}), DataError);
  // relevant items missing from the list lower AP
  EXPECT_DOUBLE_EQ(average_precision({true, false}, 2), 0.5);
}

TEST(AveragePrecision, BoundsAndPerfectOrdering) {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution b(0.3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<bool> rel(1 + trial % 15);
    for (size_t i = 0; i < rel.size(); ++i) rel[i] = b(rng);
    if (std::find(rel.begin(), rel.end(), true) == rel.end()) continue;
    const double ap = average_precision(rel);
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
    const bool sorted = std::is_sorted(rel.begin(), rel.end(), std::greater<bool>());
    EXPECT_EQ(ap == 1.0, sorted);
  }
}

TEST(PrCurve, RecallNonDecreasing) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 2);
  std::vector<RetrievalResult> results;
  std::vector<bool> correct;
  for (int i = 0; i < 40; ++i) {
    RetrievalResult r;
    r.query_id = "q" + std::to_string(i);
    r.hits.push_back({"x", std::round(u(rng) * 10) / 10});
    results.push_back(r);
    correct.push_back(i % 3 != 0);
  }
  const auto curve = precision_recall_curve(results, correct);
  ASSERT_FALSE(curve.empty());
  for (size_t i = 1; i < curve.size(); ++i) {
    EXPECT_GT(curve[i].threshold, curve[i - 1].threshold);
    EXPECT_GE(curve[i].recall, curve[i - 1].recall);
  }
  EXPECT_NEAR(curve.back().precision, 26.0 / 40.0, 1e-12);
}

TEST(Database, RoundTripPreservesDistances) {
  std::mt19937_64 rng(9);
  DescriptorDatabase db = random_db(30, 256, rng);
  db.created_unix = 1700000000;
  db.checkpoint_sha256 = std::string(64, 'a');
  db.projection.mean = Eigen::VectorXd::Random(300);
  db.projection.components = Eigen::MatrixXd::Random(256, 300);
  db.projection.scale = Eigen::VectorXd::Random(256);
  for (auto& e : db.entries) e.geo = {std::uniform_real_distribution<double>(-80, 80)(rng), 3.5};
  const auto dir = testutil::scratch_dir("db");
  db.save(dir / "a.hafdb");
  const DescriptorDatabase back = DescriptorDatabase::load(dir / "a.hafdb");
  ASSERT_EQ(back.entries.size(), 30u);
  EXPECT_EQ(back.checkpoint_sha256, db.checkpoint_sha256);
  EXPECT_EQ(back.created_unix, db.created_unix);
  EXPECT_TRUE(back.projection.components == db.projection.components);
  const GlobalDescriptor q{"q", random_unit(256, rng)};
  const RetrievalResult a = query(db, q, 30), b = query(back, q, 30);
  for (int i = 0; i < 30; ++i) {
    EXPECT_EQ(a.hits[i].image_id, b.hits[i].image_id);
    EXPECT_LE(std::abs(a.hits[i].distance - b.hits[i].distance), 1e-6);
  }
  for (int i = 0; i < 30; ++i) EXPECT_EQ(back.entries[i].geo, db.entries[i].geo);
  EXPECT_FALSE(std::filesystem::exists(dir / "a.hafdb.tmp"));
}

TEST(Database, ValidationAndCorruption) {
  std::mt19937_64 rng(10);
  DescriptorDatabase db = random_db(3, 256, rng);
  db.projection.mean = Eigen::VectorXd::Zero(300);
  db.projection.components = Eigen::MatrixXd::Zero(256, 300);
  db.projection.scale = Eigen::VectorXd::Ones(256);
  db.entries[2].image_id = "img0";
  EXPECT_THROW(db.validate(), DataError);
  db.entries[2].image_id = "img2";
  db.entries[1].descriptor *= 2.0f;
  EXPECT_THROW(db.validate(), DataError);
  db.entries[1].descriptor.normalize();
  const auto dir = testutil::scratch_dir("db_bad");
  db.save(dir / "ok.hafdb");
  std::ifstream in(dir / "ok.hafdb", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "cut.hafdb", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(DescriptorDatabase::load(dir / "cut.hafdb"), DataError);
}

class BuildDatabase : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    FixtureConfig c;
    c.n_places = 5;
    c.images_per_place = 2;
    c.image_size = 64;
    manifest_ = generate_synthetic_fixture(testutil::scratch_dir("build_db"), c);
    model_.backbone_source.seed = 3;
    model_.backbone = std::make_shared<const Backbone>(model_.backbone_source.materialize());
    model_.heads = HeadParams::random(HeadConfig{}, 3);
    pre_.height = pre_.width = 64;
    const TapCache cache(manifest_, *model_.backbone, pre_, {Split::kTrain, Split::kVal});
    std::vector<std::string> ids;
    for (const auto& r : manifest_.records) ids.push_back(r.image_id);
    projection_ = fit_projection_on(cache, model_.heads, ids);
  }
  static inline DatasetManifest manifest_;
  static inline Model model_;
  static inline PreprocessConfig pre_;
  static inline Projection projection_;
};

TEST_F(BuildDatabase, OneUnitEntryPerImage) {
  std::vector<const GeoImageRecord*> refs;
  for (const auto& r : manifest_.records) refs.push_back(&r);
  const DescriptorDatabase db = build_database(manifest_, refs, model_, projection_, pre_);
  ASSERT_EQ(db.entries.size(), 10u);
  for (const auto& e : db.entries) {
    EXPECT_EQ(e.descriptor.size(), 256);
    EXPECT_NEAR(e.descriptor.norm(), 1.0, 1e-6);
  }
  // querying with a database image returns it first
  const DecodedLevels d = model_.decode(load_image(manifest_, manifest_.records[4], pre_));
  const RetrievalResult r = query(db, global_descriptor(d, projection_, "q"), 3);
  EXPECT_EQ(r.hits[0].image_id, manifest_.records[4].image_id);
  EXPECT_NEAR(r.hits[0].distance, 0.0, 1e-6);

  const DescriptorDatabase again = build_database(manifest_, refs, model_, projection_, pre_);
  for (size_t i = 0; i < db.entries.size(); ++i) {
    EXPECT_TRUE(again.entries[i].descriptor == db.entries[i].descriptor);
  }
}

TEST_F(BuildDatabase, DuplicateIdsAndUnreadableImages) {
  std::vector<const GeoImageRecord*> refs = {&manifest_.records[0], &manifest_.records[0]};
  try {
    build_database(manifest_, refs, model_, projection_, pre_);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(manifest_.records[0].image_id), std::string::npos);
  }
  DatasetManifest broken = manifest_;
  broken.records[1].path = "missing.png";
  refs = {&broken.records[0], &broken.records[1]};
  EXPECT_EQ(build_database(broken, refs, model_, projection_, pre_).entries.size(), 1u);
  refs = {&broken.records[1]};
  EXPECT_THROW(build_database(broken, refs, model_, projection_, pre_), DataError);
}
