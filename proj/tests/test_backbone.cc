#include <random>

#include <gtest/gtest.h>

#include "haf/backbone.h"
#include "haf/error.h"
#include "test_util.h"

using namespace haf;

namespace {

ImageTensor random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  ImageTensor img;
  img.height = h;
  img.width = w;
  img.pixels.resize(static_cast<Eigen::Index>(h) * w, 3);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = n(rng);
  return img;
}

// Direct loops over the padded neighbourhood.
FeatureMapF naive_conv_relu(const FeatureMapF& in, const ConvLayer& layer) {
  FeatureMapF out(in.height, in.width, layer.out_channels);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      for (int o = 0; o < layer.out_channels; ++o) {
        double acc = layer.bias[o];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int yy = y + ky - 1, xx = x + kx - 1;
            if (yy < 0 || yy >= in.height || xx < 0 || xx >= in.width) continue;
            for (int c = 0; c < layer.in_channels; ++c) {
              acc += static_cast<double>(in.at(yy, xx, c)) *
                     layer.weight((ky * 3 + kx) * layer.in_channels + c, o);
            }
          }
        }
        out.at(y, x, o) = static_cast<float>(std::max(acc, 0.0));
      }
    }
  }
  return out;
}

}  // namespace

TEST(Backbone, ConvMatchesDirectLoops) {
  std::mt19937_64 rng(11);
  ConvLayer layer;
  layer.name = "toy";
  layer.in_channels = 5;
  layer.out_channels = 7;
  std::normal_distribution<float> n(0.f, 0.5f);
  layer.weight.resize(9 * 5, 7);
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = n(rng);
  layer.bias = Eigen::VectorXf::Constant(7, 0.1f);
  const FeatureMapF in = testutil::random_map_f(9, 6, 5, rng, -1.0, 1.0);
  const FeatureMapF fast = conv3x3_relu(in, layer);
  const FeatureMapF slow = naive_conv_relu(in, layer);
  ASSERT_EQ(fast.height, 9);
  ASSERT_EQ(fast.width, 6);
  EXPECT_LT((fast.data - slow.data).cwiseAbs().maxCoeff(), 1e-5f);
}

TEST(Backbone, MaxPoolTakesBlockMaximum) {
  FeatureMapF in(2, 4, 1);
  in.data << 1, 5, 2, 0, 3, -1, 7, 4;
  const FeatureMapF out = max_pool2x2(in);
  ASSERT_EQ(out.height, 1);
  ASSERT_EQ(out.width, 2);
  EXPECT_EQ(out.data(0, 0), 5.f);
  EXPECT_EQ(out.data(1, 0), 7.f);
}

TEST(Backbone, TapShapesFollowStrides) {
  const Backbone bb = Backbone::random(1, BackboneInit::kHeNormal);
  const RawTapSet t = extract_taps(random_image(64, 64, 1), bb);
  EXPECT_EQ(t.c3.height, 16);
  EXPECT_EQ(t.c3.channels(), 256);
  EXPECT_EQ(t.c4.height, 8);
  EXPECT_EQ(t.c4.channels(), 512);
  EXPECT_EQ(t.c5.height, 4);
  EXPECT_EQ(t.c5.width, 4);
  EXPECT_EQ(t.c5.channels(), 512);
}

TEST(Backbone, TapShapesFor256Input) {
  const Backbone bb = Backbone::random(2, BackboneInit::kNormal001);
  const RawTapSet t = extract_taps(random_image(256, 256, 2), bb);
  EXPECT_EQ(shape_string(t.c3), "64x64x256");
  EXPECT_EQ(shape_string(t.c4), "32x32x512");
  EXPECT_EQ(shape_string(t.c5), "16x16x512");
}

TEST(Backbone, ZeroInputGivesZeroTaps) {
  const Backbone bb = Backbone::random(3, BackboneInit::kHeNormal);
  ImageTensor img = random_image(64, 96, 3);
  img.pixels.setZero();
  const RawTapSet t = extract_taps(img, bb);
  EXPECT_EQ(t.c3.data.cwiseAbs().maxCoeff(), 0.f);
  EXPECT_EQ(t.c5.data.cwiseAbs().maxCoeff(), 0.f);
  EXPECT_EQ(t.c5.width, 6);
}

TEST(Backbone, ExtractionIsDeterministic) {
  const Backbone bb = Backbone::random(4, BackboneInit::kHeNormal);
  const ImageTensor img = random_image(64, 64, 4);
  const RawTapSet a = extract_taps(img, bb);
  const RawTapSet b = extract_taps(img, bb);
  EXPECT_TRUE(a.c3.data == b.c3.data);
  EXPECT_TRUE(a.c5.data == b.c5.data);
  EXPECT_GT(a.c5.data.maxCoeff(), 0.f);
}

TEST(Backbone, RejectsBadImages) {
  const Backbone bb = Backbone::random(5, BackboneInit::kHeNormal);
  EXPECT_THROW(extract_taps(random_image(72, 64, 5), bb), ShapeError);
  EXPECT_THROW(extract_taps(random_image(48, 48, 5), bb), ShapeError);
  ImageTensor img = random_image(64, 64, 5);
  img.pixels(3, 1) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(extract_taps(img, bb), DataError);
}

TEST(Backbone, ArchiveRoundTripAndMissingLayer) {
  const Backbone bb = Backbone::random(6, BackboneInit::kHeNormal);
  const ParamArchive archive = bb.to_archive();
  EXPECT_TRUE(archive.contains("conv1_1.weight"));
  EXPECT_EQ(archive.get("conv3_2.weight", {256, 256, 3, 3}).numel(), 256 * 256 * 9);
  const Backbone back = Backbone::from_archive(archive);
  ASSERT_EQ(back.layers().size(), bb.layers().size());
  for (size_t i = 0; i < bb.layers().size(); ++i) {
    EXPECT_TRUE(back.layers()[i].weight == bb.layers()[i].weight) << bb.layers()[i].name;
  }
  ParamArchive partial;
  for (const auto& [name, t] : archive.tensors()) {
    if (name != "conv4_3.bias") partial.put(name, t);
  }
  EXPECT_THROW(Backbone::from_archive(partial), ParameterError);
}
