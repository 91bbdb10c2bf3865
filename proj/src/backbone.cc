#include "haf/backbone.h"

#include <cmath>
#include <random>

#include "haf/error.h"

namespace haf {
namespace {

struct LayerSpec {
  const char* name;
  int in;
  int out;
  bool pool_after;
};

// VGG16 "D" configuration up to conv5_3.
constexpr LayerSpec kVgg16[] = {
    {"conv1_1", 3, 64, false},    {"conv1_2", 64, 64, true},
    {"conv2_1", 64, 128, false},  {"conv2_2", 128, 128, true},
    {"conv3_1", 128, 256, false}, {"conv3_2", 256, 256, false},
    {"conv3_3", 256, 256, true},  {"conv4_1", 256, 512, false},
    {"conv4_2", 512, 512, false}, {"conv4_3", 512, 512, true},
    {"conv5_1", 512, 512, false}, {"conv5_2", 512, 512, false},
    {"conv5_3", 512, 512, false},
};

constexpr Eigen::Index kRowsPerChunk = 4096;

}  // namespace

void ImageTensor::validate() const {
  if (height < 64 || width < 64) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than 64x64");
  }
  if (height % 16 != 0 || width % 16 != 0) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by 16");
  }
  if (pixels.rows() != static_cast<Eigen::Index>(height) * width || pixels.cols() != 3) {
    throw ShapeError("image pixel buffer does not match its declared shape");
  }
  if (!pixels.allFinite()) throw DataError("image contains non-finite pixel values");
}

Backbone::Backbone() {
  for (const auto& spec : kVgg16) {
    ConvLayer layer;
    layer.name = spec.name;
    layer.in_channels = spec.in;
    layer.out_channels = spec.out;
    layer.weight = RowMatrixF::Zero(9 * spec.in, spec.out);
    layer.bias = Eigen::VectorXf::Zero(spec.out);
    layers_.push_back(std::move(layer));
  }
}

Backbone Backbone::random(std::uint64_t seed, BackboneInit init) {
  Backbone b;
  std::mt19937_64 rng(seed);
  for (auto& layer : b.layers_) {
    const double sigma = init == BackboneInit::kNormal001
                             ? 0.01
                             : std::sqrt(2.0 / (9.0 * layer.in_channels));
    std::normal_distribution<double> dist(0.0, sigma);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = static_cast<float>(dist(rng));
    }
  }
  return b;
}

Backbone Backbone::from_archive(const ParamArchive& archive) {
  Backbone b;
  for (auto& layer : b.layers_) {
    const auto& w = archive.get(layer.name + ".weight",
                                {layer.out_channels, layer.in_channels, 3, 3});
    const auto& bias = archive.get(layer.name + ".bias", {layer.out_channels});
    for (int o = 0; o < layer.out_channels; ++o) {
      for (int c = 0; c < layer.in_channels; ++c) {
        for (int k = 0; k < 9; ++k) {
          const double v = w.values[(static_cast<size_t>(o) * layer.in_channels + c) * 9 + k];
          if (!std::isfinite(v)) {
            throw ParameterError("non-finite weight in '" + layer.name + ".weight'");
          }
          layer.weight(k * layer.in_channels + c, o) = static_cast<float>(v);
        }
      }
      layer.bias(o) = static_cast<float>(bias.values[o]);
    }
  }
  return b;
}

ParamArchive Backbone::to_archive() const {
  ParamArchive ar;
  for (const auto& layer : layers_) {
    TensorEntry w;
    w.dtype = DType::kFloat32;
    w.shape = {layer.out_channels, layer.in_channels, 3, 3};
    w.values.resize(static_cast<size_t>(w.numel()));
    for (int o = 0; o < layer.out_channels; ++o) {
      for (int c = 0; c < layer.in_channels; ++c) {
        for (int k = 0; k < 9; ++k) {
          w.values[(static_cast<size_t>(o) * layer.in_channels + c) * 9 + k] =
              layer.weight(k * layer.in_channels + c, o);
        }
      }
    }
    TensorEntry bias;
    bias.dtype = DType::kFloat32;
    bias.shape = {layer.out_channels};
    bias.values.assign(layer.bias.data(), layer.bias.data() + layer.bias.size());
    ar.put(layer.name + ".weight", std::move(w));
    ar.put(layer.name + ".bias", std::move(bias));
  }
  return ar;
}

FeatureMapF conv3x3_relu(const FeatureMapF& input, const ConvLayer& layer) {
  if (input.channels() != layer.in_channels) {
    throw ShapeError(layer.name + " expects " + std::to_string(layer.in_channels) +
                     " channels, got " + shape_string(input));
  }
  const int h = input.height;
  const int w = input.width;
  const int cin = layer.in_channels;
  FeatureMapF out(h, w, layer.out_channels);
  const Eigen::Index total = input.pixels();
  RowMatrixF patches;
  for (Eigen::Index start = 0; start < total; start += kRowsPerChunk) {
    const Eigen::Index rows = std::min(kRowsPerChunk, total - start);
    patches.setZero(rows, 9 * cin);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const int y = static_cast<int>((start + r) / w);
      const int x = static_cast<int>((start + r) % w);
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= w) continue;
          patches.row(r).segment((ky * 3 + kx) * cin, cin) = input.data.row(input.index(sy, sx));
        }
      }
    }
    auto block = out.data.middleRows(start, rows);
    block.noalias() = patches * layer.weight;
    block.rowwise() += layer.bias.transpose();
    block = block.cwiseMax(0.0f);
  }
  return out;
}

FeatureMapF max_pool2x2(const FeatureMapF& input) {
  if (input.height % 2 != 0 || input.width % 2 != 0) {
    throw ShapeError("max_pool2x2 needs even spatial dims, got " + shape_string(input));
  }
  FeatureMapF out(input.height / 2, input.width / 2, input.channels());
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      out.data.row(out.index(y, x)) =
          input.data.row(input.index(2 * y, 2 * x))
              .cwiseMax(input.data.row(input.index(2 * y, 2 * x + 1)))
              .cwiseMax(input.data.row(input.index(2 * y + 1, 2 * x)))
              .cwiseMax(input.data.row(input.index(2 * y + 1, 2 * x + 1)));
    }
  }
  return out;
}

RawTapSet extract_taps(const ImageTensor& image, const Backbone& backbone) {
  image.validate();
  FeatureMapF x;
  x.height = image.height;
  x.width = image.width;
  x.data = image.pixels;

  RawTapSet taps;
  const auto& layers = backbone.layers();
  for (size_t i = 0; i < layers.size(); ++i) {
    x = conv3x3_relu(x, layers[i]);
    if (layers[i].name == "conv3_2") taps.c3 = x;
    if (layers[i].name == "conv4_3") taps.c4 = x;
    if (layers[i].name == "conv5_3") {
      taps.c5 = std::move(x);
      break;
    }
    if (kVgg16[i].pool_after) x = max_pool2x2(x);
  }
  return taps;
}

}  // namespace haf
