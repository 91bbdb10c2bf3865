#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "haf/param_archive.h"
#include "haf/tensor.h"

namespace haf {

// Channel-normalized RGB image, pixel-major (row = y * width + x, cols = RGB).
struct ImageTensor {
  int height = 0;
  int width = 0;
  RowMatrixF pixels;

  // Throws ShapeError / DataError when the stride or finiteness contract fails.
  void validate() const;
};

// Post-activation outputs of conv3_2, conv4_3 and conv5_3 (strides 4, 8, 16).
struct RawTapSet {
  FeatureMapF c3;
  FeatureMapF c4;
  FeatureMapF c5;
};

enum class BackboneInit {
  kNormal001,  // N(0, 0.01^2) weights, zero bias
  kHeNormal,   // N(0, 2 / fan_in) weights, zero bias
};

struct ConvLayer {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  // (9 * in_channels) x out_channels, row = (ky * 3 + kx) * in_channels + c.
  RowMatrixF weight;
  Eigen::VectorXf bias;
};

// VGG16 convolutional trunk truncated after conv5_3. Read-only after
// construction, so one instance may serve concurrent extract_taps calls.
class Backbone {
 public:
  static constexpr int kTapChannels[3] = {256, 512, 512};
  static constexpr int kTapStrides[3] = {4, 8, 16};

  static Backbone random(std::uint64_t seed, BackboneInit init);
  // Expects torchvision-style names ("conv1_1.weight" with shape [out, in, 3, 3]).
  static Backbone from_archive(const ParamArchive& archive);
  ParamArchive to_archive() const;

  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::vector<ConvLayer>& mutable_layers() { return layers_; }

 private:
  Backbone();
  std::vector<ConvLayer> layers_;
};

RawTapSet extract_taps(const ImageTensor& image, const Backbone& backbone);

// 3x3 convolution, stride 1, zero padding 1, followed by ReLU.
FeatureMapF conv3x3_relu(const FeatureMapF& input, const ConvLayer& layer);
FeatureMapF max_pool2x2(const FeatureMapF& input);

}  // namespace haf
