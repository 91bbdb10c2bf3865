#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "haf/attention_decoder.h"
#include "haf/backbone.h"
#include "haf/hier_features.h"
#include "haf/objective.h"

namespace haf {

// Trainable parameters: the projection heads and the attention mask heads.
struct HeadParams {
  HeadConfig config;
  ProjectionParams projection;
  MaskParams masks;

  static HeadParams random(const HeadConfig& config, std::uint64_t seed);
  static HeadParams zeros(const HeadConfig& config);

  Eigen::Index size() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& values);
  HeadParams zeros_like() const { return zeros(config); }
};

// Everything needed to backpropagate from (K, s) to the head parameters.
struct HeadForward {
  DecodedLevels decoded;
  std::array<ProjectionCache, 3> projection;
  std::array<DecoderCache, 3> decoder;
};

HeadForward forward_heads(const RawTapSet& taps, const HeadParams& params);
DecodedLevels decode_with_params(const RawTapSet& taps, const HeadParams& params);

std::array<LevelGrad, 3> zero_level_grads(const DecodedLevels& decoded);

// Accumulates dL/d(params) into `grad` given dL/d(K, s) for each level.
void backward_heads(const HeadForward& forward, const HeadParams& params,
                    const std::array<LevelGrad, 3>& level_grads, HeadParams* grad);

// Where the frozen backbone weights come from.
struct BackboneSource {
  enum class Kind { kRandom, kFile } kind = Kind::kRandom;
  std::uint64_t seed = 0;
  BackboneInit init = BackboneInit::kHeNormal;
  std::filesystem::path path;
  std::string sha256;

  Backbone materialize() const;
  std::string describe() const;
};

// A loaded model: backbone + heads.
struct Model {
  BackboneSource backbone_source;
  std::shared_ptr<const Backbone> backbone;
  HeadParams heads;

  RawTapSet taps(const ImageTensor& image) const { return extract_taps(image, *backbone); }
  DecodedLevels decode(const ImageTensor& image) const;
};

struct Checkpoint {
  BackboneSource backbone_source;
  HeadParams heads;
  // Resolution the heads were trained at; images are resized to it.
  int image_height = 256;
  int image_width = 256;
  std::string metadata_json = "{}";  // training config, epoch log, best epoch

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  Model to_model() const;
};

}  // namespace haf
