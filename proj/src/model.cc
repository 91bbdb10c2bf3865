#include "haf/model.h"

#include <json.hpp>

#include "haf/error.h"
#include "haf/param_archive.h"

namespace haf {
namespace {

using json = nlohmann::json;

// Visits every trainable tensor of `p` as a flat span, in a fixed order.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  for (int l = 0; l < 3; ++l) {
    auto& proj = p.projection.levels[l];
    const std::string lv = kLevelNames[l];
    fn("proj_" + lv + ".weight", proj.weight.data(), proj.weight.size(),
       std::vector<std::int64_t>{proj.weight.rows(), proj.weight.cols()});
    fn("proj_" + lv + ".bias", proj.bias.data(), proj.bias.size(),
       std::vector<std::int64_t>{proj.bias.size()});
    fn("asf_" + lv + ".weight", proj.gate_weight.data(), proj.gate_weight.size(),
       std::vector<std::int64_t>{proj.gate_weight.rows(), proj.gate_weight.cols()});
    fn("asf_" + lv + ".bias", &proj.gate_bias, Eigen::Index{1}, std::vector<std::int64_t>{1});
    auto& mask = p.masks.levels[l];
    fn("mask_" + lv + ".weight", mask.weight.data(), mask.weight.size(),
       std::vector<std::int64_t>{mask.weight.size()});
    fn("mask_" + lv + ".bias", &mask.bias, Eigen::Index{1}, std::vector<std::int64_t>{1});
  }
}

json head_config_json(const HeadConfig& c) {
  return {{"tap_channels", c.tap_channels},
          {"multipliers", c.multipliers},
          {"init_std", c.init_std}};
}

HeadConfig head_config_from_json(const json& j) {
  HeadConfig c;
  c.tap_channels = j.at("tap_channels").get<std::array<int, 3>>();
  c.multipliers = j.at("multipliers").get<std::array<double, 3>>();
  c.init_std = j.at("init_std").get<double>();
  c.validate();
  return c;
}

}  // namespace

HeadParams HeadParams::zeros(const HeadConfig& config) {
  HeadParams p;
  p.config = config;
  p.projection = ProjectionParams::zeros(config);
  p.masks = MaskParams::zeros(config);
  return p;
}

HeadParams HeadParams::random(const HeadConfig& config, std::uint64_t seed) {
  HeadParams p;
  p.config = config;
  p.projection = ProjectionParams::random(config, seed);
  p.masks = MaskParams::random(config, seed ^ 0x9e3779b97f4a7c15ull);
  return p;
}

Eigen::Index HeadParams::size() const {
  Eigen::Index n = 0;
  for_each_tensor(*this, [&](const std::string&, const double*, Eigen::Index len,
                             const std::vector<std::int64_t>&) { n += len; });
  return n;
}

Eigen::VectorXd HeadParams::flatten() const {
  Eigen::VectorXd v(size());
  Eigen::Index off = 0;
  for_each_tensor(*this, [&](const std::string&, const double* data, Eigen::Index len,
                             const std::vector<std::int64_t>&) {
    v.segment(off, len) = Eigen::Map<const Eigen::VectorXd>(data, len);
    off += len;
  });
  return v;
}

void HeadParams::unflatten(const Eigen::VectorXd& values) {
  if (values.size() != size()) throw ParameterError("flat parameter vector has wrong size");
  Eigen::Index off = 0;
  for_each_tensor(*this, [&](const std::string&, double* data, Eigen::Index len,
                             const std::vector<std::int64_t>&) {
    Eigen::Map<Eigen::VectorXd>(data, len) = values.segment(off, len);
    off += len;
  });
}

HeadForward forward_heads(const RawTapSet& taps, const HeadParams& params) {
  const int out_h = taps.c3.height * 2;
  const int out_w = taps.c3.width * 2;
  if (taps.c4.height * 2 != taps.c3.height || taps.c5.height * 2 != taps.c4.height ||
      taps.c4.width * 2 != taps.c3.width || taps.c5.width * 2 != taps.c4.width) {
    throw ShapeError("tap strides are inconsistent");
  }
  HeadForward fwd;
  const FeatureMapF* in[3] = {&taps.c3, &taps.c4, &taps.c5};
  for (int l = 0; l < 3; ++l) {
    FeatureMapD f = project_level(*in[l], out_h, out_w, params.projection.levels[l],
                                  &fwd.projection[l]);
    fwd.decoded[l] = decode_level_from_params(f, params.masks.levels[l], &fwd.decoder[l]);
  }
  return fwd;
}

DecodedLevels decode_with_params(const RawTapSet& taps, const HeadParams& params) {
  const HierarchicalFeatureSet features = project_taps(taps, params.projection);
  return decode(features, compute_masks(features, params.masks));
}

std::array<LevelGrad, 3> zero_level_grads(const DecodedLevels& decoded) {
  return {LevelGrad::zeros_like(decoded[0]), LevelGrad::zeros_like(decoded[1]),
          LevelGrad::zeros_like(decoded[2])};
}

void backward_heads(const HeadForward& forward, const HeadParams& params,
                    const std::array<LevelGrad, 3>& level_grads, HeadParams* grad) {
  for (int l = 0; l < 3; ++l) {
    const FeatureMapD grad_features =
        decode_level_backward(forward.decoder[l], params.masks.levels[l],
                              level_grads[l].descriptors, level_grads[l].scores,
                              &grad->masks.levels[l]);
    project_level_backward(forward.projection[l], params.projection.levels[l], grad_features,
                           &grad->projection.levels[l]);
  }
}

Backbone BackboneSource::materialize() const {
  if (kind == Kind::kRandom) return Backbone::random(seed, init);
  if (!sha256.empty()) {
    const std::string actual = file_sha256(path);
    if (actual != sha256) {
      throw ParameterError("backbone file '" + path.string() + "' hash mismatch");
    }
  }
  return Backbone::from_archive(ParamArchive::load(path));
}

std::string BackboneSource::describe() const {
  if (kind == Kind::kRandom) {
    return std::string("random(seed=") + std::to_string(seed) + ", init=" +
           (init == BackboneInit::kHeNormal ? "he" : "normal0.01") + ")";
  }
  return "file(" + path.string() + ")";
}

DecodedLevels Model::decode(const ImageTensor& image) const {
  return decode_with_params(taps(image), heads);
}

void Checkpoint::save(const std::filesystem::path& path) const {
  ParamArchive ar;
  for_each_tensor(heads, [&](const std::string& name, const double* data, Eigen::Index len,
                             const std::vector<std::int64_t>& shape) {
    TensorEntry t;
    t.dtype = DType::kFloat64;
    t.shape = shape;
    t.values.assign(data, data + len);
    ar.put(name, std::move(t));
  });
  json backbone;
  if (backbone_source.kind == BackboneSource::Kind::kRandom) {
    backbone = {{"source", "random"},
                {"seed", backbone_source.seed},
                {"init", backbone_source.init == BackboneInit::kHeNormal ? "he" : "normal0.01"}};
  } else {
    backbone = {{"source", "file"},
                {"path", backbone_source.path.string()},
                {"sha256", backbone_source.sha256}};
  }
  json meta = {{"format", "haf-checkpoint"},
               {"version", 1},
               {"backbone", backbone},
               {"head_config", head_config_json(heads.config)},
               {"image_height", image_height},
               {"image_width", image_width},
               {"training", json::parse(metadata_json)}};
  ar.metadata = meta.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  ar.save(tmp);
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const ParamArchive ar = ParamArchive::load(path);
  json meta;
  try {
    meta = json::parse(ar.metadata);
  } catch (const json::exception& e) {
    throw ParameterError("checkpoint '" + path.string() + "' has unreadable metadata");
  }
  if (meta.value("format", "") != "haf-checkpoint") {
    throw ParameterError("'" + path.string() + "' is not a checkpoint");
  }
  Checkpoint ck;
  try {
    ck.heads = HeadParams::zeros(head_config_from_json(meta.at("head_config")));
    const auto& b = meta.at("backbone");
    if (b.at("source") == "random") {
      ck.backbone_source.kind = BackboneSource::Kind::kRandom;
      ck.backbone_source.seed = b.at("seed").get<std::uint64_t>();
      ck.backbone_source.init =
          b.at("init") == "he" ? BackboneInit::kHeNormal : BackboneInit::kNormal001;
    } else {
      ck.backbone_source.kind = BackboneSource::Kind::kFile;
      ck.backbone_source.path = b.at("path").get<std::string>();
      ck.backbone_source.sha256 = b.value("sha256", "");
    }
    ck.image_height = meta.at("image_height").get<int>();
    ck.image_width = meta.at("image_width").get<int>();
    ck.metadata_json = meta.at("training").dump();
  } catch (const json::exception& e) {
    throw ParameterError("checkpoint '" + path.string() + "' metadata: " + e.what());
  }
  for_each_tensor(ck.heads, [&](const std::string& name, double* data, Eigen::Index len,
                                const std::vector<std::int64_t>& shape) {
    const auto& t = ar.get(name, shape);
    std::copy(t.values.begin(), t.values.begin() + len, data);
  });
  return ck;
}

Model Checkpoint::to_model() const {
  Model m;
  m.backbone_source = backbone_source;
  m.backbone = std::make_shared<const Backbone>(backbone_source.materialize());
  m.heads = heads;
  return m;
}

}  // namespace haf
