#include "haf/hier_features.h"

#include <cmath>
#include <random>
#include <vector>

#include "haf/error.h"

namespace haf {
namespace {

// Source indices and the weight of the upper neighbour for one axis.
struct AxisInterp {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};

AxisInterp axis_interp(int in_size, int out_size) {
  AxisInterp a;
  a.lo.resize(out_size);
  a.hi.resize(out_size);
  a.frac.resize(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in_size - 1) i0 = in_size - 1;
    a.lo[o] = i0;
    a.hi[o] = std::min(i0 + 1, in_size - 1);
    a.frac[o] = src - i0;
  }
  return a;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void fill_normal(RowMatrixD& m, std::mt19937_64& rng, double std) {
  std::normal_distribution<double> dist(0.0, std);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

}  // namespace

int HeadConfig::out_channels(int level) const {
  return static_cast<int>(std::lround(tap_channels[level] * multipliers[level]));
}

int HeadConfig::total_channels() const {
  return out_channels(kLow) + out_channels(kMid) + out_channels(kHigh);
}

void HeadConfig::validate() const {
  for (int l = 0; l < 3; ++l) {
    if (tap_channels[l] <= 0 || out_channels(l) <= 0) {
      throw ConfigError("head level " + std::string(kLevelNames[l]) + " has no channels");
    }
  }
  if (!(init_std > 0.0)) throw ConfigError("head init_std must be positive");
}

ProjectionParams ProjectionParams::zeros(const HeadConfig& config) {
  config.validate();
  ProjectionParams p;
  for (int l = 0; l < 3; ++l) {
    const int cout = config.out_channels(l);
    auto& lv = p.levels[l];
    lv.weight = RowMatrixD::Zero(config.tap_channels[l], cout);
    lv.bias = Eigen::VectorXd::Zero(cout);
    lv.gate_weight = RowMatrixD::Zero(9, cout);
    lv.gate_bias = 0.0;
  }
  return p;
}

ProjectionParams ProjectionParams::random(const HeadConfig& config, std::uint64_t seed) {
  ProjectionParams p = zeros(config);
  std::mt19937_64 rng(seed);
  for (auto& lv : p.levels) {
    fill_normal(lv.weight, rng, config.init_std);
    fill_normal(lv.gate_weight, rng, config.init_std);
  }
  return p;
}

int HierarchicalFeatureSet::total_channels() const {
  return levels[0].channels() + levels[1].channels() + levels[2].channels();
}

FeatureMapD upsample_bilinear(const FeatureMapD& input, int out_height, int out_width) {
  if (input.height == out_height && input.width == out_width) return input;
  const AxisInterp ay = axis_interp(input.height, out_height);
  const AxisInterp ax = axis_interp(input.width, out_width);
  FeatureMapD out(out_height, out_width, input.channels());
  for (int y = 0; y < out_height; ++y) {
    const double fy = ay.frac[y];
    for (int x = 0; x < out_width; ++x) {
      const double fx = ax.frac[x];
      out.data.row(out.index(y, x)) =
          (1.0 - fy) * ((1.0 - fx) * input.data.row(input.index(ay.lo[y], ax.lo[x])) +
                        fx * input.data.row(input.index(ay.lo[y], ax.hi[x]))) +
          fy * ((1.0 - fx) * input.data.row(input.index(ay.hi[y], ax.lo[x])) +
                fx * input.data.row(input.index(ay.hi[y], ax.hi[x])));
    }
  }
  return out;
}

FeatureMapD upsample_bilinear_backward(const FeatureMapD& grad_output, int in_height,
                                       int in_width) {
  if (grad_output.height == in_height && grad_output.width == in_width) return grad_output;
  const AxisInterp ay = axis_interp(in_height, grad_output.height);
  const AxisInterp ax = axis_interp(in_width, grad_output.width);
  FeatureMapD grad(in_height, in_width, grad_output.channels());
  for (int y = 0; y < grad_output.height; ++y) {
    const double fy = ay.frac[y];
    for (int x = 0; x < grad_output.width; ++x) {
      const double fx = ax.frac[x];
      const auto g = grad_output.data.row(grad_output.index(y, x));
      grad.data.row(grad.index(ay.lo[y], ax.lo[x])) += (1.0 - fy) * (1.0 - fx) * g;
      grad.data.row(grad.index(ay.lo[y], ax.hi[x])) += (1.0 - fy) * fx * g;
      grad.data.row(grad.index(ay.hi[y], ax.lo[x])) += fy * (1.0 - fx) * g;
      grad.data.row(grad.index(ay.hi[y], ax.hi[x])) += fy * fx * g;
    }
  }
  return grad;
}

FeatureMapD project_level(const FeatureMapF& tap, int out_height, int out_width,
                          const ProjectionLevelParams& params, ProjectionCache* cache) {
  if (tap.channels() != params.weight.rows()) {
    throw ShapeError("projection expects " + std::to_string(params.weight.rows()) +
                     " tap channels, got " + shape_string(tap));
  }
  FeatureMapD tap_d = cast_map<double>(tap);
  RowMatrixD pre = tap_d.data * params.weight;
  pre.rowwise() += params.bias.transpose();

  FeatureMapD act;
  act.height = tap.height;
  act.width = tap.width;
  act.data = pre.unaryExpr([](double v) { return relu6(v); });
  FeatureMapD up = upsample_bilinear(act, out_height, out_width);

  // Adaptive spatial fusion gate: per-pixel 3x3 conv to one channel.
  const RowMatrixD taps9 = up.data * params.gate_weight.transpose();  // N x 9
  Eigen::VectorXd gate(up.pixels());
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      double acc = params.gate_bias;
      for (int dy = -1; dy <= 1; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= out_height) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= out_width) continue;
          acc += taps9(up.index(sy, sx), (dy + 1) * 3 + (dx + 1));
        }
      }
      gate(up.index(y, x)) = sigmoid(acc);
    }
  }

  FeatureMapD out;
  out.height = out_height;
  out.width = out_width;
  out.data = gate.asDiagonal() * up.data;
  if (cache) {
    cache->tap = std::move(tap_d);
    cache->pre_activation = std::move(pre);
    cache->upsampled = std::move(up);
    cache->gate = std::move(gate);
  }
  return out;
}

void project_level_backward(const ProjectionCache& cache, const ProjectionLevelParams& params,
                            const FeatureMapD& grad_output, ProjectionLevelParams* grad) {
  const FeatureMapD& up = cache.upsampled;
  const int h = up.height;
  const int w = up.width;

  // out = gate * up
  Eigen::VectorXd grad_gate = (grad_output.data.cwiseProduct(up.data)).rowwise().sum();
  FeatureMapD grad_up;
  grad_up.height = h;
  grad_up.width = w;
  grad_up.data = cache.gate.asDiagonal() * grad_output.data;

  const Eigen::VectorXd grad_gate_pre =
      grad_gate.cwiseProduct(cache.gate.cwiseProduct((1.0 - cache.gate.array()).matrix()));
  grad->gate_bias += grad_gate_pre.sum();

  RowMatrixD grad_taps9 = RowMatrixD::Zero(up.pixels(), 9);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g = grad_gate_pre(up.index(y, x));
      for (int dy = -1; dy <= 1; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= w) continue;
          grad_taps9(up.index(sy, sx), (dy + 1) * 3 + (dx + 1)) += g;
        }
      }
    }
  }
  grad->gate_weight.noalias() += grad_taps9.transpose() * up.data;
  grad_up.data.noalias() += grad_taps9 * params.gate_weight;

  FeatureMapD grad_act =
      upsample_bilinear_backward(grad_up, cache.tap.height, cache.tap.width);
  const RowMatrixD grad_pre = grad_act.data.cwiseProduct(cache.pre_activation.unaryExpr(
      [](double v) { return (v > 0.0 && v < 6.0) ? 1.0 : 0.0; }));
  grad->weight.noalias() += cache.tap.data.transpose() * grad_pre;
  grad->bias += grad_pre.colwise().sum().transpose();
}

HierarchicalFeatureSet project_taps(const RawTapSet& taps, const ProjectionParams& params) {
  const int out_h = taps.c3.height * 2;
  const int out_w = taps.c3.width * 2;
  if (taps.c3.height == 0 || taps.c3.width == 0 || taps.c4.height * 2 != taps.c3.height ||
      taps.c4.width * 2 != taps.c3.width || taps.c5.height * 2 != taps.c4.height ||
      taps.c5.width * 2 != taps.c4.width) {
    throw ShapeError("tap strides are inconsistent: C3 " + shape_string(taps.c3) + ", C4 " +
                     shape_string(taps.c4) + ", C5 " + shape_string(taps.c5));
  }
  HierarchicalFeatureSet set;
  const FeatureMapF* in[3] = {&taps.c3, &taps.c4, &taps.c5};
  for (int l = 0; l < 3; ++l) {
    set.levels[l] = project_level(*in[l], out_h, out_w, params.levels[l]);
    if (set.levels[l].height != out_h || set.levels[l].width != out_w) {
      throw ShapeError("projected level " + std::string(kLevelNames[l]) +
                       " has shape " + shape_string(set.levels[l]));
    }
  }
  return set;
}

}  // namespace haf
