#pragma once

#include <Eigen/Core>

#include <string>

#include "haf/error.h"

namespace haf {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixF = RowMatrix<float>;
using RowMatrixD = RowMatrix<double>;

// A dense H x W x C activation map stored pixel-major: row (y * width + x)
// holds the C channel values of one pixel.
template <typename T>
struct FeatureMap {
  int height = 0;
  int width = 0;
  RowMatrix<T> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int channels)
      : height(h), width(w), data(RowMatrix<T>::Zero(static_cast<Eigen::Index>(h) * w, channels)) {}

  int channels() const { return static_cast<int>(data.cols()); }
  Eigen::Index pixels() const { return data.rows(); }
  Eigen::Index index(int y, int x) const { return static_cast<Eigen::Index>(y) * width + x; }

  T& at(int y, int x, int c) { return data(index(y, x), c); }
  T at(int y, int x, int c) const { return data(index(y, x), c); }
};

using FeatureMapF = FeatureMap<float>;
using FeatureMapD = FeatureMap<double>;

template <typename T>
std::string shape_string(const FeatureMap<T>& m) {
  return std::to_string(m.height) + "x" + std::to_string(m.width) + "x" +
         std::to_string(m.channels());
}

template <typename To, typename From>
FeatureMap<To> cast_map(const FeatureMap<From>& m) {
  FeatureMap<To> out;
  out.height = m.height;
  out.width = m.width;
  out.data = m.data.template cast<To>();
  return out;
}

}  // namespace haf
