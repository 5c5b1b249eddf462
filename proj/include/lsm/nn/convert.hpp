#pragma once

#include "lsm/nn/tensor.hpp"
#include "lsm/raster.hpp"

namespace lsm::nn {

inline Tensor to_tensor(const FeatureMap& m) {
  return Tensor({m.height, m.width, m.channels}, m.values);
}

inline Tensor to_tensor(const FeatureGrid& g) {
  const int r = g.spec.resolution;
  return Tensor({r, r, r, g.channels}, g.values);
}

inline FeatureMap to_map(const Tensor& t) {
  FeatureMap m;
  m.height = t.shape.at(0);
  m.width = t.shape.at(1);
  m.channels = t.rank() > 2 ? t.shape.at(2) : 1;
  m.values = t.data;
  return m;
}

inline FeatureGrid to_grid(const Tensor& t, VoxelGridSpec spec) {
  FeatureGrid g;
  spec.resolution = t.shape.at(0);
  g.spec = spec;
  g.channels = t.rank() > 3 ? t.shape.at(3) : 1;
  g.values = t.data;
  return g;
}

}  // namespace lsm::nn
