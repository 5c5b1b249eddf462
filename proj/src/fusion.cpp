#include "lsm/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lsm/error.hpp"
#include "lsm/nn/convert.hpp"

namespace lsm::fusion {

FeatureGrid fuse_pointwise(std::span<const FeatureGrid> grids, PointwiseMode mode) {
  if (grids.empty()) throw InvalidArgument("fuse_pointwise: no grids");
  for (const auto& g : grids) {
    if (!g.same_shape(grids[0])) throw InvalidArgument("fuse_pointwise: grid shapes differ");
  }
  FeatureGrid out(grids[0].spec, grids[0].channels);
  const std::size_t n = out.values.size();
  if (mode == PointwiseMode::kMax) {
    out.values = grids[0].values;
    for (std::size_t k = 1; k < grids.size(); ++k)
      for (std::size_t i = 0; i < n; ++i)
        out.values[i] = std::max(out.values[i], grids[k].values[i]);
  } else {
    // Sort each element's samples so the summation order is independent of
    // the view order.
    std::vector<double> samples(grids.size());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < grids.size(); ++k) samples[k] = grids[k].values[i];
      std::sort(samples.begin(), samples.end());
      double s = 0.0;
      for (double v : samples) s += v;
      out.values[i] = s / double(grids.size());
    }
  }
  return out;
}

GruCellParams GruCellParams::zeros(int in_channels, int hidden_channels, int kernel) {
  GruCellParams p;
  p.in_channels = in_channels;
  p.hidden_channels = hidden_channels;
  p.kernel = kernel;
  p.validate();
  const char* names[3] = {"update", "reset", "candidate"};
  for (int g = 0; g < 3; ++g) {
    const std::string id = std::string("gru.") + names[g];
    p.input_kernel[g] = nn::Parameter(
        id + ".input_kernel", nn::Tensor({kernel, kernel, kernel, in_channels, hidden_channels}));
    p.hidden_kernel[g] = nn::Parameter(
        id + ".hidden_kernel",
        nn::Tensor({kernel, kernel, kernel, hidden_channels, hidden_channels}));
    p.bias[g] = nn::Parameter(id + ".bias", nn::Tensor({hidden_channels}));
    p.norm_gain[g] = nn::Parameter(id + ".norm_gain", nn::Tensor({hidden_channels}, 1.0));
    p.norm_shift[g] = nn::Parameter(id + ".norm_shift", nn::Tensor({hidden_channels}));
  }
  return p;
}

GruCellParams GruCellParams::random(int in_channels, int hidden_channels, int kernel,
                                    std::uint64_t seed, double scale) {
  GruCellParams p = zeros(in_channels, hidden_channels, kernel);
  for (int g = 0; g < 3; ++g) {
    p.input_kernel[g].value = nn::he_normal(p.input_kernel[g].value.shape, seed + 11 * g);
    p.hidden_kernel[g].value = nn::he_normal(p.hidden_kernel[g].value.shape, seed + 11 * g + 5);
    for (double& v : p.input_kernel[g].value.data) v *= scale;
    for (double& v : p.hidden_kernel[g].value.data) v *= scale;
  }
  return p;
}

void GruCellParams::validate() const {
  if (in_channels < 1 || hidden_channels < 1) {
    throw InvalidArgument("gru: channel counts must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("gru: kernel size must be odd");
}

std::vector<nn::Parameter*> GruCellParams::parameters() {
  std::vector<nn::Parameter*> out;
  for (int g = 0; g < 3; ++g) {
    out.push_back(&input_kernel[g]);
    out.push_back(&hidden_kernel[g]);
    out.push_back(&bias[g]);
    out.push_back(&norm_gain[g]);
    out.push_back(&norm_shift[g]);
  }
  return out;
}

nn::Var gru_step(nn::Tape& t, nn::Var h, nn::Var x, GruCellParams& p) {
  const auto& hv = t.value(h);
  const auto& xv = t.value(x);
  if (xv.rank() != 4 || hv.rank() != 4 || xv.channels() != p.in_channels ||
      hv.channels() != p.hidden_channels ||
      !std::equal(xv.shape.begin(), xv.shape.end() - 1, hv.shape.begin())) {
    throw InvalidArgument("gru_step: input " + nn::shape_string(xv.shape) + " / hidden " +
                          nn::shape_string(hv.shape) + " do not match the cell (" +
                          std::to_string(p.in_channels) + " -> " +
                          std::to_string(p.hidden_channels) + ")");
  }
  const nn::Var no_bias = t.constant(nn::Tensor({p.hidden_channels}));
  auto gate_input = [&](int g, nn::Var hidden_in) {
    nn::Var a = nn::conv3d(t, x, t.param(p.input_kernel[g]), t.param(p.bias[g]));
    nn::Var b = nn::conv3d(t, hidden_in, t.param(p.hidden_kernel[g]), no_bias);
    return nn::layer_norm(t, nn::add(t, a, b), t.param(p.norm_gain[g]),
                          t.param(p.norm_shift[g]));
  };
  nn::Var z = nn::sigmoid(t, gate_input(GruCellParams::kUpdate, h));
  nn::Var r = nn::sigmoid(t, gate_input(GruCellParams::kReset, h));
  nn::Var cand = nn::tanh(t, gate_input(GruCellParams::kCandidate, nn::mul(t, r, h)));
  return nn::add(t, h, nn::mul(t, z, nn::sub(t, cand, h)));
}

nn::Var fuse_recurrent(nn::Tape& t, const std::vector<nn::Var>& grids, GruCellParams& p,
                       nn::Var h0) {
  if (grids.empty()) throw InvalidArgument("fuse_recurrent: no grids");
  nn::Var h = h0;
  for (nn::Var x : grids) h = gru_step(t, h, x, p);
  return h;
}

FeatureGrid gru_step(const FeatureGrid& h, const FeatureGrid& x, GruCellParams& p) {
  nn::Tape t;
  nn::Var out = gru_step(t, t.constant(nn::to_tensor(h)), t.constant(nn::to_tensor(x)), p);
  return nn::to_grid(t.value(out), h.spec);
}

FeatureGrid fuse_recurrent(std::span<const FeatureGrid> grids, GruCellParams& p) {
  if (grids.empty()) throw InvalidArgument("fuse_recurrent: no grids");
  FeatureGrid h(grids[0].spec, p.hidden_channels);
  for (const auto& x : grids) h = gru_step(h, x, p);
  return h;
}

double ordering_deviation(std::span<const FeatureGrid> grids, GruCellParams& p,
                          int orderings, std::uint64_t seed) {
  if (grids.empty()) throw InvalidArgument("ordering_deviation: no grids");
  std::vector<std::size_t> order(grids.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  const FeatureGrid reference = fuse_recurrent(grids, p);
  double worst = 0.0;
  for (int o = 1; o < orderings; ++o) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<FeatureGrid> permuted;
    for (auto i : order) permuted.push_back(grids[i]);
    const FeatureGrid out = fuse_recurrent(permuted, p);
    for (std::size_t i = 0; i < out.values.size(); ++i)
      worst = std::max(worst, std::abs(out.values[i] - reference.values[i]));
  }
  return worst;
}

}  // namespace lsm::fusion
