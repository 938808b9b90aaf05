#pragma once

// Shared helper: end-to-end gradient checking of the composed network
// (feature net -> lung pooling -> head -> multinomial logistic loss).

#include <cstdint>
#include <vector>

#include "dcl/net.hpp"
#include "dcl/nn_ops.hpp"
#include "dcl/pipeline.hpp"
#include "dcl/rng.hpp"
#include "gradcheck.hpp"

namespace netcheck {

struct ComposedSetup {
  dcl::FeatureNet net;
  dcl::Head head;
  dcl::Tensor4 input;
  dcl::Mask mask;
  dcl::Mask feat_mask;
  int label = 0;
};

inline ComposedSetup make_setup(const dcl::Topology& topo, int k,
                                dcl::Dims dims, std::uint64_t seed) {
  ComposedSetup s;
  dcl::Rng rng(dcl::mix_seed(seed, 0xc0355eduLL));
  s.net = dcl::make_feature_net(topo, rng.next());
  s.head = dcl::make_head(topo.feature_channels(), k, rng.next());
  s.input = dcl::Tensor4(topo.in_channels, dims.d, dims.h, dims.w);
  for (double& x : s.input.v) x = rng.uniform(-1.0, 1.0);
  s.mask = dcl::Mask(dims);
  for (auto& b : s.mask.values) b = rng.uniform() < 0.4 ? 1 : 0;
  if (s.mask.set_count() == 0) s.mask.values[0] = 1;
  s.feat_mask = dcl::pooled_mask(s.mask, topo);
  s.label = static_cast<int>(rng.bounded(k));
  return s;
}

inline gradcheck::Probe evaluate(const ComposedSetup& s) {
  dcl::NetTrace trace;
  const dcl::Tensor4 dense = dcl::unet_forward(s.net, s.input, &trace);
  const auto pooled = dcl::masked_avg_pool(dense, s.feat_mask);
  const auto logits = dcl::head_apply(s.head, pooled);
  gradcheck::Probe p;
  p.value = dcl::softmax_xent(logits, s.label).loss;
  // smoothness signature: ReLU activation pattern + pool argmax choices
  for (std::size_t li = 0; li < trace.conv_out.size(); ++li) {
    if (!trace.conv_act[li]) continue;
    for (double v : trace.conv_out[li].v) p.signature.push_back(v > 0.0);
  }
  for (int level = 0; level < s.net.topo.levels; ++level) {
    const dcl::Tensor4& pin = trace.conv_out[2 * level + 1];
    for (int c = 0; c < pin.c; ++c) {
      for (int z = 0; z + 1 < pin.d; z += 2) {
        for (int y = 0; y + 1 < pin.h; y += 2) {
          for (int x = 0; x + 1 < pin.w; x += 2) {
            int best = 0;
            double bv = pin.at(c, z, y, x);
            for (int t = 1; t < 8; ++t) {
              const double v =
                  pin.at(c, z + (t >> 2), y + ((t >> 1) & 1), x + (t & 1));
              if (v > bv) {
                bv = v;
                best = t;
              }
            }
            p.signature.push_back(best);
          }
        }
      }
    }
  }
  return p;
}

// Analytic gradient in coordinate order: net layers (w then b), head (w, b),
// input voxels.
inline std::vector<double> analytic_gradient(const ComposedSetup& s) {
  dcl::NetTrace trace;
  const dcl::Tensor4 dense = dcl::unet_forward(s.net, s.input, &trace);
  const auto pooled = dcl::masked_avg_pool(dense, s.feat_mask);
  const auto logits = dcl::head_apply(s.head, pooled);
  const dcl::XentResult xr = dcl::softmax_xent(logits, s.label);
  const dcl::HeadGrads hg = dcl::head_backward(s.head, pooled, xr.grad_logits);
  const dcl::Tensor4 gdense =
      dcl::masked_avg_pool_backward(hg.pooled, s.feat_mask, dense.c);
  dcl::Tensor4 ginput;
  const std::vector<dcl::LayerGrad> grads =
      dcl::unet_backward(s.net, trace, gdense, &ginput);

  std::vector<double> out;
  for (const dcl::LayerGrad& lg : grads) {
    out.insert(out.end(), lg.w.begin(), lg.w.end());
    out.insert(out.end(), lg.b.begin(), lg.b.end());
  }
  out.insert(out.end(), hg.w.begin(), hg.w.end());
  out.insert(out.end(), hg.b.begin(), hg.b.end());
  out.insert(out.end(), ginput.v.begin(), ginput.v.end());
  return out;
}

inline std::vector<double*> coordinates(ComposedSetup& s) {
  std::vector<double*> coords;
  for (dcl::ConvLayer& layer : s.net.layers) {
    for (double& x : layer.w) coords.push_back(&x);
    for (double& x : layer.b) coords.push_back(&x);
  }
  for (double& x : s.head.conv.w) coords.push_back(&x);
  for (double& x : s.head.conv.b) coords.push_back(&x);
  for (double& x : s.input.v) coords.push_back(&x);
  return coords;
}

inline gradcheck::Result check_composed(const dcl::Topology& topo, int k,
                                        dcl::Dims dims, std::uint64_t seed) {
  ComposedSetup s = make_setup(topo, k, dims, seed);
  const std::vector<double> analytic = analytic_gradient(s);
  const std::vector<double*> coords = coordinates(s);
  return gradcheck::check(coords, analytic, [&] { return evaluate(s); });
}

}  // namespace netcheck
