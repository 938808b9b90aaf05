#pragma once

#include <cstdint>
#include <vector>

#include "dcl/tensor.hpp"
#include "dcl/volume.hpp"

namespace dcl {

// 3D convolution layer. Kernel size is 3 (zero padding 1, dims preserved)
// or 1 (pointwise). Weight layout: [out_ch][in_ch][dz][dy][dx], then bias.
struct ConvLayer {
  int out_ch = 0;
  int in_ch = 0;
  int ksize = 3;
  std::vector<double> w;
  std::vector<double> b;

  ConvLayer() = default;
  ConvLayer(int out_c, int in_c, int k)
      : out_ch(out_c), in_ch(in_c), ksize(k),
        w(static_cast<std::size_t>(out_c) * in_c * k * k * k, 0.0),
        b(out_c, 0.0) {}

  std::size_t weight_count() const { return w.size(); }
};

struct ConvGrads {
  Tensor4 input;
  std::vector<double> w;
  std::vector<double> b;
};

Tensor4 conv3d_forward(const Tensor4& input, const ConvLayer& layer);
// grad_input computation can be skipped for the first layer of a network.
ConvGrads conv3d_backward(const Tensor4& input, const ConvLayer& layer,
                          const Tensor4& grad_out, bool need_grad_input = true);

Tensor4 relu_forward(const Tensor4& input);
void relu_forward_inplace(Tensor4& t);
// Takes the forward *output*; gradient passes where output > 0.
Tensor4 relu_backward(const Tensor4& output, const Tensor4& grad_out);

// 2x2x2 max pooling, stride 2; spatial dims must be even. Gradient routes to
// the argmax voxel, ties broken by first index in scan order.
Tensor4 maxpool2_forward(const Tensor4& input);
Tensor4 maxpool2_backward(const Tensor4& input, const Tensor4& grad_out);

// x2 trilinear upsampling, half-pixel mapping src = (dst + 0.5)/2 - 0.5 with
// border clamping; backward is the transpose.
Tensor4 trilinear_up2_forward(const Tensor4& input);
Tensor4 trilinear_up2_backward(const Tensor4& grad_out, int in_d, int in_h,
                               int in_w);

// Per-channel mean over masked voxels. Mask dims must equal the feature
// spatial dims and be nonempty.
std::vector<double> masked_avg_pool(const Tensor4& features, const Mask& mask);
Tensor4 masked_avg_pool_backward(const std::vector<double>& grad_pooled,
                                 const Mask& mask, int channels);

// 2x2x2 any-inside reduction (used to carry a mask down pooling levels).
Mask downsample_mask2(const Mask& mask);

struct XentResult {
  double loss = 0.0;
  std::vector<double> grad_logits;
};

// loss = -log softmax(logits)[label], max-subtracted for stability;
// grad = softmax - one_hot(label).
XentResult softmax_xent(const std::vector<double>& logits, int label);

}  // namespace dcl
