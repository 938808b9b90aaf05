#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dcl/nn_ops.hpp"
#include "dcl/tensor.hpp"
#include "dcl/volume.hpp"

namespace dcl {

enum class Variant { kProposed, kBaseline };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Feature extractor topology. The proposed variant is an encoder/decoder
// returning full-resolution dense features; the baseline keeps only the
// encoder (one extra level, wider) and returns features at 1/2^levels
// resolution.
struct Topology {
  Variant variant = Variant::kProposed;
  int levels = 3;           // down-sampling levels
  int base_filters = 8;
  bool with_upsampling = true;
  bool skip_connections = true;
  bool dense_post_relu = true;
  int in_channels = 1;

  static Topology proposed(int levels = 3, int base_filters = 8,
                           bool skips = true);
  static Topology baseline(int levels = 4, int base_filters = 8);

  // encoder widths per level; proposed doubles from base_filters, baseline
  // starts at 2x base and caps at 4x ("wider" compensation)
  int enc_channels(int level) const;
  int bottleneck_channels() const;
  int feature_channels() const;
  int downsample_factor() const;  // spatial reduction of the feature map
  int conv_count() const;
};

struct FeatureNet {
  Topology topo;
  std::vector<ConvLayer> layers;  // declaration order; see make_feature_net
};

// Per-voxel affine map from feature channels to k cluster logits
// (a 1x1x1 convolution with bias).
struct Head {
  ConvLayer conv;
  int k() const { return conv.out_ch; }
  int in_channels() const { return conv.in_ch; }
};

// Fan-in-scaled uniform init, bound = sqrt(1/fan_in); one deterministic
// stream over all parameters in declaration order.
FeatureNet make_feature_net(const Topology& topo, std::uint64_t seed);
Head make_head(int feature_channels, int k, std::uint64_t seed);

// Intermediates kept by the forward pass so the backward pass can run.
struct NetTrace {
  Tensor4 input;
  std::vector<Tensor4> conv_in;    // input of each conv, declaration order
  std::vector<Tensor4> conv_out;   // post-activation output of each conv
  std::vector<bool> conv_act;      // whether ReLU was applied
  std::vector<Dims> up_in_dims;    // per up level, dims before upsampling
};

Tensor4 unet_forward(const FeatureNet& net, const Tensor4& input,
                     NetTrace* trace = nullptr);
// Volume entry point; enforces ingestion rules (dims >= 8, divisible by the
// network's downsampling factor).
Tensor4 unet_forward(const FeatureNet& net, const Volume& volume,
                     NetTrace* trace = nullptr);

struct LayerGrad {
  std::vector<double> w, b;
};

struct ModelGrads {
  std::vector<LayerGrad> net;
  LayerGrad head;

  void zero();
  void add_scaled(const ModelGrads& other, double scale);
  void scale(double s);
};

ModelGrads zero_grads_like(const FeatureNet& net, const Head& head);

// Backward through the feature net. grad_input is only produced on request.
std::vector<LayerGrad> unet_backward(const FeatureNet& net,
                                     const NetTrace& trace,
                                     const Tensor4& grad_features,
                                     Tensor4* grad_input = nullptr);

std::vector<double> head_apply(const Head& head,
                               const std::vector<double>& pooled);
struct HeadGrads {
  std::vector<double> w, b, pooled;
};
HeadGrads head_backward(const Head& head, const std::vector<double>& pooled,
                        const std::vector<double>& grad_logits);

// v <- momentum * v + g; p <- p - lr * v
void sgd_step(FeatureNet& net, Head& head, const ModelGrads& grads, double lr,
              double momentum, ModelGrads& velocity);

// Checkpoint: <stem>.json sidecar + <stem>.f32raw parameter payload
// (net layers then head, each weights-then-bias, little-endian f32).
struct Checkpoint {
  FeatureNet net;
  Head head;
  int epoch = 0;
  nlohmann::json extra;  // opaque metadata stored alongside (e.g. config)
};

void save_checkpoint(const std::filesystem::path& stem, const FeatureNet& net,
                     const Head& head, int epoch,
                     const nlohmann::json& extra = {});
Checkpoint load_checkpoint(const std::filesystem::path& stem_or_json);

}  // namespace dcl
