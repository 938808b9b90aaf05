#include "dcl/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dcl/rng.hpp"

namespace dcl {

using nlohmann::json;

std::string variant_name(Variant v) {
  return v == Variant::kProposed ? "proposed" : "baseline";
}

Variant variant_from_name(const std::string& name) {
  if (name == "proposed") return Variant::kProposed;
  if (name == "baseline") return Variant::kBaseline;
  throw std::invalid_argument("unknown variant \"" + name +
                              "\" (expected proposed|baseline)");
}

Topology Topology::proposed(int levels, int base_filters, bool skips) {
  Topology t;
  t.variant = Variant::kProposed;
  t.levels = levels;
  t.base_filters = base_filters;
  t.with_upsampling = true;
  t.skip_connections = skips;
  return t;
}

Topology Topology::baseline(int levels, int base_filters) {
  Topology t;
  t.variant = Variant::kBaseline;
  t.levels = levels;
  t.base_filters = base_filters;
  t.with_upsampling = false;
  t.skip_connections = false;
  return t;
}

int Topology::enc_channels(int level) const {
  if (variant == Variant::kProposed) {
    return base_filters << level;
  }
  return std::min(2 * base_filters << level, 4 * base_filters);
}

int Topology::bottleneck_channels() const {
  if (variant == Variant::kProposed) {
    return 2 * enc_channels(levels - 1);
  }
  return 4 * base_filters;
}

int Topology::feature_channels() const {
  return with_upsampling ? enc_channels(0) : bottleneck_channels();
}

int Topology::downsample_factor() const {
  return with_upsampling ? 1 : (1 << levels);
}

int Topology::conv_count() const {
  // 2 per down level + 2 bottleneck (+ 2 per up level)
  return with_upsampling ? 4 * levels + 2 : 2 * levels + 2;
}

namespace {

struct ConvSpec {
  int out_ch, in_ch, ksize;
};

std::vector<ConvSpec> conv_schedule(const Topology& t) {
  std::vector<ConvSpec> specs;
  int prev = t.in_channels;
  for (int i = 0; i < t.levels; ++i) {
    const int ch = t.enc_channels(i);
    specs.push_back({ch, prev, 3});
    specs.push_back({ch, ch, 3});
    prev = ch;
  }
  const int bott = t.bottleneck_channels();
  specs.push_back({bott, prev, 3});
  specs.push_back({bott, bott, 3});
  if (t.with_upsampling) {
    int carry = bott;
    for (int e = 0; e < t.levels; ++e) {
      const int target = t.levels - 1 - e;
      const int ch = t.enc_channels(target);
      const int in1 = carry + (t.skip_connections ? ch : 0);
      specs.push_back({ch, in1, 3});
      specs.push_back({ch, ch, 3});
      carry = ch;
    }
  }
  return specs;
}

void init_layer(ConvLayer& layer, Rng& rng) {
  const double fan_in =
      static_cast<double>(layer.in_ch) * layer.ksize * layer.ksize * layer.ksize;
  const double bound = std::sqrt(1.0 / fan_in);
  for (double& x : layer.w) x = rng.uniform(-bound, bound);
  for (double& x : layer.b) x = rng.uniform(-bound, bound);
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  Tensor4 out(a.c + b.c, a.d, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

}  // namespace

FeatureNet make_feature_net(const Topology& topo, std::uint64_t seed) {
  if (topo.levels < 1) {
    throw std::invalid_argument("topology needs at least one level");
  }
  if (topo.base_filters < 1) {
    throw std::invalid_argument("topology needs base_filters >= 1");
  }
  FeatureNet net;
  net.topo = topo;
  Rng rng(mix_seed(seed, 0x6e657477uLL));
  for (const ConvSpec& s : conv_schedule(topo)) {
    ConvLayer layer(s.out_ch, s.in_ch, s.ksize);
    init_layer(layer, rng);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Head make_head(int feature_channels, int k, std::uint64_t seed) {
  if (k < 2) {
    throw std::invalid_argument("head needs k >= 2");
  }
  Head h;
  h.conv = ConvLayer(k, feature_channels, 1);
  Rng rng(mix_seed(seed, 0x68656164uLL));
  init_layer(h.conv, rng);
  return h;
}

Tensor4 unet_forward(const FeatureNet& net, const Tensor4& input,
                     NetTrace* trace) {
  const Topology& t = net.topo;
  if (input.c != t.in_channels) {
    throw std::invalid_argument("unet_forward: input channel mismatch");
  }
  const int div = 1 << t.levels;
  if (input.d % div || input.h % div || input.w % div) {
    throw std::invalid_argument(
        "unet_forward: spatial dims must be divisible by " +
        std::to_string(div));
  }

  if (trace) {
    trace->conv_in.clear();
    trace->conv_out.clear();
    trace->conv_act.clear();
    trace->up_in_dims.clear();
    trace->input = input;
  }
  const int n_convs = t.conv_count();
  int li = 0;

  auto run_conv = [&](Tensor4& cur) {
    const ConvLayer& layer = net.layers[li];
    if (trace) trace->conv_in.push_back(cur);
    Tensor4 out = conv3d_forward(cur, layer);
    const bool is_last = (li == n_convs - 1);
    const bool act = !is_last || t.dense_post_relu;
    if (act) relu_forward_inplace(out);
    if (trace) {
      trace->conv_out.push_back(out);
      trace->conv_act.push_back(act);
    }
    ++li;
    cur = std::move(out);
  };

  Tensor4 cur = input;
  std::vector<Tensor4> skip_src;
  for (int i = 0; i < t.levels; ++i) {
    run_conv(cur);
    run_conv(cur);
    if (t.with_upsampling && t.skip_connections) skip_src.push_back(cur);
    cur = maxpool2_forward(cur);
  }
  run_conv(cur);
  run_conv(cur);
  if (t.with_upsampling) {
    for (int e = 0; e < t.levels; ++e) {
      if (trace) trace->up_in_dims.push_back({cur.d, cur.h, cur.w});
      Tensor4 up = trilinear_up2_forward(cur);
      if (t.skip_connections) {
        cur = concat_channels(up, skip_src[t.levels - 1 - e]);
      } else {
        cur = std::move(up);
      }
      run_conv(cur);
      run_conv(cur);
    }
  }
  return cur;
}

Tensor4 unet_forward(const FeatureNet& net, const Volume& volume,
                     NetTrace* trace) {
  if (volume.dims.d < 8 || volume.dims.h < 8 || volume.dims.w < 8) {
    throw std::invalid_argument("unet_forward: volume dims must be >= 8");
  }
  const int div = 1 << net.topo.levels;
  if (volume.dims.d % div || volume.dims.h % div || volume.dims.w % div) {
    throw std::invalid_argument(
        "unet_forward: volume dims must be divisible by " +
        std::to_string(div) + " for the " + variant_name(net.topo.variant) +
        " variant");
  }
  Tensor4 in(1, volume.dims.d, volume.dims.h, volume.dims.w);
  for (std::size_t i = 0; i < volume.values.size(); ++i) {
    in.v[i] = volume.values[i];
  }
  return unet_forward(net, in, trace);
}

void ModelGrads::zero() {
  for (LayerGrad& lg : net) {
    std::fill(lg.w.begin(), lg.w.end(), 0.0);
    std::fill(lg.b.begin(), lg.b.end(), 0.0);
  }
  std::fill(head.w.begin(), head.w.end(), 0.0);
  std::fill(head.b.begin(), head.b.end(), 0.0);
}

void ModelGrads::add_scaled(const ModelGrads& other, double scale) {
  for (std::size_t l = 0; l < net.size(); ++l) {
    for (std::size_t i = 0; i < net[l].w.size(); ++i)
      net[l].w[i] += scale * other.net[l].w[i];
    for (std::size_t i = 0; i < net[l].b.size(); ++i)
      net[l].b[i] += scale * other.net[l].b[i];
  }
  for (std::size_t i = 0; i < head.w.size(); ++i)
    head.w[i] += scale * other.head.w[i];
  for (std::size_t i = 0; i < head.b.size(); ++i)
    head.b[i] += scale * other.head.b[i];
}

void ModelGrads::scale(double s) {
  for (LayerGrad& lg : net) {
    for (double& x : lg.w) x *= s;
    for (double& x : lg.b) x *= s;
  }
  for (double& x : head.w) x *= s;
  for (double& x : head.b) x *= s;
}

ModelGrads zero_grads_like(const FeatureNet& net, const Head& head) {
  ModelGrads g;
  g.net.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    g.net[l].w.assign(net.layers[l].w.size(), 0.0);
    g.net[l].b.assign(net.layers[l].b.size(), 0.0);
  }
  g.head.w.assign(head.conv.w.size(), 0.0);
  g.head.b.assign(head.conv.b.size(), 0.0);
  return g;
}

std::vector<LayerGrad> unet_backward(const FeatureNet& net,
                                     const NetTrace& trace,
                                     const Tensor4& grad_features,
                                     Tensor4* grad_input) {
  const Topology& t = net.topo;
  const int n_convs = t.conv_count();
  if (static_cast<int>(trace.conv_in.size()) != n_convs) {
    throw std::invalid_argument("unet_backward: trace does not match net");
  }
  std::vector<LayerGrad> grads(n_convs);
  int li = n_convs - 1;

  auto back_conv = [&](Tensor4& g, bool need_input) {
    if (trace.conv_act[li]) g = relu_backward(trace.conv_out[li], g);
    ConvGrads cg =
        conv3d_backward(trace.conv_in[li], net.layers[li], g, need_input);
    grads[li].w = std::move(cg.w);
    grads[li].b = std::move(cg.b);
    g = std::move(cg.input);
    --li;
  };

  Tensor4 g = grad_features;
  std::vector<Tensor4> skip_grads(t.levels);
  if (t.with_upsampling) {
    for (int e = t.levels - 1; e >= 0; --e) {
      back_conv(g, true);
      back_conv(g, true);
      const int target = t.levels - 1 - e;
      const Dims& up_in = trace.up_in_dims[e];
      if (t.skip_connections) {
        const int skip_ch = t.enc_channels(target);
        const int carry_ch = g.c - skip_ch;
        Tensor4 carry(carry_ch, g.d, g.h, g.w);
        Tensor4 skip(skip_ch, g.d, g.h, g.w);
        std::copy_n(g.v.begin(), carry.v.size(), carry.v.begin());
        std::copy_n(g.v.begin() + carry.v.size(), skip.v.size(),
                    skip.v.begin());
        skip_grads[target] = std::move(skip);
        g = trilinear_up2_backward(carry, up_in.d, up_in.h, up_in.w);
      } else {
        g = trilinear_up2_backward(g, up_in.d, up_in.h, up_in.w);
      }
    }
  }
  back_conv(g, true);
  back_conv(g, true);
  for (int i = t.levels - 1; i >= 0; --i) {
    // pool input is the post-activation output of the level's second conv
    g = maxpool2_backward(trace.conv_out[2 * i + 1], g);
    if (t.with_upsampling && t.skip_connections) {
      const Tensor4& sg = skip_grads[i];
      for (std::size_t j = 0; j < g.v.size(); ++j) g.v[j] += sg.v[j];
    }
    back_conv(g, true);
    const bool need_input = (i > 0) || (grad_input != nullptr);
    back_conv(g, need_input);
  }
  if (grad_input) *grad_input = std::move(g);
  return grads;
}

std::vector<double> head_apply(const Head& head,
                               const std::vector<double>& pooled) {
  if (static_cast<int>(pooled.size()) != head.conv.in_ch) {
    throw std::invalid_argument("head_apply: feature length mismatch");
  }
  std::vector<double> logits(head.k());
  for (int c = 0; c < head.k(); ++c) {
    double acc = head.conv.b[c];
    const double* w = head.conv.w.data() +
                      static_cast<std::size_t>(c) * head.conv.in_ch;
    for (int f = 0; f < head.conv.in_ch; ++f) acc += w[f] * pooled[f];
    logits[c] = acc;
  }
  return logits;
}

HeadGrads head_backward(const Head& head, const std::vector<double>& pooled,
                        const std::vector<double>& grad_logits) {
  if (static_cast<int>(grad_logits.size()) != head.k() ||
      static_cast<int>(pooled.size()) != head.conv.in_ch) {
    throw std::invalid_argument("head_backward: shape mismatch");
  }
  HeadGrads g;
  g.w.assign(head.conv.w.size(), 0.0);
  g.b = grad_logits;
  g.pooled.assign(pooled.size(), 0.0);
  for (int c = 0; c < head.k(); ++c) {
    const double gl = grad_logits[c];
    const double* w = head.conv.w.data() +
                      static_cast<std::size_t>(c) * head.conv.in_ch;
    double* gw = g.w.data() + static_cast<std::size_t>(c) * head.conv.in_ch;
    for (int f = 0; f < head.conv.in_ch; ++f) {
      gw[f] = gl * pooled[f];
      g.pooled[f] += gl * w[f];
    }
  }
  return g;
}

void sgd_step(FeatureNet& net, Head& head, const ModelGrads& grads, double lr,
              double momentum, ModelGrads& velocity) {
  if (grads.net.size() != net.layers.size() ||
      velocity.net.size() != net.layers.size()) {
    throw std::invalid_argument("sgd_step: gradient/velocity layout mismatch");
  }
  auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                    std::vector<double>& v) {
    if (p.size() != g.size() || p.size() != v.size()) {
      throw std::invalid_argument("sgd_step: buffer shape mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    update(net.layers[l].w, grads.net[l].w, velocity.net[l].w);
    update(net.layers[l].b, grads.net[l].b, velocity.net[l].b);
  }
  update(head.conv.w, grads.head.w, velocity.head.w);
  update(head.conv.b, grads.head.b, velocity.head.b);
}

namespace {

json topology_to_json(const Topology& t) {
  return json{{"variant", variant_name(t.variant)},
              {"levels", t.levels},
              {"base_filters", t.base_filters},
              {"with_upsampling", t.with_upsampling},
              {"skip_connections", t.skip_connections},
              {"dense_post_relu", t.dense_post_relu},
              {"in_channels", t.in_channels}};
}

Topology topology_from_json(const json& j) {
  Topology t;
  t.variant = variant_from_name(j.at("variant").get<std::string>());
  t.levels = j.at("levels").get<int>();
  t.base_filters = j.at("base_filters").get<int>();
  t.with_upsampling = j.at("with_upsampling").get<bool>();
  t.skip_connections = j.at("skip_connections").get<bool>();
  t.dense_post_relu = j.at("dense_post_relu").get<bool>();
  t.in_channels = j.at("in_channels").get<int>();
  return t;
}

void append_params(std::vector<float>& out, const ConvLayer& layer) {
  for (double x : layer.w) out.push_back(static_cast<float>(x));
  for (double x : layer.b) out.push_back(static_cast<float>(x));
}

std::size_t consume_params(const std::vector<float>& in, std::size_t pos,
                           ConvLayer& layer) {
  for (double& x : layer.w) x = in.at(pos++);
  for (double& x : layer.b) x = in.at(pos++);
  return pos;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const FeatureNet& net,
                     const Head& head, int epoch, const json& extra) {
  std::vector<float> payload;
  for (const ConvLayer& layer : net.layers) append_params(payload, layer);
  append_params(payload, head.conv);

  json j;
  j["kind"] = "checkpoint";
  j["format_version"] = 1;
  j["topology"] = topology_to_json(net.topo);
  j["k"] = head.k();
  j["epoch"] = epoch;
  j["param_count"] = payload.size();
  if (!extra.is_null() && !extra.empty()) j["extra"] = extra;

  std::filesystem::path raw = stem;
  raw += ".f32raw";
  std::ofstream out(raw, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write checkpoint payload: " + raw.string());
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  std::filesystem::path side = stem;
  side += ".json";
  std::ofstream js(side);
  if (!js) {
    throw std::runtime_error("cannot write checkpoint sidecar: " + side.string());
  }
  js << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& stem_or_json) {
  std::filesystem::path side = stem_or_json;
  if (side.extension() != ".json") side += ".json";
  std::ifstream js(side);
  if (!js) {
    throw std::runtime_error("missing checkpoint sidecar: " + side.string());
  }
  json j;
  try {
    js >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad checkpoint sidecar " + side.string() + ": " +
                             e.what());
  }
  if (j.value("kind", "") != "checkpoint") {
    throw std::runtime_error(side.string() + " is not a checkpoint sidecar");
  }

  Checkpoint ck;
  const Topology topo = topology_from_json(j.at("topology"));
  ck.net.topo = topo;
  for (const ConvSpec& s : conv_schedule(topo)) {
    ck.net.layers.emplace_back(s.out_ch, s.in_ch, s.ksize);
  }
  ck.head.conv = ConvLayer(j.at("k").get<int>(), topo.feature_channels(), 1);
  ck.epoch = j.at("epoch").get<int>();
  if (j.contains("extra")) ck.extra = j["extra"];

  std::filesystem::path raw = side;
  raw.replace_extension(".f32raw");
  std::ifstream in(raw, std::ios::binary);
  if (!in) {
    throw std::runtime_error("missing checkpoint payload: " + raw.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const std::size_t expected = j.at("param_count").get<std::size_t>();
  if (bytes.size() != expected * sizeof(float)) {
    throw std::runtime_error("payload size mismatch: " + raw.string());
  }
  std::vector<float> payload(expected);
  std::memcpy(payload.data(), bytes.data(), bytes.size());

  std::size_t pos = 0;
  for (ConvLayer& layer : ck.net.layers) pos = consume_params(payload, pos, layer);
  pos = consume_params(payload, pos, ck.head.conv);
  if (pos != payload.size()) {
    throw std::runtime_error("checkpoint payload has trailing data: " +
                             raw.string());
  }
  return ck;
}

}  // namespace dcl
