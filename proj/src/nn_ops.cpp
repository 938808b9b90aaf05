#include "dcl/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dcl {

namespace {

void check_channels(const Tensor4& input, const ConvLayer& layer) {
  if (input.c != layer.in_ch) {
    throw std::invalid_argument(
        "conv3d: channel mismatch (input " + std::to_string(input.c) +
        ", layer expects " + std::to_string(layer.in_ch) + ")");
  }
  if (layer.ksize != 1 && layer.ksize != 3) {
    throw std::invalid_argument("conv3d: kernel size must be 1 or 3");
  }
}

// Copies a tensor into a zero-padded (pad 1) buffer, one padded image per
// channel, so the 3^3 stencil needs no border handling.
std::vector<double> pad1(const Tensor4& t) {
  const int pd = t.d + 2, ph = t.h + 2, pw = t.w + 2;
  std::vector<double> out(static_cast<std::size_t>(t.c) * pd * ph * pw, 0.0);
  for (int ci = 0; ci < t.c; ++ci) {
    const double* src = t.channel(ci);
    double* dst = out.data() + static_cast<std::size_t>(ci) * pd * ph * pw;
    for (int z = 0; z < t.d; ++z) {
      for (int y = 0; y < t.h; ++y) {
        std::copy_n(src + (static_cast<std::size_t>(z) * t.h + y) * t.w, t.w,
                    dst + ((static_cast<std::size_t>(z + 1)) * ph + (y + 1)) * pw + 1);
      }
    }
  }
  return out;
}

}  // namespace

Tensor4 conv3d_forward(const Tensor4& input, const ConvLayer& layer) {
  check_channels(input, layer);
  const int D = input.d, H = input.h, W = input.w;
  Tensor4 out(layer.out_ch, D, H, W);

  if (layer.ksize == 1) {
    for (int co = 0; co < layer.out_ch; ++co) {
      double* o = out.channel(co);
      std::fill_n(o, out.spatial(), layer.b[co]);
      for (int ci = 0; ci < input.c; ++ci) {
        const double wv = layer.w[static_cast<std::size_t>(co) * input.c + ci];
        const double* in = input.channel(ci);
        for (std::size_t i = 0; i < out.spatial(); ++i) o[i] += wv * in[i];
      }
    }
    return out;
  }

  const std::vector<double> pad = pad1(input);
  const int ph = H + 2, pw = W + 2;
  const std::size_t chan_stride = static_cast<std::size_t>(D + 2) * ph * pw;
  for (int co = 0; co < layer.out_ch; ++co) {
    double* ochan = out.channel(co);
    std::fill_n(ochan, out.spatial(), layer.b[co]);
    for (int ci = 0; ci < input.c; ++ci) {
      const double* wk =
          layer.w.data() + (static_cast<std::size_t>(co) * input.c + ci) * 27;
      const double* pchan = pad.data() + ci * chan_stride;
      for (int z = 0; z < D; ++z) {
        for (int y = 0; y < H; ++y) {
          const double* rows[9];
          for (int dz = 0; dz < 3; ++dz) {
            for (int dy = 0; dy < 3; ++dy) {
              rows[dz * 3 + dy] =
                  pchan + (static_cast<std::size_t>(z + dz) * ph + (y + dy)) * pw;
            }
          }
          double* o = ochan + (static_cast<std::size_t>(z) * H + y) * W;
          for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int t = 0; t < 9; ++t) {
              const double* r = rows[t] + x;
              const double* wt = wk + t * 3;
              acc += wt[0] * r[0] + wt[1] * r[1] + wt[2] * r[2];
            }
            o[x] += acc;
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv3d_backward(const Tensor4& input, const ConvLayer& layer,
                          const Tensor4& grad_out, bool need_grad_input) {
  check_channels(input, layer);
  if (grad_out.c != layer.out_ch || grad_out.d != input.d ||
      grad_out.h != input.h || grad_out.w != input.w) {
    throw std::invalid_argument("conv3d_backward: grad_out shape mismatch");
  }
  const int D = input.d, H = input.h, W = input.w;
  ConvGrads g;
  g.w.assign(layer.w.size(), 0.0);
  g.b.assign(layer.b.size(), 0.0);

  for (int co = 0; co < layer.out_ch; ++co) {
    const double* gchan = grad_out.channel(co);
    double s = 0.0;
    for (std::size_t i = 0; i < grad_out.spatial(); ++i) s += gchan[i];
    g.b[co] = s;
  }

  if (layer.ksize == 1) {
    for (int co = 0; co < layer.out_ch; ++co) {
      const double* gchan = grad_out.channel(co);
      for (int ci = 0; ci < input.c; ++ci) {
        const double* in = input.channel(ci);
        double acc = 0.0;
        for (std::size_t i = 0; i < grad_out.spatial(); ++i)
          acc += gchan[i] * in[i];
        g.w[static_cast<std::size_t>(co) * input.c + ci] = acc;
      }
    }
    if (need_grad_input) {
      g.input = Tensor4(input.c, D, H, W);
      for (int ci = 0; ci < input.c; ++ci) {
        double* gi = g.input.channel(ci);
        for (int co = 0; co < layer.out_ch; ++co) {
          const double wv = layer.w[static_cast<std::size_t>(co) * input.c + ci];
          const double* gchan = grad_out.channel(co);
          for (std::size_t i = 0; i < g.input.spatial(); ++i)
            gi[i] += wv * gchan[i];
        }
      }
    }
    return g;
  }

  const int ph = H + 2, pw = W + 2;
  const std::size_t chan_stride = static_cast<std::size_t>(D + 2) * ph * pw;

  {
    // grad_w[co][ci][t] = <grad_out[co], input[ci] shifted by tap t>
    const std::vector<double> pad = pad1(input);
    for (int co = 0; co < layer.out_ch; ++co) {
      const double* gchan = grad_out.channel(co);
      for (int ci = 0; ci < input.c; ++ci) {
        const double* pchan = pad.data() + ci * chan_stride;
        double* gw =
            g.w.data() + (static_cast<std::size_t>(co) * input.c + ci) * 27;
        for (int z = 0; z < D; ++z) {
          for (int y = 0; y < H; ++y) {
            const double* grow = gchan + (static_cast<std::size_t>(z) * H + y) * W;
            for (int t = 0; t < 9; ++t) {
              const int dz = t / 3, dy = t % 3;
              const double* r =
                  pchan + (static_cast<std::size_t>(z + dz) * ph + (y + dy)) * pw;
              double a0 = 0.0, a1 = 0.0, a2 = 0.0;
              for (int x = 0; x < W; ++x) {
                const double gv = grow[x];
                a0 += gv * r[x];
                a1 += gv * r[x + 1];
                a2 += gv * r[x + 2];
              }
              gw[t * 3 + 0] += a0;
              gw[t * 3 + 1] += a1;
              gw[t * 3 + 2] += a2;
            }
          }
        }
      }
    }
  }

  if (need_grad_input) {
    // grad_input = correlation of padded grad_out with the flipped kernel;
    // same stencil as the forward pass.
    const std::vector<double> padg = pad1(grad_out);
    g.input = Tensor4(input.c, D, H, W);
    for (int ci = 0; ci < input.c; ++ci) {
      double* gichan = g.input.channel(ci);
      for (int co = 0; co < layer.out_ch; ++co) {
        const double* wk =
            layer.w.data() + (static_cast<std::size_t>(co) * input.c + ci) * 27;
        const double* pchan = padg.data() + co * chan_stride;
        for (int z = 0; z < D; ++z) {
          for (int y = 0; y < H; ++y) {
            const double* rows[9];
            for (int dz = 0; dz < 3; ++dz) {
              for (int dy = 0; dy < 3; ++dy) {
                rows[dz * 3 + dy] =
                    pchan + (static_cast<std::size_t>(z + dz) * ph + (y + dy)) * pw;
              }
            }
            double* o = gichan + (static_cast<std::size_t>(z) * H + y) * W;
            for (int x = 0; x < W; ++x) {
              double acc = 0.0;
              for (int t = 0; t < 9; ++t) {
                const double* r = rows[t] + x;
                // flipped tap: weight index 26 - (t*3 + dx)
                const double* wt = wk + (26 - t * 3);
                acc += wt[0] * r[0] + wt[-1] * r[1] + wt[-2] * r[2];
              }
              o[x] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor4 relu_forward(const Tensor4& input) {
  Tensor4 out = input;
  relu_forward_inplace(out);
  return out;
}

void relu_forward_inplace(Tensor4& t) {
  for (double& x : t.v) x = x > 0.0 ? x : 0.0;
}

Tensor4 relu_backward(const Tensor4& output, const Tensor4& grad_out) {
  if (!output.same_shape(grad_out)) {
    throw std::invalid_argument("relu_backward: shape mismatch");
  }
  Tensor4 g(output.c, output.d, output.h, output.w);
  for (std::size_t i = 0; i < g.v.size(); ++i) {
    g.v[i] = output.v[i] > 0.0 ? grad_out.v[i] : 0.0;
  }
  return g;
}

Tensor4 maxpool2_forward(const Tensor4& input) {
  if (input.d % 2 || input.h % 2 || input.w % 2) {
    throw std::invalid_argument("maxpool2: spatial dims must be even");
  }
  Tensor4 out(input.c, input.d / 2, input.h / 2, input.w / 2);
  for (int c = 0; c < input.c; ++c) {
    for (int z = 0; z < out.d; ++z) {
      for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
          double best = input.at(c, 2 * z, 2 * y, 2 * x);
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double v = input.at(c, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                if (v > best) best = v;
              }
          out.at(c, z, y, x) = best;
        }
      }
    }
  }
  return out;
}

Tensor4 maxpool2_backward(const Tensor4& input, const Tensor4& grad_out) {
  if (grad_out.c != input.c || grad_out.d != input.d / 2 ||
      grad_out.h != input.h / 2 || grad_out.w != input.w / 2) {
    throw std::invalid_argument("maxpool2_backward: shape mismatch");
  }
  Tensor4 g(input.c, input.d, input.h, input.w);
  for (int c = 0; c < input.c; ++c) {
    for (int z = 0; z < grad_out.d; ++z) {
      for (int y = 0; y < grad_out.h; ++y) {
        for (int x = 0; x < grad_out.w; ++x) {
          // first index in scan order wins ties
          double best = input.at(c, 2 * z, 2 * y, 2 * x);
          int bz = 0, by = 0, bx = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double v = input.at(c, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                if (v > best) {
                  best = v;
                  bz = dz;
                  by = dy;
                  bx = dx;
                }
              }
          g.at(c, 2 * z + bz, 2 * y + by, 2 * x + bx) += grad_out.at(c, z, y, x);
        }
      }
    }
  }
  return g;
}

namespace {

// 1-D half-pixel sampling table for x2 upsampling: out[i] mixes in[i0]*(1-f)
// and in[i0+1]*f, indices clamped at the borders.
struct UpTap {
  int i0, i1;
  double w0, w1;
};

std::vector<UpTap> up2_taps(int in_n) {
  std::vector<UpTap> taps(2 * in_n);
  for (int o = 0; o < 2 * in_n; ++o) {
    const double s = (o + 0.5) / 2.0 - 0.5;
    double fl = std::floor(s);
    int i0 = static_cast<int>(fl);
    int i1 = i0 + 1;
    double f = s - fl;
    i0 = std::clamp(i0, 0, in_n - 1);
    i1 = std::clamp(i1, 0, in_n - 1);
    taps[o] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace

Tensor4 trilinear_up2_forward(const Tensor4& input) {
  const auto tz = up2_taps(input.d);
  const auto ty = up2_taps(input.h);
  const auto tx = up2_taps(input.w);
  Tensor4 out(input.c, 2 * input.d, 2 * input.h, 2 * input.w);
  for (int c = 0; c < input.c; ++c) {
    for (int z = 0; z < out.d; ++z) {
      const UpTap& az = tz[z];
      for (int y = 0; y < out.h; ++y) {
        const UpTap& ay = ty[y];
        for (int x = 0; x < out.w; ++x) {
          const UpTap& ax = tx[x];
          double v = 0.0;
          v += az.w0 * (ay.w0 * (ax.w0 * input.at(c, az.i0, ay.i0, ax.i0) +
                                 ax.w1 * input.at(c, az.i0, ay.i0, ax.i1)) +
                        ay.w1 * (ax.w0 * input.at(c, az.i0, ay.i1, ax.i0) +
                                 ax.w1 * input.at(c, az.i0, ay.i1, ax.i1)));
          v += az.w1 * (ay.w0 * (ax.w0 * input.at(c, az.i1, ay.i0, ax.i0) +
                                 ax.w1 * input.at(c, az.i1, ay.i0, ax.i1)) +
                        ay.w1 * (ax.w0 * input.at(c, az.i1, ay.i1, ax.i0) +
                                 ax.w1 * input.at(c, az.i1, ay.i1, ax.i1)));
          out.at(c, z, y, x) = v;
        }
      }
    }
  }
  return out;
}

Tensor4 trilinear_up2_backward(const Tensor4& grad_out, int in_d, int in_h,
                               int in_w) {
  if (grad_out.d != 2 * in_d || grad_out.h != 2 * in_h || grad_out.w != 2 * in_w) {
    throw std::invalid_argument("trilinear_up2_backward: shape mismatch");
  }
  const auto tz = up2_taps(in_d);
  const auto ty = up2_taps(in_h);
  const auto tx = up2_taps(in_w);
  Tensor4 g(grad_out.c, in_d, in_h, in_w);
  for (int c = 0; c < grad_out.c; ++c) {
    for (int z = 0; z < grad_out.d; ++z) {
      const UpTap& az = tz[z];
      for (int y = 0; y < grad_out.h; ++y) {
        const UpTap& ay = ty[y];
        for (int x = 0; x < grad_out.w; ++x) {
          const UpTap& ax = tx[x];
          const double gv = grad_out.at(c, z, y, x);
          g.at(c, az.i0, ay.i0, ax.i0) += gv * az.w0 * ay.w0 * ax.w0;
          g.at(c, az.i0, ay.i0, ax.i1) += gv * az.w0 * ay.w0 * ax.w1;
          g.at(c, az.i0, ay.i1, ax.i0) += gv * az.w0 * ay.w1 * ax.w0;
          g.at(c, az.i0, ay.i1, ax.i1) += gv * az.w0 * ay.w1 * ax.w1;
          g.at(c, az.i1, ay.i0, ax.i0) += gv * az.w1 * ay.w0 * ax.w0;
          g.at(c, az.i1, ay.i0, ax.i1) += gv * az.w1 * ay.w0 * ax.w1;
          g.at(c, az.i1, ay.i1, ax.i0) += gv * az.w1 * ay.w1 * ax.w0;
          g.at(c, az.i1, ay.i1, ax.i1) += gv * az.w1 * ay.w1 * ax.w1;
        }
      }
    }
  }
  return g;
}

std::vector<double> masked_avg_pool(const Tensor4& features, const Mask& mask) {
  if (mask.dims.d != features.d || mask.dims.h != features.h ||
      mask.dims.w != features.w) {
    throw std::invalid_argument("masked_avg_pool: mask/feature dims differ");
  }
  const std::size_t count = mask.set_count();
  if (count == 0) {
    throw std::invalid_argument("masked_avg_pool: empty mask");
  }
  std::vector<double> pooled(features.c, 0.0);
  for (int c = 0; c < features.c; ++c) {
    const double* chan = features.channel(c);
    double s = 0.0;
    for (std::size_t i = 0; i < features.spatial(); ++i) {
      if (mask.values[i]) s += chan[i];
    }
    pooled[c] = s / static_cast<double>(count);
  }
  return pooled;
}

Tensor4 masked_avg_pool_backward(const std::vector<double>& grad_pooled,
                                 const Mask& mask, int channels) {
  if (static_cast<int>(grad_pooled.size()) != channels) {
    throw std::invalid_argument("masked_avg_pool_backward: channel mismatch");
  }
  const std::size_t count = mask.set_count();
  if (count == 0) {
    throw std::invalid_argument("masked_avg_pool_backward: empty mask");
  }
  Tensor4 g(channels, mask.dims.d, mask.dims.h, mask.dims.w);
  for (int c = 0; c < channels; ++c) {
    const double gv = grad_pooled[c] / static_cast<double>(count);
    double* chan = g.channel(c);
    for (std::size_t i = 0; i < g.spatial(); ++i) {
      if (mask.values[i]) chan[i] = gv;
    }
  }
  return g;
}

Mask downsample_mask2(const Mask& mask) {
  if (mask.dims.d % 2 || mask.dims.h % 2 || mask.dims.w % 2) {
    throw std::invalid_argument("downsample_mask2: dims must be even");
  }
  Mask out({mask.dims.d / 2, mask.dims.h / 2, mask.dims.w / 2});
  for (int z = 0; z < out.dims.d; ++z) {
    for (int y = 0; y < out.dims.h; ++y) {
      for (int x = 0; x < out.dims.w; ++x) {
        bool any = false;
        for (int dz = 0; dz < 2 && !any; ++dz)
          for (int dy = 0; dy < 2 && !any; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              if (mask.at(2 * z + dz, 2 * y + dy, 2 * x + dx)) {
                any = true;
                break;
              }
            }
        out.set(z, y, x, any);
      }
    }
  }
  return out;
}

XentResult softmax_xent(const std::vector<double>& logits, int label) {
  const int k = static_cast<int>(logits.size());
  if (label < 0 || label >= k) {
    throw std::invalid_argument("softmax_xent: label out of range");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - m);
  XentResult r;
  r.loss = std::log(denom) - (logits[label] - m);
  r.grad_logits.resize(k);
  for (int j = 0; j < k; ++j) {
    r.grad_logits[j] = std::exp(logits[j] - m) / denom - (j == label ? 1.0 : 0.0);
  }
  return r;
}

}  // namespace dcl
