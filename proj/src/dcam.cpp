#include "dcl/dcam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "dcl/nn_ops.hpp"

namespace dcl {

DCAM compute_dcam(const FeatureNet& net, const Head& head,
                  const Subject& subject) {
  if (net.topo.downsample_factor() != 1) {
    throw DomainRefusal(
        "dCAM requires full-resolution dense features; the baseline variant "
        "emits features at 1/" +
        std::to_string(net.topo.downsample_factor()) +
        " resolution and cannot produce them");
  }
  if (head.in_channels() != net.topo.feature_channels()) {
    throw std::invalid_argument("compute_dcam: head/feature channel mismatch");
  }
  const Tensor4 dense = unet_forward(net, subject.volume);
  DCAM out;
  out.subject_id = subject.id;
  out.logits = conv3d_forward(dense, head.conv);  // per-voxel head application

  const std::vector<double> pooled = masked_avg_pool(dense, subject.mask);
  const std::vector<double> logits = head_apply(head, pooled);
  out.assigned_cluster = static_cast<int>(
      std::max_element(logits.begin(), logits.end()) - logits.begin());
  return out;
}

namespace {

void write_pgm(const std::filesystem::path& path, int rows, int cols,
               const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "P5\n" << cols << " " << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

}  // namespace

std::vector<std::string> export_slices(const DCAM& dcam, const Mask& mask,
                                       int channel, char axis,
                                       const std::filesystem::path& out_dir) {
  const Tensor4& t = dcam.logits;
  if (channel < 0 || channel >= t.c) {
    throw std::invalid_argument("export_slices: channel out of range");
  }
  if (axis != 'z' && axis != 'y' && axis != 'x') {
    throw std::invalid_argument("export_slices: axis must be z, y or x");
  }
  if (mask.dims.d != t.d || mask.dims.h != t.h || mask.dims.w != t.w) {
    throw std::invalid_argument("export_slices: mask dims mismatch");
  }
  std::filesystem::create_directories(out_dir);

  // normalization window over the channel's masked voxels
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  const double* chan = t.channel(channel);
  for (std::size_t i = 0; i < t.spatial(); ++i) {
    if (!mask.values[i]) continue;
    lo = std::min(lo, chan[i]);
    hi = std::max(hi, chan[i]);
  }
  const bool degenerate = !(hi - lo > 0.0);
  auto shade = [&](int z, int y, int x) -> std::uint8_t {
    if (!mask.at(z, y, x)) return 0;
    if (degenerate) return 128;
    const double v = (t.at(channel, z, y, x) - lo) / (hi - lo);
    return static_cast<std::uint8_t>(std::lround(255.0 * v));
  };

  const int n_slices = axis == 'z' ? t.d : (axis == 'y' ? t.h : t.w);
  const int rows = axis == 'z' ? t.h : t.d;
  const int cols = axis == 'x' ? t.h : t.w;
  std::vector<std::string> written;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(rows) * cols);
  char name[128];
  for (int s = 0; s < n_slices; ++s) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        std::uint8_t px = 0;
        if (axis == 'z') px = shade(s, r, c);
        else if (axis == 'y') px = shade(r, s, c);
        else px = shade(r, c, s);
        pixels[static_cast<std::size_t>(r) * cols + c] = px;
      }
    }
    std::snprintf(name, sizeof(name), "%s_c%d_%c%03d.pgm",
                  dcam.subject_id.c_str(), channel, axis, s);
    write_pgm(out_dir / name, rows, cols, pixels);
    written.emplace_back(name);
  }
  return written;
}

}  // namespace dcl
