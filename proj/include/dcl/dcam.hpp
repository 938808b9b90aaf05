#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "dcl/net.hpp"
#include "dcl/tensor.hpp"
#include "dcl/volume.hpp"

namespace dcl {

// Raised when a request is well-formed but outside what the model variant can
// deliver (maps to CLI exit code 2).
class DomainRefusal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense clustering activation map: the per-voxel cluster logits obtained by
// applying the classification head to dense features without lung pooling.
// Channels hold raw logits; display normalization happens only at export.
struct DCAM {
  Tensor4 logits;  // (k, D, H, W)
  std::string subject_id;
  int assigned_cluster = 0;  // argmax of the pooled-route logits
};

// Proposed variant only: the baseline has no full-resolution dense features,
// so the request is refused rather than upsampled.
DCAM compute_dcam(const FeatureNet& net, const Head& head,
                  const Subject& subject);

// One 8-bit binary PGM per slice along the axis ('z', 'y' or 'x'), named
// <id>_c<channel>_<axis><index>.pgm. Intensity is (logit - min)/(max - min)
// over the channel's masked voxels; out-of-mask voxels are black and a
// degenerate range renders mid-gray. Returns the written file names.
std::vector<std::string> export_slices(const DCAM& dcam, const Mask& mask,
                                       int channel, char axis,
                                       const std::filesystem::path& out_dir);

}  // namespace dcl
