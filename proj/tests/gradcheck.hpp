#pragma once

// Central finite-difference gradient checking (float64, step 1e-3).
//
// FD is only a valid derivative oracle where the function is smooth across
// the +/-h neighborhood. ReLU and max-pooling are piecewise linear, so each
// probe captures a "smoothness signature" (ReLU activation pattern and pool
// argmax choices); coordinates whose signature differs between the two
// evaluations straddle a kink and are excluded from the comparison. The
// excluded fraction is reported and must stay small.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dcl/rng.hpp"

namespace gradcheck {

constexpr double kStep = 1e-3;
constexpr double kRelTol = 1e-4;

struct Probe {
  double value = 0.0;                   // scalar objective
  std::vector<std::int32_t> signature;  // smoothness signature (may be empty)
};

struct Result {
  int checked = 0;
  int skipped = 0;
  double max_rel_err = 0.0;
  int worst_coord = -1;

  void merge(const Result& o) {
    checked += o.checked;
    skipped += o.skipped;
    if (o.max_rel_err > max_rel_err) {
      max_rel_err = o.max_rel_err;
      worst_coord = o.worst_coord;
    }
  }
  bool ok(double max_skip_fraction = 0.05) const {
    const int total = checked + skipped;
    return checked > 0 && max_rel_err <= kRelTol &&
           skipped <= static_cast<int>(max_skip_fraction * total) + 1;
  }
};

inline double rel_err(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), 1e-6});
  return std::fabs(a - b) / scale;
}

// Serial FD sweep over coords[begin..end). The eval closure and the coord
// pointers must refer to the same mutable state; every probe restores the
// coordinate it perturbed. To parallelize, run separate sweeps over disjoint
// ranges of independent clones and merge the results.
inline Result check(const std::vector<double*>& coords,
                    const std::vector<double>& analytic,
                    const std::function<Probe()>& eval, int begin = 0,
                    int end = -1) {
  Result res;
  const int n = static_cast<int>(coords.size());
  if (end < 0) end = n;
  for (int i = begin; i < end; ++i) {
    double* p = coords[i];
    const double orig = *p;
    *p = orig + kStep;
    const Probe plus = eval();
    *p = orig - kStep;
    const Probe minus = eval();
    *p = orig;
    if (plus.signature != minus.signature) {
      ++res.skipped;
      continue;
    }
    const double fd = (plus.value - minus.value) / (2.0 * kStep);
    ++res.checked;
    const double e = rel_err(analytic[i], fd);
    if (e > res.max_rel_err) {
      res.max_rel_err = e;
      res.worst_coord = i;
    }
  }
  return res;
}

// Random projection weights making a scalar objective out of a tensor-valued
// op, so d(objective)/d(output) is the projection itself.
inline std::vector<double> random_projection(std::size_t n, dcl::Rng& rng) {
  std::vector<double> proj(n);
  for (double& x : proj) x = rng.uniform(-1.0, 1.0);
  return proj;
}

}  // namespace gradcheck
