#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "dcl/nn_ops.hpp"
#include "dcl/rng.hpp"
#include "gradcheck.hpp"

using namespace dcl;
using gradcheck::Probe;

namespace {

Tensor4 random_tensor(int c, int d, int h, int w, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
  Tensor4 t(c, d, h, w);
  for (double& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

ConvLayer random_layer(int out_c, int in_c, int k, Rng& rng) {
  ConvLayer l(out_c, in_c, k);
  for (double& x : l.w) x = rng.uniform(-0.5, 0.5);
  for (double& x : l.b) x = rng.uniform(-0.5, 0.5);
  return l;
}

double project(const std::vector<double>& proj, const Tensor4& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.v.size(); ++i) acc += proj[i] * t.v[i];
  return acc;
}

}  // namespace

TEST_CASE("conv3d all-ones kernel counts overlap under zero padding") {
  Tensor4 in(1, 3, 3, 3);
  for (double& x : in.v) x = 1.0;
  ConvLayer l(1, 1, 3);
  for (double& x : l.w) x = 1.0;
  const Tensor4 out = conv3d_forward(in, l);
  CHECK(out.at(0, 1, 1, 1) == doctest::Approx(27.0));
  CHECK(out.at(0, 0, 0, 0) == doctest::Approx(8.0));
  CHECK(out.at(0, 0, 1, 1) == doctest::Approx(18.0));
}

TEST_CASE("conv3d delta kernel is the identity") {
  Rng rng(7);
  const Tensor4 in = random_tensor(1, 4, 4, 4, rng);
  ConvLayer l(1, 1, 3);
  l.w[13] = 1.0;  // center tap (1,1,1)
  const Tensor4 out = conv3d_forward(in, l);
  for (std::size_t i = 0; i < in.v.size(); ++i) {
    CHECK(out.v[i] == doctest::Approx(in.v[i]).epsilon(1e-15));
  }
}

TEST_CASE("conv3d zero input returns the bias") {
  Tensor4 in(2, 4, 4, 4);
  ConvLayer l(3, 2, 3);
  l.b = {0.25, -1.5, 2.0};
  const Tensor4 out = conv3d_forward(in, l);
  for (int c = 0; c < 3; ++c) {
    for (int z = 0; z < 4; ++z) {
      CHECK(out.at(c, z, 1, 2) == doctest::Approx(l.b[c]));
    }
  }
}

TEST_CASE("conv3d rejects channel mismatch") {
  Tensor4 in(2, 4, 4, 4);
  ConvLayer l(1, 3, 3);
  CHECK_THROWS_AS(conv3d_forward(in, l), std::invalid_argument);
}

TEST_CASE("conv3d backward bias gradient is the spatial sum") {
  Rng rng(11);
  const Tensor4 in = random_tensor(2, 4, 4, 4, rng);
  const ConvLayer l = random_layer(3, 2, 3, rng);
  const Tensor4 gout = random_tensor(3, 4, 4, 4, rng);
  const ConvGrads g = conv3d_backward(in, l, gout);
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < gout.spatial(); ++i) s += gout.channel(c)[i];
    CHECK(g.b[c] == doctest::Approx(s).epsilon(1e-12));
  }
  const Tensor4 zero(3, 4, 4, 4);
  const ConvGrads gz = conv3d_backward(in, l, zero);
  for (double x : gz.w) CHECK(x == 0.0);
  for (double x : gz.input.v) CHECK(x == 0.0);
}

TEST_CASE("conv3d gradients match finite differences (3^3 and 1^3 kernels)") {
  for (int ksize : {3, 1}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(mix_seed(1000 + ksize, seed));
      Tensor4 in = random_tensor(1, 4, 4, 4, rng);
      ConvLayer l = random_layer(2, 1, ksize, rng);
      const auto proj = gradcheck::random_projection(
          static_cast<std::size_t>(2) * 4 * 4 * 4, rng);

      Tensor4 gout(2, 4, 4, 4);
      gout.v = proj;
      const ConvGrads g = conv3d_backward(in, l, gout);

      std::vector<double*> coords;
      std::vector<double> analytic;
      for (std::size_t i = 0; i < in.v.size(); ++i) {
        coords.push_back(&in.v[i]);
        analytic.push_back(g.input.v[i]);
      }
      for (std::size_t i = 0; i < l.w.size(); ++i) {
        coords.push_back(&l.w[i]);
        analytic.push_back(g.w[i]);
      }
      for (std::size_t i = 0; i < l.b.size(); ++i) {
        coords.push_back(&l.b[i]);
        analytic.push_back(g.b[i]);
      }
      const auto res = gradcheck::check(coords, analytic, [&] {
        return Probe{project(proj, conv3d_forward(in, l)), {}};
      });
      CHECK(res.skipped == 0);
      CHECK(res.max_rel_err <= gradcheck::kRelTol);
    }
  }
}

TEST_CASE("relu forward/backward and finite differences") {
  Rng rng(21);
  Tensor4 in = random_tensor(2, 4, 4, 4, rng);
  const Tensor4 out = relu_forward(in);
  for (std::size_t i = 0; i < in.v.size(); ++i) {
    CHECK(out.v[i] == (in.v[i] > 0 ? in.v[i] : 0.0));
  }
  const auto proj = gradcheck::random_projection(in.v.size(), rng);
  Tensor4 gout(2, 4, 4, 4);
  gout.v = proj;
  const Tensor4 gin = relu_backward(out, gout);

  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < in.v.size(); ++i) {
    coords.push_back(&in.v[i]);
    analytic.push_back(gin.v[i]);
  }
  const auto res = gradcheck::check(coords, analytic, [&] {
    Probe p;
    const Tensor4 o = relu_forward(in);
    p.value = project(proj, o);
    for (double x : in.v) p.signature.push_back(x > 0.0 ? 1 : 0);
    return p;
  });
  CHECK(res.ok());
}

TEST_CASE("maxpool picks block maxima and reports odd dims") {
  Tensor4 in(1, 2, 2, 2);
  std::iota(in.v.begin(), in.v.end(), 1.0);
  const Tensor4 out = maxpool2_forward(in);
  CHECK(out.c == 1);
  CHECK(out.d == 1);
  CHECK(out.at(0, 0, 0, 0) == 8.0);
  Tensor4 odd(1, 3, 2, 2);
  CHECK_THROWS_AS(maxpool2_forward(odd), std::invalid_argument);
}

TEST_CASE("maxpool backward routes gradient to the first argmax") {
  Tensor4 in(1, 2, 2, 2);
  in.v = {5, 5, 1, 1, 1, 1, 1, 1};  // tie on the first two entries
  Tensor4 gout(1, 1, 1, 1);
  gout.v = {2.0};
  const Tensor4 gin = maxpool2_backward(in, gout);
  CHECK(gin.v[0] == 2.0);
  CHECK(gin.v[1] == 0.0);
}

TEST_CASE("maxpool gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(mix_seed(31, seed));
    Tensor4 in = random_tensor(2, 4, 4, 4, rng);
    const auto proj = gradcheck::random_projection(
        static_cast<std::size_t>(2) * 2 * 2 * 2, rng);
    Tensor4 gout(2, 2, 2, 2);
    gout.v = proj;
    const Tensor4 gin = maxpool2_backward(in, gout);

    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < in.v.size(); ++i) {
      coords.push_back(&in.v[i]);
      analytic.push_back(gin.v[i]);
    }
    const auto res = gradcheck::check(coords, analytic, [&] {
      Probe p;
      const Tensor4 o = maxpool2_forward(in);
      p.value = project(proj, o);
      // argmax signature per block
      for (int c = 0; c < 2; ++c)
        for (int z = 0; z < 2; ++z)
          for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
              int best = 0;
              double bv = in.at(c, 2 * z, 2 * y, 2 * x);
              for (int t = 1; t < 8; ++t) {
                const double v = in.at(c, 2 * z + (t >> 2), 2 * y + ((t >> 1) & 1),
                                       2 * x + (t & 1));
                if (v > bv) {
                  bv = v;
                  best = t;
                }
              }
              p.signature.push_back(best);
            }
      return p;
    });
    CHECK(res.ok());
  }
}

TEST_CASE("trilinear upsampling matches the half-pixel profile") {
  Tensor4 in(1, 1, 1, 2);
  in.v = {0.0, 1.0};
  // 1x2 input is not upsampleable in z/y without clamping; dims become 2,2,4
  const Tensor4 out = trilinear_up2_forward(in);
  CHECK(out.d == 2);
  CHECK(out.h == 2);
  CHECK(out.w == 4);
  for (int z = 0; z < 2; ++z) {
    for (int y = 0; y < 2; ++y) {
      CHECK(out.at(0, z, y, 0) == doctest::Approx(0.0));
      CHECK(out.at(0, z, y, 1) == doctest::Approx(0.25));
      CHECK(out.at(0, z, y, 2) == doctest::Approx(0.75));
      CHECK(out.at(0, z, y, 3) == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("trilinear upsampling preserves constants") {
  Tensor4 in(2, 2, 2, 2);
  for (std::size_t i = 0; i < 8; ++i) in.v[i] = 0.7;
  for (std::size_t i = 8; i < 16; ++i) in.v[i] = -1.3;
  const Tensor4 out = trilinear_up2_forward(in);
  for (std::size_t i = 0; i < out.spatial(); ++i) {
    CHECK(out.channel(0)[i] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(out.channel(1)[i] == doctest::Approx(-1.3).epsilon(1e-15));
  }
}

TEST_CASE("trilinear backward is the transpose of the forward") {
  Rng rng(41);
  const Tensor4 x = random_tensor(2, 2, 3, 2, rng);
  const Tensor4 y = random_tensor(2, 4, 6, 4, rng);
  const Tensor4 up = trilinear_up2_forward(x);
  const Tensor4 down = trilinear_up2_backward(y, 2, 3, 2);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < up.v.size(); ++i) lhs += up.v[i] * y.v[i];
  for (std::size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * down.v[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("trilinear gradients match finite differences") {
  Rng rng(43);
  Tensor4 in = random_tensor(1, 2, 2, 2, rng);
  const auto proj = gradcheck::random_projection(
      static_cast<std::size_t>(1) * 4 * 4 * 4, rng);
  Tensor4 gout(1, 4, 4, 4);
  gout.v = proj;
  const Tensor4 gin = trilinear_up2_backward(gout, 2, 2, 2);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < in.v.size(); ++i) {
    coords.push_back(&in.v[i]);
    analytic.push_back(gin.v[i]);
  }
  const auto res = gradcheck::check(coords, analytic, [&] {
    return Probe{project(proj, trilinear_up2_forward(in)), {}};
  });
  CHECK(res.skipped == 0);
  CHECK(res.max_rel_err <= gradcheck::kRelTol);
}

TEST_CASE("masked_avg_pool basics") {
  Rng rng(51);
  Tensor4 feat(3, 2, 2, 2);
  for (std::size_t i = 0; i < 8; ++i) feat.channel(0)[i] = 0.4;
  Mask full({2, 2, 2}, 1);
  for (std::size_t i = 0; i < 8; ++i) feat.channel(1)[i] = full.values[i];
  feat.channel(2)[1] = 1.0;
  feat.channel(2)[3] = 3.0;

  const auto pooled = masked_avg_pool(feat, full);
  CHECK(pooled[0] == doctest::Approx(0.4));
  CHECK(pooled[1] == doctest::Approx(1.0));

  Mask two({2, 2, 2});
  two.values[1] = 1;
  two.values[3] = 1;
  CHECK(masked_avg_pool(feat, two)[2] == doctest::Approx(2.0));

  Mask empty({2, 2, 2});
  CHECK_THROWS_AS(masked_avg_pool(feat, empty), std::invalid_argument);
}

TEST_CASE("masked_avg_pool gradients match finite differences") {
  Rng rng(53);
  Tensor4 feat = random_tensor(2, 2, 2, 2, rng);
  Mask m({2, 2, 2});
  m.values = {1, 0, 1, 1, 0, 0, 1, 0};
  const auto proj = gradcheck::random_projection(2, rng);
  const Tensor4 gin = masked_avg_pool_backward(proj, m, 2);
  std::vector<double*> coords;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < feat.v.size(); ++i) {
    coords.push_back(&feat.v[i]);
    analytic.push_back(gin.v[i]);
  }
  const auto res = gradcheck::check(coords, analytic, [&] {
    const auto pooled = masked_avg_pool(feat, m);
    return Probe{proj[0] * pooled[0] + proj[1] * pooled[1], {}};
  });
  CHECK(res.skipped == 0);
  CHECK(res.max_rel_err <= gradcheck::kRelTol);
}

TEST_CASE("downsample_mask2 keeps any-inside blocks") {
  Mask m({4, 4, 4});
  m.set(0, 0, 0, true);
  m.set(3, 3, 3, true);
  const Mask d = downsample_mask2(m);
  CHECK(d.dims == Dims{2, 2, 2});
  CHECK(d.at(0, 0, 0));
  CHECK(d.at(1, 1, 1));
  CHECK_FALSE(d.at(0, 1, 1));
}

TEST_CASE("softmax_xent closed forms") {
  const XentResult uniform = softmax_xent({0.3, 0.3, 0.3, 0.3, 0.3, 0.3}, 2);
  CHECK(uniform.loss == doctest::Approx(std::log(6.0)).epsilon(1e-12));

  const XentResult r = softmax_xent({1.0, 0.0}, 0);
  CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_xent({1.0, 0.0}, 2), std::invalid_argument);
  CHECK_THROWS_AS(softmax_xent({1.0, 0.0}, -1), std::invalid_argument);
}

TEST_CASE("softmax_xent gradient rows sum to zero and match FD") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(mix_seed(61, seed));
    std::vector<double> logits(6);
    for (double& l : logits) l = rng.uniform(-3.0, 3.0);
    const int label = static_cast<int>(rng.bounded(6));
    const XentResult r = softmax_xent(logits, label);

    double gsum = 0.0;
    for (double g : r.grad_logits) gsum += g;
    CHECK(std::fabs(gsum) < 1e-12);
    CHECK(r.loss >= 0.0);
    const auto [lo, hi] = std::minmax_element(logits.begin(), logits.end());
    CHECK(r.loss <= std::log(6.0) + (*hi - *lo) + 1e-12);

    std::vector<double*> coords;
    for (double& l : logits) coords.push_back(&l);
    const auto res = gradcheck::check(coords, r.grad_logits, [&] {
      return Probe{softmax_xent(logits, label).loss, {}};
    });
    CHECK(res.skipped == 0);
    CHECK(res.max_rel_err <= gradcheck::kRelTol);
  }
}
