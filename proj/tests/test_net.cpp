#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dcl/net.hpp"
#include "dcl/pipeline.hpp"
#include "dcl/rng.hpp"
#include "net_check.hpp"

using namespace dcl;

namespace {

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("init is deterministic per seed and fan-in bounded") {
  const Topology topo = Topology::proposed(3, 8);
  const FeatureNet a = make_feature_net(topo, 5);
  const FeatureNet b = make_feature_net(topo, 5);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].w == b.layers[l].w);
    CHECK(a.layers[l].b == b.layers[l].b);
    const double bound =
        std::sqrt(1.0 / (a.layers[l].in_ch * std::pow(a.layers[l].ksize, 3)));
    for (double x : a.layers[l].w) {
      CHECK(std::fabs(x) <= bound);
    }
    for (double x : a.layers[l].b) {
      CHECK(std::fabs(x) <= bound);
    }
  }
  const FeatureNet c = make_feature_net(topo, 6);
  bool any_diff = false;
  for (std::size_t l = 0; l < a.layers.size() && !any_diff; ++l) {
    any_diff = a.layers[l].w != c.layers[l].w;
  }
  CHECK(any_diff);
}

TEST_CASE("proposed net keeps spatial dims at every accepted size") {
  const Topology topo = Topology::proposed(3, 4);
  const FeatureNet net = make_feature_net(topo, 1);
  for (int n : {8, 16, 24}) {
    Volume v({n, n, n}, 0.25f);
    const Tensor4 feat = unet_forward(net, v);
    CHECK(feat.c == 4);
    CHECK(feat.d == n);
    CHECK(feat.h == n);
    CHECK(feat.w == n);
  }
}

TEST_CASE("baseline net reduces 16^3 to a single voxel with 4x base filters") {
  const Topology topo = Topology::baseline(4, 8);
  CHECK(topo.feature_channels() == 32);
  CHECK(topo.downsample_factor() == 16);
  const FeatureNet net = make_feature_net(topo, 2);
  Volume v({16, 16, 16}, 0.5f);
  const Tensor4 feat = unet_forward(net, v);
  CHECK(feat.c == 32);
  CHECK(feat.d == 1);
  CHECK(feat.h == 1);
  CHECK(feat.w == 1);
}

TEST_CASE("forward is deterministic") {
  const FeatureNet net = make_feature_net(Topology::proposed(2, 4), 3);
  Rng rng(77);
  Volume v({8, 8, 8});
  for (float& x : v.values) x = static_cast<float>(rng.uniform());
  const Tensor4 a = unet_forward(net, v);
  const Tensor4 b = unet_forward(net, v);
  CHECK(a.v == b.v);
}

TEST_CASE("ingestion rejects bad dims") {
  const FeatureNet net = make_feature_net(Topology::proposed(3, 4), 3);
  Volume v12({12, 12, 12}, 0.1f);
  CHECK_THROWS_WITH_AS(unet_forward(net, v12), doctest::Contains("divisible"),
                       std::invalid_argument);
  Volume v4({4, 4, 4}, 0.1f);
  CHECK_THROWS_AS(unet_forward(net, v4), std::invalid_argument);
}

TEST_CASE("skip connections change the output") {
  Volume v({8, 8, 8});
  Rng rng(78);
  for (float& x : v.values) x = static_cast<float>(rng.uniform());
  const FeatureNet with = make_feature_net(Topology::proposed(2, 4, true), 4);
  Topology no_skips = Topology::proposed(2, 4, false);
  const FeatureNet without = make_feature_net(no_skips, 4);
  const Tensor4 a = unet_forward(with, v);
  const Tensor4 b = unet_forward(without, v);
  CHECK(a.same_shape(b));
  CHECK(a.v != b.v);
}

TEST_CASE("head apply closed forms") {
  Head h;
  h.conv = ConvLayer(4, 4, 1);
  for (int i = 0; i < 4; ++i) h.conv.w[i * 4 + i] = 1.0;
  const std::vector<double> pooled{0.1, -0.2, 0.3, 0.4};
  CHECK(head_apply(h, pooled) == pooled);

  Head zero;
  zero.conv = ConvLayer(2, 4, 1);
  zero.conv.b = {0.5, -0.5};
  const auto logits = head_apply(zero, pooled);
  CHECK(logits[0] == 0.5);
  CHECK(logits[1] == -0.5);

  Head ones;
  ones.conv = ConvLayer(2, 4, 1);
  for (int f = 0; f < 4; ++f) ones.conv.w[f] = 1.0;
  const auto l2 = head_apply(ones, {0.5, 0.5, 0.5, 0.5});
  CHECK(l2[0] == doctest::Approx(2.0));

  CHECK_THROWS_AS(head_apply(ones, {1.0}), std::invalid_argument);
}

TEST_CASE("pooled head equals lung-mean of the voxelwise head (affine identity)") {
  Rng rng(91);
  const int F = 5, k = 3;
  Head head = make_head(F, k, 9);
  Tensor4 feat(F, 4, 4, 4);
  for (double& x : feat.v) x = rng.uniform(-2.0, 2.0);
  Mask mask({4, 4, 4});
  for (auto& b : mask.values) b = rng.uniform() < 0.5 ? 1 : 0;
  mask.values[7] = 1;

  const auto pooled_logits = head_apply(head, masked_avg_pool(feat, mask));
  const Tensor4 voxel_logits = conv3d_forward(feat, head.conv);
  for (int c = 0; c < k; ++c) {
    double mean = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < voxel_logits.spatial(); ++i) {
      if (mask.values[i]) {
        mean += voxel_logits.channel(c)[i];
        ++cnt;
      }
    }
    mean /= static_cast<double>(cnt);
    CHECK(gradcheck::rel_err(mean, pooled_logits[c]) < 1e-5);
  }
}

TEST_CASE("sgd_step recurrences") {
  Topology topo = Topology::proposed(1, 1);
  topo.in_channels = 1;
  FeatureNet net = make_feature_net(topo, 3);
  Head head = make_head(topo.feature_channels(), 2, 3);
  ModelGrads vel = zero_grads_like(net, head);
  ModelGrads g = zero_grads_like(net, head);

  net.layers[0].w[0] = 1.0;
  g.net[0].w[0] = 0.25;
  sgd_step(net, head, g, 1.0, 0.0, vel);
  CHECK(net.layers[0].w[0] == doctest::Approx(0.75));

  // zero gradients leave parameters unchanged
  const double before = net.layers[0].w[5];
  ModelGrads zero = zero_grads_like(net, head);
  ModelGrads vel2 = zero_grads_like(net, head);
  sgd_step(net, head, zero, 0.5, 0.9, vel2);
  CHECK(net.layers[0].w[5] == before);

  // constant gradient, momentum 0.9: second update is lr * 1.9 * g
  FeatureNet net2 = make_feature_net(topo, 4);
  ModelGrads vel3 = zero_grads_like(net2, head);
  ModelGrads g3 = zero_grads_like(net2, head);
  g3.net[0].w[0] = 0.1;
  const double lr = 0.01;
  const double p0 = net2.layers[0].w[0];
  sgd_step(net2, head, g3, lr, 0.9, vel3);
  const double p1 = net2.layers[0].w[0];
  sgd_step(net2, head, g3, lr, 0.9, vel3);
  const double p2 = net2.layers[0].w[0];
  CHECK(p0 - p1 == doctest::Approx(lr * 0.1).epsilon(1e-12));
  CHECK(p1 - p2 == doctest::Approx(lr * 0.19).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "dcl_ckpt_test";
  std::filesystem::create_directories(dir);
  Topology topo = Topology::proposed(2, 4);
  const FeatureNet net = make_feature_net(topo, 21);
  const Head head = make_head(topo.feature_channels(), 3, 22);
  save_checkpoint(dir / "a", net, head, 7, {{"note", "fixture"}});

  const Checkpoint ck = load_checkpoint(dir / "a");
  CHECK(ck.epoch == 7);
  CHECK(ck.net.topo.levels == 2);
  CHECK(ck.net.topo.base_filters == 4);
  CHECK(ck.head.k() == 3);
  CHECK(ck.extra.at("note") == "fixture");
  // parameters survive as f32
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (std::size_t i = 0; i < net.layers[l].w.size(); ++i) {
      CHECK(ck.net.layers[l].w[i] ==
            static_cast<double>(static_cast<float>(net.layers[l].w[i])));
    }
  }
  // saving the loaded model reproduces identical bytes
  save_checkpoint(dir / "b", ck.net, ck.head, 7, {{"note", "fixture"}});
  CHECK(file_bytes(dir / "a.f32raw") == file_bytes(dir / "b.f32raw"));
  CHECK(file_bytes(dir / "a.json") == file_bytes(dir / "b.json"));
}

TEST_CASE("composed network gradients match finite differences (proposed)") {
  const Topology topo = Topology::proposed(2, 2);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto res = netcheck::check_composed(topo, 3, {8, 8, 8}, seed);
    INFO("seed ", seed, " max_rel_err ", res.max_rel_err, " skipped ",
         res.skipped, "/", res.checked + res.skipped);
    CHECK(res.ok());
  }
}

TEST_CASE("composed network gradients match finite differences (baseline)") {
  const Topology topo = Topology::baseline(2, 2);
  const auto res = netcheck::check_composed(topo, 3, {8, 8, 8}, 17);
  INFO("max_rel_err ", res.max_rel_err, " skipped ", res.skipped);
  CHECK(res.ok());
}

TEST_CASE("dense_post_relu flag controls final activation") {
  Topology relu_on = Topology::proposed(2, 4);
  Topology relu_off = relu_on;
  relu_off.dense_post_relu = false;
  const FeatureNet a = make_feature_net(relu_on, 31);
  FeatureNet b = a;
  b.topo = relu_off;
  Volume v({8, 8, 8});
  Rng rng(33);
  for (float& x : v.values) x = static_cast<float>(rng.uniform());
  const Tensor4 fa = unet_forward(a, v);
  const Tensor4 fb = unet_forward(b, v);
  bool has_negative = false;
  for (double x : fb.v) has_negative |= x < 0.0;
  CHECK(has_negative);
  for (std::size_t i = 0; i < fa.v.size(); ++i) {
    CHECK(fa.v[i] == (fb.v[i] > 0.0 ? fb.v[i] : 0.0));
  }
}
