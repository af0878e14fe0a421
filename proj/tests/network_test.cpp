#include <doctest.h>

#include "meanse/checkpoint.hpp"
#include "meanse/network.hpp"
#include "support.hpp"

using namespace meanse;
using namespace meanse::net;
using meanse::testing::max_abs;
using meanse::testing::max_abs_diff;
using meanse::testing::random_array;
using meanse::testing::tiny_config;

TEST_CASE("fresh networks are the zero field") {
  const VelocityNetwork net(tiny_config(), Mode::meanflow, 3);
  Rng rng(1);
  const auto x = random_array({4, 6}, rng), y = random_array({4, 6}, rng);
  CHECK(max_abs(net.forward(x, 0.2, 0.7, y).values()) == 0.0);
}

TEST_CASE("parameter layout") {
  const VelocityNetwork flow(tiny_config(), Mode::flow, 1);
  const VelocityNetwork mean(tiny_config(), Mode::meanflow, 1);
  const auto& fn = flow.params().names;
  CHECK(fn.front() == "time.weight");
  CHECK(fn.back() == "skip.bias");
  CHECK_THROWS(flow.params().index_of("fuse.weight"));
  CHECK(mean.params().at("fuse.weight").shape() == ad::Shape{4, 8});
  CHECK(mean.params().scalar_count() == flow.params().scalar_count() + 4 * 8 + 4);
  CHECK(flow.frequencies() == mean.frequencies());
}

TEST_CASE("flow networks ignore r") {
  VelocityNetwork net(tiny_config(), Mode::flow, 2);
  testing::perturb(net, 9);
  Rng rng(2);
  const auto x = random_array({3, 6}, rng), y = random_array({3, 6}, rng);
  CHECK(net.forward(x, 0.0, 0.4, y) == net.forward(x, 0.4, 0.4, y));
}

TEST_CASE("per-row and shared times agree") {
  VelocityNetwork net(tiny_config(), Mode::meanflow, 2);
  testing::perturb(net, 10);
  Rng rng(3);
  const auto x = random_array({3, 6}, rng), y = random_array({3, 6}, rng);
  const std::vector<double> r(3, 0.25), t(3, 0.8);
  CHECK(max_abs_diff(net.forward(x, r, t, y).values(), net.forward(x, 0.25, 0.8, y).values()) <= 1e-14);
}

TEST_CASE("flowse_init reproduces the flow network for every r") {
  VelocityNetwork flow(tiny_config(), Mode::flow, 4);
  testing::perturb(flow, 11);
  const auto mean = flowse_init(flow, tiny_config(), flow.frequencies().values());
  CHECK(mean.mode() == Mode::meanflow);
  Rng rng(4);
  for (int probe = 0; probe < 20; ++probe) {
    const auto x = random_array({2, 6}, rng), y = random_array({2, 6}, rng);
    const double t = rng.uniform();
    const auto ref = flow.forward(x, t, t, y);
    for (double r : {0.0, 0.25, 0.5, 0.75, 1.0})
      CHECK(max_abs_diff(mean.forward(x, r, t, y).values(), ref.values()) <= 1e-12);
  }
}

TEST_CASE("flowse_init refuses mismatches") {
  const VelocityNetwork flow(tiny_config(), Mode::flow, 4);
  auto other = tiny_config();
  other.hidden = 16;
  CHECK_THROWS_AS(flowse_init(flow, other), GeometryError);
  const VelocityNetwork mean(tiny_config(), Mode::meanflow, 4);
  CHECK_THROWS_AS(flowse_init(mean, tiny_config()), GeometryError);
  const VelocityNetwork reseeded(tiny_config(), Mode::flow, 5);
  CHECK_THROWS_AS(flowse_init(flow, tiny_config(), reseeded.frequencies().values()), GeometryError);
}

TEST_CASE("input shape checks") {
  const VelocityNetwork net(tiny_config(), Mode::flow, 1);
  Rng rng(5);
  CHECK_THROWS(net.forward(random_array({2, 5}, rng), 0.0, 0.5, random_array({2, 5}, rng)));
  CHECK_THROWS(net.forward(random_array({2, 6}, rng), 0.0, 0.5, random_array({3, 6}, rng)));
  auto bad = tiny_config();
  bad.embed_dim = 5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("initialization is a pure function of the seed") {
  const VelocityNetwork a(tiny_config(), Mode::flow, 42), b(tiny_config(), Mode::flow, 42), c(tiny_config(), Mode::flow, 43);
  CHECK(a.params().arrays == b.params().arrays);
  CHECK(a.frequencies() == b.frequencies());
  CHECK_FALSE(a.params().arrays == c.params().arrays);
}

TEST_CASE("checkpoint round trip is lossless") {
  VelocityNetwork net(tiny_config(), Mode::meanflow, 6);
  testing::perturb(net, 12);
  ckpt::CheckpointMeta meta;
  meta.seed = 6;
  meta.stage = 2;
  meta.max_width = 0.6;
  meta.flow_ratio = 0.75;
  meta.n_fft = 126;
  meta.hop = 32;
  meta.sample_rate_hz = 8000;
  meta.spec_scale = 0.3;
  const ckpt::NetworkCheckpoint c{net, meta};
  const auto bytes = ckpt::serialize(c);
  const auto back = ckpt::deserialize(bytes);
  CHECK(ckpt::serialize(back) == bytes);
  CHECK(back.network.params().arrays == net.params().arrays);
  CHECK(back.network.params().names == net.params().names);
  CHECK(back.meta.stage == 2);
  CHECK(back.meta.spec_scale == 0.3);

  testing::TempDir dir("ckpt");
  ckpt::save(dir.path() / "a.ckpt", c);
  CHECK(ckpt::serialize(ckpt::load(dir.path() / "a.ckpt")) == bytes);
}

TEST_CASE("checkpoint corruption is detected") {
  const VelocityNetwork net(tiny_config(), Mode::flow, 6);
  auto bytes = ckpt::serialize({net, {}});
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(ckpt::deserialize(flipped), ckpt::FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  CHECK_THROWS_AS(ckpt::deserialize(truncated), ckpt::FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(ckpt::deserialize(magic), ckpt::FormatError);
}

TEST_CASE("Fourier features") {
  const VelocityNetwork net(tiny_config(), Mode::meanflow, 7);
  const auto f0 = net.fourier_features(0.0);
  REQUIRE(f0.size() == 4);
  CHECK(f0[0] == 0.0);
  CHECK(f0[1] == 0.0);
  CHECK(f0[2] == 1.0);
  CHECK(f0[3] == 1.0);
  CHECK(net.embed_time(0.3) == net.embed_time(0.3));
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    CHECK_FALSE(net.embed_time(a) == net.embed_time(b));
  }
}

TEST_CASE("time fusion") {
  VelocityNetwork flow(tiny_config(), Mode::flow, 8);
  testing::perturb(flow, 13);
  const auto mean = flowse_init(flow, tiny_config());
  for (double r : {0.0, 0.3, 0.9}) CHECK(mean.fuse_times(r, 0.95) == flow.embed_time(0.95));

  VelocityNetwork zero = mean;
  for (auto* name : {"fuse.weight", "fuse.bias"})
    for (auto& v : zero.params().at(name).values()) v = 0.0;
  CHECK(max_abs(zero.fuse_times(0.2, 0.7).values()) == 0.0);

  VelocityNetwork rnd = mean;
  testing::perturb(rnd, 14);
  CHECK(rnd.fuse_times(0.4, 0.4) == rnd.fuse_times(0.4, 0.4));
}

TEST_CASE("flowse_init is r-independent even untrained, and sensitive to the fusion weights") {
  const VelocityNetwork raw(tiny_config(), Mode::flow, 9);
  const auto mean = flowse_init(raw, tiny_config());
  Rng rng(9);
  const auto x = random_array({3, 6}, rng), y = random_array({3, 6}, rng);
  CHECK(mean.forward(x, 0.0, 0.8, y) == mean.forward(x, 0.7, 0.8, y));

  VelocityNetwork trained(tiny_config(), Mode::flow, 10);
  testing::perturb(trained, 15);
  auto nudged = flowse_init(trained, tiny_config());
  nudged.params().at("fuse.weight")[0] += 1e-3;
  CHECK(max_abs_diff(nudged.forward(x, 0.0, 0.8, y).values(), nudged.forward(x, 0.7, 0.8, y).values()) > 0.0);
}
