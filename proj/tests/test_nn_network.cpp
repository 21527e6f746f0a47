#include <doctest.h>

#include <cmath>
#include <fstream>
#include <thread>

#include "grad_check.hpp"
#include "test_util.hpp"
#include "vmatflux/nn/checkpoint.hpp"
#include "vmatflux/nn/gantry.hpp"
#include "vmatflux/nn/network.hpp"
#include "vmatflux/nn/trainer.hpp"

using namespace vmatflux;
using namespace vmatflux::nn;

namespace {

NetConfig tiny(Arch arch, int scales = 2, int base = 2) {
  NetConfig c;
  c.arch = arch;
  c.base_channels = base;
  c.n_scales = scales;
  return c;
}

TrainSample toy_sample(int n_cp, int px, std::uint64_t seed, std::string id = "toy") {
  const PlaneGeometry g = PlaneGeometry::centered(px, px, 2.5, 2.5);
  PlaneStack bev(PlaneKind::BevDose, g, n_cp), fl(PlaneKind::Fluence, g, n_cp);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < bev.values.size(); ++i) {
    bev.values[i] = u(rng) * 40.0;
    fl.values[i] = 0.02 * (0.5 * bev.values[i] / 40.0 + 0.5 * u(rng));
  }
  return make_sample(bev, fl, std::move(id));
}

}  // namespace

TEST_CASE("architecture names and config json") {
  CHECK(arch_from_string("MedNeXt") == Arch::MedNeXt3D);
  CHECK(arch_from_string("unet2d") == Arch::UNet2D);
  CHECK_THROWS(arch_from_string("vit"));
  NetConfig c = tiny(Arch::UNet3D, 3, 4);
  c.use_norm = false;
  CHECK(config_from_json(config_to_json(c)) == c);
  c.n_scales = 1;
  CHECK_THROWS(validate_config(c));
  c = tiny(Arch::MedNeXt3D);
  c.expansion = 0;
  CHECK_THROWS(validate_config(c));
}

TEST_CASE("shape contract for D, H, W multiples of 16") {
  for (Arch a : {Arch::MedNeXt3D, Arch::UNet3D}) {
    NetConfig c = tiny(a, 5, 1);
    c.expansion = 1;
    auto net = build_network<float>(c, 1);
    CHECK(net->forward(Tensor5<float>(1, 1, 16, 32, 16)).shape == Shape5{1, 1, 16, 32, 16});
    CHECK(net->depth_multiple() == 16);
  }
  NetConfig c = tiny(Arch::UNet2D, 5, 1);
  c.in_channels = 20;
  auto net = build_network<float>(c, 1);
  CHECK(net->depth_multiple() == 1);
  CHECK(net->forward(Tensor5<float>(1, 1, 20, 16, 32)).shape == Shape5{1, 1, 20, 16, 32});
  CHECK_THROWS_AS(net->forward(Tensor5<float>(1, 1, 21, 16, 32)), ShapeError);
}

TEST_CASE("clinical-shape contracts") {
  NetConfig m = tiny(Arch::MedNeXt3D, 5, 1);
  m.expansion = 1;
  auto med = build_network<float>(m, 2);
  CHECK(med->forward(Tensor5<float>(1, 1, 192, 64, 64)).shape == Shape5{1, 1, 192, 64, 64});
  NetConfig u = tiny(Arch::UNet2D, 5, 1);
  u.in_channels = 180;
  auto planar = build_network<float>(u, 2);
  CHECK(planar->forward(Tensor5<float>(1, 1, 180, 64, 64)).shape == Shape5{1, 1, 180, 64, 64});
  CHECK(planar->params().find("enc0.conv1.weight")->shape[1] == 180);
  CHECK(planar->params().find("head.weight")->shape[0] == 180);
}

TEST_CASE("indivisible dims name the required multiple") {
  auto net = build_network<float>(tiny(Arch::MedNeXt3D, 5, 1), 1);
  try {
    net->forward(Tensor5<float>(1, 1, 16, 24, 16));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("multiples of 16") != std::string::npos);
  }
}

TEST_CASE("all-zero parameters give an all-zero output") {
  for (Arch a : {Arch::MedNeXt3D, Arch::UNet3D}) {
    auto net = build_network<float>(tiny(a, 3), 3);
    for (auto& p : net->params()) std::fill(p->value.begin(), p->value.end(), 0.0f);
    const auto y = net->forward(tensor_cast<float>(testing::random_tensor({1, 1, 8, 8, 8}, 4)));
    for (float v : y.data) CHECK(v == 0.0f);
  }
}

TEST_CASE("initialized MedNeXt without norms is linear in its input") {
  NetConfig c = tiny(Arch::MedNeXt3D, 3, 4);
  c.use_norm = false;
  auto net = build_network<double>(c, 5);
  const auto x = testing::random_tensor({1, 1, 8, 8, 8}, 6);
  Tensor5<double> x2 = x;
  for (double& v : x2.data) v *= 2.0;
  const auto y = net->forward(x);
  const auto y2 = net->forward(x2);
  double peak = 0.0;
  for (double v : y.data) peak = std::max(peak, std::abs(v));
  REQUIRE(peak > 0.0);
  for (std::size_t i = 0; i < y.data.size(); ++i) CHECK(y2.data[i] == doctest::Approx(2.0 * y.data[i]));
}

TEST_CASE("initialization record") {
  auto a = build_network<float>(tiny(Arch::MedNeXt3D, 3, 4), 7);
  auto b = build_network<float>(tiny(Arch::MedNeXt3D, 3, 4), 7);
  auto c = build_network<float>(tiny(Arch::MedNeXt3D, 3, 4), 8);
  bool differs = false;
  for (std::size_t i = 0; i < a->params().size(); ++i) {
    const auto& p = a->params()[i];
    CHECK(p.value == b->params()[i].value);
    differs |= p.value != c->params()[i].value;
    for (float v : p.value) {
      if (p.init == ParamInit::Kernel) CHECK(std::abs(v) <= 0.04f);
      if (p.init == ParamInit::Zero) CHECK(v == 0.0f);
      if (p.init == ParamInit::One) CHECK(v == 1.0f);
    }
  }
  CHECK(differs);
  CHECK(a->params().find("enc0.block0.compress.weight")->init == ParamInit::Zero);
  CHECK(a->init_seed() == 7);
}

// The 2x2x2 bottleneck normalizes over 8 voxels, which is curved enough that
// central differences need a smaller step than the per-layer checks.
constexpr double kNetEps = 3e-5;

TEST_CASE("network gradients match finite differences") {
  for (Arch a : {Arch::MedNeXt3D, Arch::UNet3D}) {
    auto net = build_network<double>(tiny(a, 2, 2), 9);
    testing::randomize_params(net->params(), 10);
    const auto r = testing::grad_check(
        testing::random_tensor({1, 1, 4, 4, 4}, 11), net->params(),
        [&](const Tensor5<double>& x) { return net->forward(x); },
        [&](const Tensor5<double>& g) { return net->backward(g); }, kNetEps);
    CHECK(r.max_rel_input < 1e-5);
    CHECK(r.max_rel_param < 1e-5);
  }
  NetConfig c = tiny(Arch::UNet2D, 2, 2);
  c.in_channels = 3;
  auto net = build_network<double>(c, 12);
  testing::randomize_params(net->params(), 13);
  const auto r = testing::grad_check(
      testing::random_tensor({1, 1, 3, 4, 4}, 14), net->params(),
      [&](const Tensor5<double>& x) { return net->forward(x); },
      [&](const Tensor5<double>& g) { return net->backward(g); }, kNetEps);
  CHECK(r.max_rel_input < 1e-5);
  CHECK(r.max_rel_param < 1e-5);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  auto net = build_network<double>(tiny(Arch::MedNeXt3D, 2, 2), 15);
  testing::randomize_params(net->params(), 16);
  const auto y = net->forward(testing::random_tensor({1, 1, 4, 4, 4}, 17));
  net->params().zero_grad();
  net->backward(Tensor5<double>(y.shape));
  for (const auto& p : net->params())
    for (double g : p->grad) CHECK(g == 0.0);
}

TEST_CASE("clone reproduces the forward pass") {
  auto net = build_network<float>(tiny(Arch::UNet3D, 2, 2), 18);
  testing::randomize_params(net->params(), 19);
  const auto x = tensor_cast<float>(testing::random_tensor({1, 1, 4, 4, 4}, 20));
  auto copy = net->clone();
  CHECK(copy->forward(x).data == net->forward(x).data);
}

TEST_CASE("samples are normalized per plan") {
  const TrainSample s = toy_sample(4, 8, 21);
  float in_max = 0.0f, t_max = 0.0f;
  for (float v : s.input.data) in_max = std::max(in_max, v);
  for (float v : s.target.data) t_max = std::max(t_max, v);
  CHECK(in_max == doctest::Approx(1.0));
  CHECK(t_max == doctest::Approx(1.0));
  CHECK(s.input.shape == Shape5{1, 1, 4, 8, 8});
  PlaneStack a(PlaneKind::BevDose, PlaneGeometry::centered(8, 8, 1, 1), 4);
  PlaneStack b(PlaneKind::Fluence, PlaneGeometry::centered(8, 8, 1, 1), 5);
  CHECK_THROWS_AS(make_sample(a, b), ShapeError);
}

TEST_CASE("training is deterministic and honours lr = 0") {
  std::vector<TrainSample> data{toy_sample(4, 8, 22, "a"), toy_sample(4, 8, 23, "b")};
  NetConfig c = tiny(Arch::MedNeXt3D, 2, 2);
  c.pad_multiple = 8;
  TrainOptions o;
  o.steps = 6;
  o.seed = 24;
  o.adam.lr = 1e-3;
  const auto r1 = train(data, c, o);
  const auto r2 = train(data, c, o);
  REQUIRE(r1.curve.size() == 6);
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].loss == r2.curve[i].loss);
    CHECK(r1.curve[i].step == static_cast<int>(i) + 1);
  }
  for (std::size_t i = 0; i < r1.net->params().size(); ++i) {
    CHECK(r1.net->params()[i].value == r2.net->params()[i].value);
  }
  CHECK(r1.fluence_scale_ratio ==
        doctest::Approx(0.5 * (data[0].target_max / data[0].input_max + data[1].target_max / data[1].input_max)));

  o.adam.lr = 0.0;
  const auto frozen = train(data, c, o);
  auto init = build_network<float>(c, o.seed);
  for (std::size_t i = 0; i < init->params().size(); ++i) {
    CHECK(frozen.net->params()[i].value == init->params()[i].value);
  }
}

TEST_CASE("training loss decreases on a single pair") {
  std::vector<TrainSample> data{toy_sample(8, 8, 25)};
  NetConfig c = tiny(Arch::MedNeXt3D, 2, 4);
  c.pad_multiple = 8;
  TrainOptions o;
  o.steps = 60;
  o.adam.lr = 3e-3;
  const auto r = train(data, c, o);
  CHECK(r.curve.back().loss < 0.5 * r.curve.front().loss);
}

TEST_CASE("training errors") {
  NetConfig c = tiny(Arch::MedNeXt3D, 2, 2);
  CHECK_THROWS_AS(train({}, c, {}), std::invalid_argument);
  std::vector<TrainSample> data{toy_sample(4, 8, 26)};
  data[0].input.data[5] = std::numeric_limits<float>::quiet_NaN();
  TrainOptions o;
  o.steps = 3;
  try {
    train(data, c, o);
    FAIL("expected a NaN abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("gantry depth padding for the network") {
  NetConfig c;
  CHECK(network_depth(c, 180) == 192);
  CHECK(network_depth(c, 32) == 32);
  c.arch = Arch::UNet2D;
  CHECK(network_depth(c, 180) == 180);
  NetConfig odd;
  auto net = build_network<float>(tiny(Arch::MedNeXt3D, 2, 2), 1);
  CHECK_THROWS_AS(infer(*net, Tensor5<float>(1, 1, 15, 16, 16)), ShapeError);
}

TEST_CASE("prediction pipeline") {
  NetConfig c = tiny(Arch::MedNeXt3D, 3, 2);
  auto net = build_network<float>(c, 27);
  testing::randomize_params(net->params(), 28, 0.2);
  const PlaneGeometry g = PlaneGeometry::centered(8, 8, 2.5, 2.5);
  PlaneStack zero(PlaneKind::BevDose, g, 6);
  const PlaneStack p = predict_from_bev(*net, zero, 0.01);
  CHECK(p.n_cp == 6);
  CHECK(p.kind == PlaneKind::Fluence);
  CHECK(p.geometry == g);
  for (double v : p.values) CHECK(v >= 0.0);

  // Zero dose leaves only the bias path, identical for every voxel away from borders.
  auto plain = build_network<float>(c, 29);
  for (auto& q : plain->params()) {
    if (q->name.find("bias") != std::string::npos) std::fill(q->value.begin(), q->value.end(), 0.05f);
  }
  const PlaneStack flat = predict_from_bev(*plain, zero, 1.0);
  CHECK(flat.values.front() > 0.0);
  for (double v : flat.values) CHECK(v == doctest::Approx(flat.values.front()).epsilon(0.05));

  // Concurrent predictions on one network agree.
  PlaneStack bev = zero;
  for (std::size_t i = 0; i < bev.values.size(); ++i) bev.values[i] = static_cast<double>(i % 13);
  PlaneStack r1, r2;
  std::thread t1([&] { r1 = predict_from_bev(*net, bev, 0.01); });
  std::thread t2([&] { r2 = predict_from_bev(*net, bev, 0.01); });
  t1.join();
  t2.join();
  CHECK(r1.values == r2.values);
}

TEST_CASE("checkpoint round trip and mismatch") {
  const auto dir = testing::scratch_dir("ckpt");
  NetConfig c = tiny(Arch::UNet3D, 2, 3);
  auto net = build_network<float>(c, 30);
  testing::randomize_params(net->params(), 31);
  const CheckpointMeta meta{12, 0.5, 30, 0.0125, PlaneGeometry::centered(8, 8, 2.5, 2.5)};
  save_checkpoint(dir, *net, meta);
  const LoadedCheckpoint ck = load_checkpoint(dir);
  CHECK(ck.net->config() == c);
  CHECK(ck.meta.step == 12);
  CHECK(ck.meta.seed == 30);
  CHECK(ck.meta.fluence_scale_ratio == 0.0125);
  CHECK(ck.meta.geometry == meta.geometry);
  for (std::size_t i = 0; i < net->params().size(); ++i) CHECK(ck.net->params()[i].value == net->params()[i].value);

  nlohmann::json doc;
  {
    std::ifstream in(dir / "manifest.json");
    doc = nlohmann::json::parse(in);
  }
  doc["config"]["base_channels"] = 4;
  {
    std::ofstream out(dir / "manifest.json");
    out << doc.dump();
  }
  CHECK_THROWS_AS(load_checkpoint(dir), ShapeError);
}
