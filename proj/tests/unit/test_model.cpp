#include <doctest.h>

#include <cmath>
#include <numbers>

#include "knowcl/backbone.hpp"
#include "knowcl/checkpoint.hpp"
#include "knowcl/io.hpp"
#include "knowcl/optim.hpp"
#include "scratch.hpp"

using namespace knowcl;

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 10, 1e-3) == 1e-3);
  CHECK(cosine_lr(5, 10, 1e-3) == doctest::Approx(5e-4));
  CHECK(cosine_lr(10, 10, 1e-3) == doctest::Approx(0.0).epsilon(1e-18));
  CHECK(cosine_lr(3, 12, 2.0) == doctest::Approx(1.0 + std::cos(std::numbers::pi / 4)));
  CHECK_THROWS_AS(cosine_lr(0, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(11, 10, 1.0), std::invalid_argument);
}

TEST_CASE("gradient clipping by global norm") {
  nn::Parameter<float> a("a", 1, 2), b("b", 1, 1), frozen("f", 1, 1, false, false);
  a.grad << 3, 0;
  b.grad << 4;
  frozen.grad << 100;
  nn::ParamRefs<float> ps{&a, &b, &frozen};
  CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == 3.0f);
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(std::sqrt(a.grad.squaredNorm() + b.grad.squaredNorm()) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(frozen.grad(0, 0) == 100.0f);
}

TEST_CASE("AdamW matches the hand-written update") {
  nn::Parameter<float> w("w", 1, 1), bias("b", 1, 1, false);
  w.value << 2.0f;
  bias.value << 2.0f;
  AdamW opt({&w, &bias});
  double m = 0, v = 0, x = 2.0, y = 2.0;
  const double lr = 0.1, wd = 0.5;
  for (int t = 1; t <= 5; ++t) {
    const double g = 0.3 * t - 1.0;
    w.grad << static_cast<float>(g);
    bias.grad << static_cast<float>(g);
    opt.step(lr, wd);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double upd = lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    x = x * (1 - lr * wd) - upd;
    y = y - upd;
    CHECK(w.value(0, 0) == doctest::Approx(x).epsilon(1e-5));
    CHECK(bias.value(0, 0) == doctest::Approx(y).epsilon(1e-5));
  }
  CHECK(opt.steps() == 5);
  opt.zero_grad();
  CHECK(w.grad(0, 0) == 0.0f);
}

TEST_CASE("parameter budgets") {
  const BackboneConfig hsi;
  Model m = Model::create(hsi, 4, true, true, 1);
  const std::size_t bb = m.backbone_parameter_count();
  CHECK(std::abs(double(bb) - 534110.0) / 534110.0 < 0.10);
  auto count = [](Variant v, std::size_t channels, std::size_t input) {
    BackboneConfig c = BackboneConfig::preset(v);
    c.in_channels = channels;
    c.input_size = input;
    return Model::create(c, 4, false, false, 1).backbone_parameter_count();
  };
  CHECK(std::abs(double(count(Variant::resnet18, 3, 32)) - 11.17e6) / 11.17e6 < 0.01);
  // Same 5-channel 24x24 geometry as vit_hsi.
  CHECK(std::abs(double(count(Variant::vit_tiny, 5, 24)) - 5.37e6) / 5.37e6 < 0.01);
}

TEST_CASE("model composition and decay flags") {
  const BackboneConfig cfg;
  Model sup = Model::create(cfg, 3, true, false, 1);
  Model both = Model::create(cfg, 3, true, true, 1);
  CHECK(sup.supervised.has_value());
  CHECK_FALSE(sup.contrastive.has_value());
  CHECK(both.contrastive->fc.out_features() == 256);
  CHECK(both.supervised->num_classes() == 3);
  bool saw_weights = false;
  for (auto* p : both.parameters()) {
    if (p->name == "loss_weights") {
      saw_weights = true;
      CHECK_FALSE(p->decay);
      CHECK(p->value(0, 0) == 1.0f);
    }
    if (p->name.find("bias") != std::string::npos || p->name.find("norm") != std::string::npos) CHECK_FALSE(p->decay);
  }
  CHECK(saw_weights);
  // Same seed, same weights.
  Model again = Model::create(cfg, 3, true, true, 1);
  auto pa = both.parameters(), pb = again.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);

  BackboneConfig bad = cfg;
  bad.input_size = 23;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.embed_dim = 125;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(variant_from_string("vit_small") == Variant::vit_small);
  CHECK_THROWS_AS(variant_from_string("vit_huge"), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip") {
  test::Scratch dir("ckpt");
  BackboneConfig cfg;
  cfg.depth = 1;
  Model m = Model::create(cfg, 4, true, true, 9);
  m.loss_weights.value << 0.7f, 1.3f;
  save_checkpoint(dir.path / "a.kncl", m);
  Model back = load_checkpoint(dir.path / "a.kncl");
  CHECK(back.config == m.config);
  CHECK(back.num_classes == 4);
  auto pa = m.parameters(), pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value == pb[i]->value);
  }
  save_checkpoint(dir.path / "b.kncl", back);
  CHECK(io::read_bytes(dir.path / "a.kncl") == io::read_bytes(dir.path / "b.kncl"));

  auto bytes = io::read_bytes(dir.path / "a.kncl");
  bytes.push_back(0);
  io::write_bytes(dir.path / "c.kncl", bytes);
  CHECK_THROWS(load_checkpoint(dir.path / "c.kncl"));
  bytes[0] = 'X';
  io::write_bytes(dir.path / "d.kncl", bytes);
  CHECK_THROWS(load_checkpoint(dir.path / "d.kncl"));
  CHECK_THROWS(load_checkpoint(dir.path / "none.kncl"));

  const nlohmann::json j = to_json(cfg);
  CHECK(backbone_config_from_json(j) == cfg);
  CHECK_THROWS_AS(backbone_config_from_json({{"embed_dims", 3}}), std::invalid_argument);
}
