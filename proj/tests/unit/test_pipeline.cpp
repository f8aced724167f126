#include <doctest.h>

#include <sstream>

#include "knowcl/checkpoint.hpp"
#include "knowcl/config.hpp"
#include "knowcl/pipeline.hpp"
#include "scratch.hpp"

using namespace knowcl;
using nlohmann::json;

namespace {

json small_config() {
  return {{"name", "tiny"},
          {"data",
           {{"synth",
             {{"rows", 16}, {"cols", 16}, {"bands", 8}, {"num_classes", 3}, {"class_signature_separation", 0.5},
              {"noise_sigma", 0.02}, {"region_scale", 4}, {"seed", 3}}}}},
          {"split", {{"ratio", 0.3}}},
          {"pca", {{"components", 2}}},
          {"augment", {{"patch_size", 5}, {"crop_size", 5}, {"canonical_size", 8}}},
          {"backbone", {{"embed_dim", 12}, {"depth", 1}, {"num_heads", 3}, {"head_hidden", 16}, {"projection_dim", 8}}},
          {"train", {{"epochs", 2}, {"batch_size", 16}, {"seed", 5}}},
          {"eval", {{"k", 3}, {"linear_epochs", 5}}}};
}

struct Fixture {
  RunConfig cfg = RunConfig::from_json(small_config());
  Scene scene = build_scene(cfg);
  Prepared prep = prepare(scene, cfg);
};

std::size_t count_lines(const std::string& s) {
  std::istringstream in(s);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    CHECK_NOTHROW(static_cast<void>(json::parse(line)));
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and names missing ones") {
  json j = small_config();
  j["train"]["epochz"] = 3;
  try {
    RunConfig::from_json(j);
    FAIL("no throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("train: unknown key \"epochz\"") != std::string::npos);
  }
  j = small_config();
  j["data"]["synth"].erase("rows");
  try {
    RunConfig::from_json(j);
    FAIL("no throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("rows") != std::string::npos);
  }
  j = small_config();
  j["pca"]["components"] = 5;
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);
  j = small_config();
  j["backbone"]["in_channels"] = 3;
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);
  j = small_config();
  j["eval"]["protocols"] = {"knn", "svm"};
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);
}

TEST_CASE("config defaults and round-trip") {
  json data = small_config()["data"];
  data["synth"]["bands"] = 32;
  const RunConfig d = RunConfig::from_json({{"data", data}});
  CHECK(d.split.ratio == 0.3);
  CHECK(d.pca.components == 5);
  CHECK(d.augment.crop_size == 23);
  CHECK(d.augment.canonical_size == 24);
  CHECK(d.train.train.epochs == 30);
  CHECK(d.train.train.tau == 0.5);
  CHECK(d.train.train.lr == 1e-3);
  CHECK(d.train.train.weight_decay == 1e-6);
  CHECK(d.eval.k == 5);
  CHECK(d.backbone.in_channels == 5);
  CHECK(d.backbone.embed_dim == 126);
  const RunConfig c = RunConfig::from_json(small_config());
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  RunConfig s = c;
  s.set_seed(77);
  CHECK(s.train.train.seed == 77);
  CHECK(s.augment.seed == 77);
}

TEST_CASE("training modes report their own columns") {
  Fixture f;
  for (Mode m : {Mode::supervised, Mode::unsupervised, Mode::semisupervised}) {
    RunConfig cfg = f.cfg;
    cfg.train.train.mode = m;
    TrainRun run = run_training(f.prep, cfg);
    const TrainReport& r = run.report;
    CHECK(r.mode == m);
    REQUIRE(r.epochs.size() == 2);
    const std::size_t spe = steps_per_epoch(f.prep.split.train.size(), f.prep.split.train.size(), 16);
    CHECK(r.total_steps == 2 * spe);
    CHECK(r.steps.size() == r.total_steps);
    CHECK(count_lines(r.to_ndjson()) == r.epochs.size() + r.steps.size());
    const EpochRecord& e = r.epochs.back();
    CHECK(e.supervised_loss.has_value() == (m != Mode::unsupervised));
    CHECK(e.contrastive_loss.has_value() == (m != Mode::supervised));
    CHECK(e.weights.has_value() == (m == Mode::semisupervised));
    CHECK(r.steps.front().lr == cfg.train.train.lr);
    CHECK(std::isfinite(r.final_loss()));
    CHECK(to_json(e).contains("w_supervised") == (m == Mode::semisupervised));
  }
}

TEST_CASE("training is reproducible and seed-sensitive") {
  Fixture f;
  const double a = run_training(f.prep, f.cfg).report.final_loss();
  const double b = run_training(f.prep, f.cfg).report.final_loss();
  CHECK(a == b);
  RunConfig other = f.cfg;
  other.set_seed(6);
  CHECK(run_training(f.prep, other).report.final_loss() != a);
}

TEST_CASE("steps per epoch") {
  CHECK(steps_per_epoch(10, 0, 4) == 3);
  CHECK(steps_per_epoch(10, 33, 8) == 5);
  CHECK(steps_per_epoch(0, 8, 8) == 1);
}

TEST_CASE("loss weight ablation hooks") {
  Fixture f;
  const ViewSource src{&f.prep.reduced, f.cfg.augment};
  const LabeledSet lab = labeled_from(f.prep.split.train);
  const UnlabeledSet unl = unlabeled_from(f.prep.split.train);
  TrainConfig t = f.cfg.train.train;
  t.epochs = 1;
  t.initial_loss_weights = std::array<double, 2>{0.5, 2.0};
  t.freeze_loss_weights = true;
  Model m = make_model(f.cfg.backbone, 3, Mode::semisupervised, t.seed);
  const TrainReport r = train_semisupervised(m, src, lab, unl, t);
  CHECK((*r.epochs.back().weights)[0] == doctest::Approx(0.5));
  CHECK((*r.epochs.back().weights)[1] == doctest::Approx(2.0));

  t.freeze_loss_weights = false;
  t.initial_loss_weights.reset();
  Model m2 = make_model(f.cfg.backbone, 3, Mode::semisupervised, t.seed);
  const TrainReport r2 = train_semisupervised(m2, src, lab, unl, t);
  CHECK((*r2.epochs.back().weights)[0] != 1.0);

  t.detach_contrastive = true;
  Model m3 = make_model(f.cfg.backbone, 3, Mode::semisupervised, t.seed);
  CHECK(train_semisupervised(m3, src, lab, unl, t).final_loss() != r2.final_loss());
}

TEST_CASE("training input validation") {
  Fixture f;
  const ViewSource src{&f.prep.reduced, f.cfg.augment};
  TrainConfig t = f.cfg.train.train;
  Model sup = make_model(f.cfg.backbone, 3, Mode::supervised, 1);
  CHECK_THROWS_AS(train_supervised(sup, src, LabeledSet{}, t), std::invalid_argument);
  UnlabeledSet one;
  one.pixels.push_back({0, 0});
  Model un = make_model(f.cfg.backbone, 3, Mode::unsupervised, 1);
  CHECK_THROWS_AS(train_unsupervised(un, src, one, t), std::invalid_argument);
  CHECK_THROWS_AS(train_unsupervised(sup, src, unlabeled_from(f.prep.split.train), t), std::invalid_argument);
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  CHECK(mode_from_string("semisupervised") == Mode::semisupervised);
  CHECK_THROWS_AS(mode_from_string("self"), std::invalid_argument);
}

TEST_CASE("evaluation protocols and checkpoint reload give identical metrics") {
  test::Scratch dir("pipe_eval");
  Fixture f;
  RunConfig cfg = f.cfg;
  cfg.train.train.mode = Mode::semisupervised;
  TrainRun run = run_training(f.prep, cfg);
  save_checkpoint(dir.path / "m.kncl", run.model);
  Model back = load_checkpoint(dir.path / "m.kncl");
  for (const std::string p : {"knn", "linear", "head"}) {
    const EvalResult a = evaluate(run.model, f.prep, cfg, p, 3);
    const EvalResult b = evaluate(back, f.prep, cfg, p, 3);
    CHECK(a.predictions == b.predictions);
    CHECK(a.metrics.oa == b.metrics.oa);
    CHECK(a.predictions.size() == f.prep.split.test.size());
  }
  const auto sweep = knn_sweep(run.model, f.prep, cfg, {1, 3});
  CHECK(sweep[1].predictions == evaluate(run.model, f.prep, cfg, "knn", 3).predictions);
  CHECK_THROWS_AS(evaluate(run.model, f.prep, cfg, "svm", 3), std::invalid_argument);
  const auto raster = predict_scene(run.model, f.prep, cfg, "knn", 3);
  CHECK(raster.size() == 16 * 16);
  Model unsup = make_model(cfg.backbone, 3, Mode::unsupervised, 1);
  CHECK_THROWS_AS(evaluate(unsup, f.prep, cfg, "head", 3), std::invalid_argument);
  CHECK(resolve_pooling(unsup, Pooling::automatic) == Pooling::mean);
  CHECK(resolve_pooling(run.model, Pooling::automatic) == Pooling::cls);
}

TEST_CASE("unlabeled pool selection") {
  Fixture f;
  RunConfig cfg = f.cfg;
  CHECK(unlabeled_pool(f.prep, cfg).pixels.size() == f.prep.split.train.size());
  cfg.train.unlabeled_pool = UnlabeledPool::scene;
  CHECK(unlabeled_pool(f.prep, cfg).pixels.size() == 256);
  cfg.train.unlabeled_limit = 40;
  const UnlabeledSet sub = unlabeled_pool(f.prep, cfg);
  CHECK(sub.pixels.size() == 40);
  CHECK(std::is_sorted(sub.pixels.begin(), sub.pixels.end()));
}

TEST_CASE("spectral angle baseline on clean data") {
  Fixture f;
  CHECK(spectral_angle_baseline(f.scene, f.prep.split).oa >= 0.95);
}
