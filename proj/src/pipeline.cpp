#include "knowcl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace knowcl {

namespace fs = std::filesystem;

fs::path ArtifactPaths::checkpoint(Mode m) const { return dir / ("checkpoint_" + to_string(m) + ".kncl"); }
fs::path ArtifactPaths::report(Mode m) const { return dir / ("report_" + to_string(m) + ".ndjson"); }

ArtifactPaths artifact_paths(const RunConfig& cfg) {
  ArtifactPaths p;
  p.dir = cfg.out_dir;
  if (cfg.data.synth) {
    p.cube = p.dir / (cfg.name + ".json");
    p.ground_truth = p.dir / (cfg.name + "_gt.json");
  } else {
    p.cube = cfg.data.cube;
    p.ground_truth = cfg.data.ground_truth;
  }
  p.split = p.dir / "split.txt";
  p.pca_a = p.dir / "pca_a.json";
  p.pca_b = p.dir / "pca_b.json";
  return p;
}

namespace {

Scene finish_scene(Cube cube, GroundTruth gt) {
  cube.validate();
  gt.validate();
  if (cube.rows != gt.rows || cube.cols != gt.cols) {
    throw std::invalid_argument("ground truth " + std::to_string(gt.rows) + "x" + std::to_string(gt.cols) +
                                " does not match cube " + std::to_string(cube.rows) + "x" + std::to_string(cube.cols));
  }
  return {normalize(cube), std::move(gt)};
}

}  // namespace

Scene build_scene(const RunConfig& cfg) {
  if (cfg.data.synth) {
    SynthScene s = synth_cube(*cfg.data.synth);
    s.cube.name = cfg.name;
    return finish_scene(std::move(s.cube), std::move(s.ground_truth));
  }
  return load_scene(cfg);
}

Scene load_scene(const RunConfig& cfg) {
  const ArtifactPaths paths = artifact_paths(cfg);
  for (const auto& p : {paths.cube, paths.ground_truth}) {
    const RasterPaths rp = raster_paths(p);
    if (!fs::exists(rp.sidecar) || !fs::exists(rp.raster)) {
      throw std::runtime_error("missing raster " + rp.sidecar.string() +
                               (cfg.data.synth ? " (run `knowcl synth` first)" : ""));
    }
  }
  return finish_scene(load_cube(paths.cube), load_ground_truth(paths.ground_truth));
}

Split make_split(const GroundTruth& gt, const RunConfig& cfg) {
  if (!cfg.split.per_class.empty()) {
    if (cfg.split.per_class.size() != static_cast<std::size_t>(gt.num_classes)) {
      throw std::invalid_argument("split: per_class lists " + std::to_string(cfg.split.per_class.size()) +
                                  " ratios for " + std::to_string(gt.num_classes) + " classes");
    }
    return split_disjoint(gt, cfg.split.per_class);
  }
  return split_disjoint(gt, cfg.split.ratio);
}

Prepared prepare_from(const Scene& scene, const Split& split, const PcaModel& pca_a, const PcaModel& pca_b) {
  validate_split(split, scene.gt);
  const GroupedCube groups = group_bands(scene.cube);
  Prepared p;
  p.gt = scene.gt;
  p.split = split;
  p.pca_a = pca_a;
  p.pca_b = pca_b;
  p.reduced.group_a = apply_pca(pca_a, groups.group_a);
  p.reduced.group_b = apply_pca(pca_b, groups.group_b);
  return p;
}

Prepared prepare(const Scene& scene, const RunConfig& cfg) {
  const Split split = make_split(scene.gt, cfg);
  const GroupedCube groups = group_bands(scene.cube);
  const std::size_t n = cfg.pca.components;
  if (cfg.pca.fit == PcaFit::scene) {
    return prepare_from(scene, split, fit_pca(groups.group_a, n), fit_pca(groups.group_b, n));
  }
  std::vector<Pixel> train;
  for (const auto& p : split.train) train.push_back(p.at);
  return prepare_from(scene, split, fit_pca(groups.group_a, n, train), fit_pca(groups.group_b, n, train));
}

UnlabeledSet unlabeled_pool(const Prepared& prep, const RunConfig& cfg) {
  UnlabeledSet pool;
  if (cfg.train.unlabeled_pool == UnlabeledPool::train) {
    pool = unlabeled_from(prep.split.train);
  } else {
    for (std::size_t r = 0; r < prep.gt.rows; ++r) {
      for (std::size_t c = 0; c < prep.gt.cols; ++c) {
        pool.pixels.push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)});
      }
    }
  }
  const std::size_t limit = cfg.train.unlabeled_limit;
  if (limit > 0 && limit < pool.pixels.size()) {
    std::vector<std::size_t> idx(pool.pixels.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_key({cfg.train.train.seed, 0x504F4F4CULL}));
    shuffle(idx.begin(), idx.end(), rng);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    UnlabeledSet sub;
    for (std::size_t i : idx) sub.pixels.push_back(pool.pixels[i]);
    pool = std::move(sub);
  }
  return pool;
}

TrainRun run_training(const Prepared& prep, const RunConfig& cfg) {
  cfg.validate();
  TrainConfig t = cfg.train.train;
  t.threads = cfg.threads();
  TrainRun run{make_model(cfg.backbone, prep.gt.num_classes, t.mode, t.seed), {}};
  const ViewSource source{&prep.reduced, cfg.augment};
  const LabeledSet labeled = t.mode == Mode::unsupervised ? LabeledSet{} : labeled_from(prep.split.train);
  const UnlabeledSet unlabeled = t.mode == Mode::supervised ? UnlabeledSet{} : unlabeled_pool(prep, cfg);
  run.report = train(run.model, source, labeled, unlabeled, t);
  return run;
}

namespace {

std::vector<int> truth_of(const Split& split) {
  std::vector<int> t;
  t.reserve(split.test.size());
  for (const auto& p : split.test) t.push_back(p.label);
  return t;
}

std::vector<Pixel> coords_of(std::span<const LabeledPixel> px) {
  std::vector<Pixel> c;
  c.reserve(px.size());
  for (const auto& p : px) c.push_back(p.at);
  return c;
}

LinearProbeConfig probe_config(const RunConfig& cfg) {
  LinearProbeConfig lp;
  lp.epochs = cfg.eval.linear_epochs;
  lp.lr = cfg.eval.linear_lr;
  lp.seed = cfg.train.train.seed;
  return lp;
}

std::vector<int> predict(Model& model, const Prepared& prep, const RunConfig& cfg, const std::string& protocol,
                         std::size_t k, std::span<const Pixel> queries) {
  const std::size_t threads = cfg.threads();
  if (protocol == "head") return head_predict(model, prep.reduced, cfg.augment, queries, threads);
  const FeatureBank train =
      extract_features(model, prep.reduced, cfg.augment, std::span<const LabeledPixel>(prep.split.train),
                       cfg.eval.pooling, threads);
  const FeatureBank q = extract_features(model, prep.reduced, cfg.augment, queries, cfg.eval.pooling, threads);
  if (protocol == "knn") return knn_predict(train, q, k, cfg.eval.tau_knn, threads);
  if (protocol == "linear") return linear_eval(train, q, prep.gt.num_classes, probe_config(cfg)).predictions;
  throw std::invalid_argument("unknown protocol \"" + protocol + "\" (expected knn, linear or head)");
}

}  // namespace

EvalResult evaluate(Model& model, const Prepared& prep, const RunConfig& cfg, const std::string& protocol,
                    std::size_t k) {
  if (prep.split.test.empty()) throw std::invalid_argument("evaluate: the test split is empty");
  EvalResult r;
  r.protocol = protocol;
  r.k = protocol == "knn" ? k : 0;
  const std::vector<Pixel> queries = coords_of(prep.split.test);
  r.predictions = predict(model, prep, cfg, protocol, k, queries);
  r.metrics = metrics(confusion(r.predictions, truth_of(prep.split), prep.gt.num_classes));
  return r;
}

std::vector<EvalResult> knn_sweep(Model& model, const Prepared& prep, const RunConfig& cfg,
                                  const std::vector<std::size_t>& ks) {
  if (prep.split.test.empty()) throw std::invalid_argument("evaluate: the test split is empty");
  const std::size_t threads = cfg.threads();
  const FeatureBank train =
      extract_features(model, prep.reduced, cfg.augment, std::span<const LabeledPixel>(prep.split.train),
                       cfg.eval.pooling, threads);
  const FeatureBank test =
      extract_features(model, prep.reduced, cfg.augment, std::span<const LabeledPixel>(prep.split.test),
                       cfg.eval.pooling, threads);
  const std::vector<int> truth = truth_of(prep.split);
  std::vector<EvalResult> out;
  for (std::size_t k : ks) {
    EvalResult r;
    r.protocol = "knn";
    r.k = k;
    r.predictions = knn_predict(train, test, k, cfg.eval.tau_knn, threads);
    r.metrics = metrics(confusion(r.predictions, truth, prep.gt.num_classes));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::int32_t> predict_scene(Model& model, const Prepared& prep, const RunConfig& cfg,
                                        const std::string& protocol, std::size_t k) {
  std::vector<Pixel> all;
  all.reserve(prep.gt.rows * prep.gt.cols);
  for (std::size_t r = 0; r < prep.gt.rows; ++r) {
    for (std::size_t c = 0; c < prep.gt.cols; ++c) {
      all.push_back({static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)});
    }
  }
  const std::vector<int> pred = predict(model, prep, cfg, protocol, k, all);
  return {pred.begin(), pred.end()};
}

MetricsReport spectral_angle_baseline(const Scene& scene, const Split& split) {
  const Cube& cube = scene.cube;
  const int k = scene.gt.num_classes;
  std::vector<std::vector<double>> mean(static_cast<std::size_t>(k), std::vector<double>(cube.bands, 0.0));
  std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
  for (const auto& p : split.train) {
    auto& m = mean[static_cast<std::size_t>(p.label - 1)];
    for (std::size_t b = 0; b < cube.bands; ++b) {
      m[b] += cube.at(b, static_cast<std::size_t>(p.at.row), static_cast<std::size_t>(p.at.col));
    }
    ++count[static_cast<std::size_t>(p.label - 1)];
  }
  std::vector<int> pred, truth;
  for (const auto& p : split.test) {
    int best = 1;
    double best_cos = -2.0;
    for (int c = 1; c <= k; ++c) {
      const auto& m = mean[static_cast<std::size_t>(c - 1)];
      if (count[static_cast<std::size_t>(c - 1)] == 0) continue;
      double dot = 0, nm = 0, nv = 0;
      for (std::size_t b = 0; b < cube.bands; ++b) {
        const double v = cube.at(b, static_cast<std::size_t>(p.at.row), static_cast<std::size_t>(p.at.col));
        dot += v * m[b];
        nm += m[b] * m[b];
        nv += v * v;
      }
      const double cs = (nm > 0 && nv > 0) ? dot / std::sqrt(nm * nv) : -1.0;
      if (cs > best_cos) {
        best_cos = cs;
        best = c;
      }
    }
    pred.push_back(best);
    truth.push_back(p.label);
  }
  return metrics(confusion(pred, truth, k));
}

}  // namespace knowcl
