#include <algorithm>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "knowcl/checkpoint.hpp"
#include "knowcl/config.hpp"
#include "knowcl/io.hpp"
#include "knowcl/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace knowcl::cli {
namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<bool> deterministic;
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = RunConfig::load(g.config);
  if (g.seed) cfg.set_seed(*g.seed);
  if (g.out_dir) cfg.out_dir = *g.out_dir;
  if (g.deterministic) cfg.deterministic = *g.deterministic;
  cfg.validate();
  return cfg;
}

std::vector<std::string> expand_protocols(const std::string& p, const RunConfig& cfg) {
  if (p.empty()) return cfg.eval.protocols;
  if (p == "all") return {"knn", "linear", "head"};
  if (p != "knn" && p != "linear" && p != "head") {
    throw std::invalid_argument("unknown protocol \"" + p + "\" (expected knn, linear, head or all)");
  }
  return {p};
}

std::vector<std::size_t> parse_list(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument(what + ": bad value \"" + item + "\"");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw std::invalid_argument(what + ": empty value list");
  return out;
}

Prepared load_prepared(const RunConfig& cfg) {
  const ArtifactPaths paths = artifact_paths(cfg);
  for (const auto& p : {paths.split, paths.pca_a, paths.pca_b}) {
    if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (run `knowcl prepare` first)");
  }
  const Scene scene = load_scene(cfg);
  return prepare_from(scene, load_split(paths.split), load_pca(paths.pca_a), load_pca(paths.pca_b));
}

Model open_checkpoint(const RunConfig& cfg, const std::string& explicit_path, Mode mode) {
  const fs::path path = explicit_path.empty() ? artifact_paths(cfg).checkpoint(mode) : fs::path(explicit_path);
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path.string() + " (run `knowcl train` first)");
  return load_checkpoint(path);
}

json report_json(const EvalResult& r, Mode mode) {
  json j = r.metrics.to_json();
  j["protocol"] = r.protocol;
  if (r.protocol == "knn") j["k"] = r.k;
  j["mode"] = to_string(mode);
  return j;
}

std::string metrics_name(Mode mode, const EvalResult& r) {
  std::string s = "metrics_" + to_string(mode) + "_" + r.protocol;
  if (r.protocol == "knn") s += "_k" + std::to_string(r.k);
  return s + ".json";
}

void write_map(Model& model, const Prepared& prep, const RunConfig& cfg, Mode mode, const std::string& protocol,
               std::size_t k, const std::vector<MapScope>& scopes) {
  const std::vector<std::int32_t> raster = predict_scene(model, prep, cfg, protocol, k);
  const std::string stem = "map_" + to_string(mode) + "_" + protocol;
  GroundTruth pred(prep.gt.rows, prep.gt.cols, prep.gt.num_classes);
  pred.labels = raster;
  pred.class_names = prep.gt.class_names;
  save_ground_truth(pred, cfg.out_dir / ("pred_" + to_string(mode) + "_" + protocol));
  for (MapScope s : scopes) {
    const fs::path png = cfg.out_dir / (stem + "_" + to_string(s) + ".png");
    render_map(raster, prep.gt, png, s);
    std::cout << "wrote " << png.string() << "\n";
  }
}

int cmd_synth(const Globals& g) {
  const RunConfig cfg = load_config(g);
  if (!cfg.data.synth) throw std::invalid_argument("synth: config has no data.synth section");
  SynthScene s = synth_cube(*cfg.data.synth);
  s.cube.name = cfg.name;
  const ArtifactPaths paths = artifact_paths(cfg);
  fs::create_directories(paths.dir);
  save_cube(s.cube, paths.cube);
  save_ground_truth(s.ground_truth, paths.ground_truth);
  // Re-read so a bad write fails the command.
  if (!(load_cube(paths.cube) == s.cube) || !(load_ground_truth(paths.ground_truth) == s.ground_truth)) {
    throw std::runtime_error("synth: written rasters do not read back identically");
  }
  std::cout << "wrote " << raster_paths(paths.cube).sidecar.string() << " and "
            << raster_paths(paths.ground_truth).sidecar.string() << "\n";
  return 0;
}

int cmd_prepare(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const Scene scene = load_scene(cfg);
  const Prepared prep = prepare(scene, cfg);
  const ArtifactPaths paths = artifact_paths(cfg);
  fs::create_directories(paths.dir);
  save_split(prep.split, paths.split);
  save_pca(prep.pca_a, paths.pca_a);
  save_pca(prep.pca_b, paths.pca_b);
  validate_split(load_split(paths.split), scene.gt);
  std::vector<std::size_t> train(static_cast<std::size_t>(scene.gt.num_classes), 0);
  std::vector<std::size_t> test(train.size(), 0);
  for (const auto& p : prep.split.train) ++train[static_cast<std::size_t>(p.label - 1)];
  for (const auto& p : prep.split.test) ++test[static_cast<std::size_t>(p.label - 1)];
  std::cout << "class\ttrain\ttest\n";
  for (std::size_t c = 0; c < train.size(); ++c) std::cout << c + 1 << "\t" << train[c] << "\t" << test[c] << "\n";
  std::cout << "wrote " << paths.split.string() << ", " << paths.pca_a.string() << ", " << paths.pca_b.string()
            << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& mode_flag) {
  RunConfig cfg = load_config(g);
  if (!mode_flag.empty()) cfg.train.train.mode = mode_from_string(mode_flag);
  const Mode mode = cfg.train.train.mode;
  const Prepared prep = load_prepared(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  TrainRun run = run_training(prep, cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const ArtifactPaths paths = artifact_paths(cfg);
  save_checkpoint(paths.checkpoint(mode), run.model);
  io::write_text(paths.report(mode), run.report.to_ndjson());
  load_checkpoint(paths.checkpoint(mode));
  for (const auto& e : run.report.epochs) std::cout << to_json(e).dump() << "\n";
  std::cout << "trained " << to_string(mode) << " for " << run.report.total_steps << " steps in " << secs
            << " s; wrote " << paths.checkpoint(mode).string() << "\n";
  return 0;
}

struct EvalFlags {
  std::string protocol;
  std::optional<std::size_t> k;
  std::string checkpoint;
  std::string mode;
  std::string sweep;
  bool maps = false;
};

int cmd_eval(const Globals& g, const EvalFlags& f) {
  RunConfig cfg = load_config(g);
  if (!f.mode.empty()) cfg.train.train.mode = mode_from_string(f.mode);
  const Mode mode = cfg.train.train.mode;
  const Prepared prep = load_prepared(cfg);
  Model model = open_checkpoint(cfg, f.checkpoint, mode);
  const std::size_t k = f.k.value_or(cfg.eval.k);

  if (!f.sweep.empty()) {
    const auto eq = f.sweep.find('=');
    if (eq == std::string::npos || f.sweep.substr(0, eq) != "k") {
      throw std::invalid_argument("eval --sweep expects k=<list>, got \"" + f.sweep + "\"");
    }
    const std::vector<EvalResult> rows = knn_sweep(model, prep, cfg, parse_list(f.sweep.substr(eq + 1), "k"));
    std::ostringstream tsv;
    tsv << "k\toa\taa\tkappa\n";
    json arr = json::array();
    for (const auto& r : rows) {
      tsv << r.k << "\t" << r.metrics.oa << "\t" << r.metrics.aa << "\t" << r.metrics.kappa << "\n";
      arr.push_back(report_json(r, mode));
    }
    const std::string stem = "sweep_k_" + to_string(mode);
    io::write_text(cfg.out_dir / (stem + ".tsv"), tsv.str());
    io::write_json(cfg.out_dir / (stem + ".json"), arr);
    std::cout << tsv.str();
    return 0;
  }

  for (const std::string& protocol : expand_protocols(f.protocol, cfg)) {
    const EvalResult r = evaluate(model, prep, cfg, protocol, k);
    const json j = report_json(r, mode);
    io::write_json(cfg.out_dir / metrics_name(mode, r), j);
    std::cout << j.dump() << "\n";
    if (f.maps || !cfg.eval.maps.empty()) {
      const std::vector<MapScope> scopes =
          cfg.eval.maps.empty() ? std::vector<MapScope>{MapScope::labeled_only, MapScope::full_image} : cfg.eval.maps;
      write_map(model, prep, cfg, mode, protocol, k, scopes);
    }
  }
  return 0;
}

struct MapFlags {
  std::string protocol;
  std::optional<std::size_t> k;
  std::string checkpoint;
  std::string mode;
  std::string scope;
};

int cmd_map(const Globals& g, const MapFlags& f) {
  RunConfig cfg = load_config(g);
  if (!f.mode.empty()) cfg.train.train.mode = mode_from_string(f.mode);
  const Mode mode = cfg.train.train.mode;
  const Prepared prep = load_prepared(cfg);
  Model model = open_checkpoint(cfg, f.checkpoint, mode);
  std::vector<MapScope> scopes = cfg.eval.maps;
  if (f.scope == "both" || (f.scope.empty() && scopes.empty())) {
    scopes = {MapScope::labeled_only, MapScope::full_image};
  } else if (!f.scope.empty()) {
    scopes = {map_scope_from_string(f.scope)};
  }
  for (const std::string& protocol : expand_protocols(f.protocol, cfg)) {
    write_map(model, prep, cfg, mode, protocol, f.k.value_or(cfg.eval.k), scopes);
  }
  return 0;
}

void apply_sweep_value(RunConfig& cfg, const std::string& param, std::size_t v) {
  if (param == "crop_size") {
    cfg.augment.crop_size = v;
    cfg.augment.patch_size = std::max(cfg.augment.patch_size, v % 2 == 1 ? v : v + 1);
  } else if (param == "batch_size") {
    cfg.train.train.batch_size = v;
  } else if (param == "pca_components") {
    cfg.pca.components = v;
    cfg.backbone.in_channels = v;
  } else {
    throw std::invalid_argument("sweep: unknown parameter \"" + param +
                                "\" (expected crop_size, batch_size, pca_components or k)");
  }
  cfg.validate();
}

int cmd_sweep(const Globals& g, const std::string& param, const std::string& values, const std::string& mode_flag) {
  RunConfig cfg = load_config(g);
  if (!mode_flag.empty()) cfg.train.train.mode = mode_from_string(mode_flag);
  const Mode mode = cfg.train.train.mode;
  std::vector<std::size_t> vals;
  if (!values.empty()) {
    vals = parse_list(values, param);
  } else if (param == "crop_size") {
    vals = cfg.sweep.crop_size;
  } else if (param == "batch_size") {
    vals = cfg.sweep.batch_size;
  } else if (param == "pca_components") {
    vals = cfg.sweep.pca_components;
  } else if (param == "k") {
    vals = cfg.sweep.k;
  }
  if (vals.empty()) throw std::invalid_argument("sweep: no values for \"" + param + "\"");

  const Scene scene = load_scene(cfg);
  std::vector<EvalResult> rows;
  if (param == "k") {
    const Prepared prep = prepare(scene, cfg);
    TrainRun run = run_training(prep, cfg);
    rows = knn_sweep(run.model, prep, cfg, vals);
  } else {
    for (std::size_t v : vals) {
      RunConfig c = cfg;
      apply_sweep_value(c, param, v);
      const Prepared prep = prepare(scene, c);
      TrainRun run = run_training(prep, c);
      rows.push_back(evaluate(run.model, prep, c, "knn", c.eval.k));
      std::cerr << param << "=" << v << " oa=" << rows.back().metrics.oa << "\n";
    }
  }

  std::ostringstream tsv;
  tsv << param << "\toa\taa\tkappa\n";
  json arr = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const MetricsReport& m = rows[i].metrics;
    tsv << vals[i] << "\t" << m.oa << "\t" << m.aa << "\t" << m.kappa << "\n";
    json j = report_json(rows[i], mode);
    j[param] = vals[i];
    arr.push_back(std::move(j));
  }
  fs::create_directories(cfg.out_dir);
  const std::string stem = "sweep_" + param + "_" + to_string(mode);
  io::write_text(cfg.out_dir / (stem + ".tsv"), tsv.str());
  io::write_json(cfg.out_dir / (stem + ".json"), arr);
  std::cout << tsv.str();
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"knowcl: knowledge-guided contrastive learning for hyperspectral scenes"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("-c,--config", g.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override training and augmentation seed");
  app.add_option("--out-dir", g.out_dir, "override output directory");
  app.add_flag("--deterministic,!--no-deterministic", g.deterministic, "deterministic execution");

  auto* synth = app.add_subcommand("synth", "write the synthetic cube and ground truth");
  auto* prep = app.add_subcommand("prepare", "write the split manifest and PCA models");

  std::string train_mode;
  auto* train = app.add_subcommand("train", "train a model and write checkpoint + report");
  train->add_option("--mode", train_mode, "supervised, unsupervised or semisupervised");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--protocol", ef.protocol, "knn, linear, head or all");
  eval->add_option("--k", ef.k, "neighbors for knn");
  eval->add_option("--checkpoint", ef.checkpoint, "checkpoint path");
  eval->add_option("--mode", ef.mode, "mode whose checkpoint to load");
  eval->add_option("--sweep", ef.sweep, "k=<comma list>");
  eval->add_flag("--maps", ef.maps, "also render classification maps");

  MapFlags mf;
  auto* map = app.add_subcommand("map", "render classification maps");
  map->add_option("--protocol", mf.protocol, "knn, linear, head or all");
  map->add_option("--k", mf.k, "neighbors for knn");
  map->add_option("--checkpoint", mf.checkpoint, "checkpoint path");
  map->add_option("--mode", mf.mode, "mode whose checkpoint to load");
  map->add_option("--scope", mf.scope, "labeled_only, full_image or both");

  std::string sweep_param, sweep_values, sweep_mode;
  auto* sweep = app.add_subcommand("sweep", "retrain across values of one hyperparameter");
  sweep->add_option("--param", sweep_param, "crop_size, batch_size, pca_components or k")->required();
  sweep->add_option("--values", sweep_values, "comma list overriding the config");
  sweep->add_option("--mode", sweep_mode, "training mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(g);
    if (*prep) return cmd_prepare(g);
    if (*train) return cmd_train(g, train_mode);
    if (*eval) return cmd_eval(g, ef);
    if (*map) return cmd_map(g, mf);
    if (*sweep) return cmd_sweep(g, sweep_param, sweep_values, sweep_mode);
  } catch (const std::exception& e) {
    std::cerr << "knowcl: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace knowcl::cli

int main(int argc, char** argv) { return knowcl::cli::run(argc, argv); }
