#include "knowcl/config.hpp"

#include <set>
#include <stdexcept>

#include "knowcl/checkpoint.hpp"
#include "knowcl/io.hpp"
#include "knowcl/parallel.hpp"

namespace knowcl {

using nlohmann::json;

std::string to_string(PcaFit f) { return f == PcaFit::scene ? "scene" : "train"; }
std::string to_string(UnlabeledPool p) { return p == UnlabeledPool::train ? "train" : "scene"; }

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& section) {
  if (!obj.is_object()) throw std::invalid_argument(section + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw std::invalid_argument(section + ": unknown key \"" + key + "\"");
  }
}

template <class T>
void read(const json& obj, const std::string& key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(section + ": key \"" + key + "\" has the wrong type");
  }
}

template <class T>
T need(const json& obj, const std::string& key, const std::string& section) {
  const json& v = io::require(obj, key, section);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(section + ": key \"" + key + "\" has the wrong type");
  }
}

SynthSpec parse_synth(const json& j) {
  const std::string s = "data.synth";
  check_keys(j, {"rows", "cols", "bands", "num_classes", "class_signature_separation", "noise_sigma", "region_scale",
                 "seed"},
             s);
  SynthSpec spec;
  spec.rows = need<std::size_t>(j, "rows", s);
  spec.cols = need<std::size_t>(j, "cols", s);
  spec.bands = need<std::size_t>(j, "bands", s);
  spec.num_classes = need<int>(j, "num_classes", s);
  spec.class_signature_separation = need<double>(j, "class_signature_separation", s);
  spec.noise_sigma = need<double>(j, "noise_sigma", s);
  spec.region_scale = need<std::size_t>(j, "region_scale", s);
  spec.seed = need<std::uint64_t>(j, "seed", s);
  spec.validate();
  return spec;
}

json synth_to_json(const SynthSpec& s) {
  return {{"rows", s.rows},
          {"cols", s.cols},
          {"bands", s.bands},
          {"num_classes", s.num_classes},
          {"class_signature_separation", s.class_signature_separation},
          {"noise_sigma", s.noise_sigma},
          {"region_scale", s.region_scale},
          {"seed", s.seed}};
}

AugmentConfig parse_augment(const json& j) {
  const std::string s = "augment";
  check_keys(j, {"patch_size", "crop_size", "canonical_size", "flip_prob", "blur_prob", "blur_sigma_range", "seed"}, s);
  AugmentConfig a;
  read(j, "patch_size", a.patch_size, s);
  read(j, "crop_size", a.crop_size, s);
  read(j, "canonical_size", a.canonical_size, s);
  read(j, "flip_prob", a.flip_prob, s);
  read(j, "blur_prob", a.blur_prob, s);
  if (j.contains("blur_sigma_range")) {
    const auto r = need<std::vector<double>>(j, "blur_sigma_range", s);
    if (r.size() != 2) throw std::invalid_argument("augment: blur_sigma_range needs two values");
    a.blur_sigma_min = r[0];
    a.blur_sigma_max = r[1];
  }
  read(j, "seed", a.seed, s);
  a.validate();
  return a;
}

TrainSection parse_train(const json& j) {
  const std::string s = "train";
  check_keys(j, {"mode", "epochs", "batch_size", "lr", "weight_decay", "tau", "seed", "grad_clip", "unlabeled_pool",
                 "unlabeled_limit"},
             s);
  TrainSection t;
  if (j.contains("mode")) t.train.mode = mode_from_string(need<std::string>(j, "mode", s));
  read(j, "epochs", t.train.epochs, s);
  read(j, "batch_size", t.train.batch_size, s);
  read(j, "lr", t.train.lr, s);
  read(j, "weight_decay", t.train.weight_decay, s);
  read(j, "tau", t.train.tau, s);
  read(j, "seed", t.train.seed, s);
  read(j, "grad_clip", t.train.grad_clip, s);
  if (j.contains("unlabeled_pool")) {
    const auto p = need<std::string>(j, "unlabeled_pool", s);
    if (p == "train") t.unlabeled_pool = UnlabeledPool::train;
    else if (p == "scene") t.unlabeled_pool = UnlabeledPool::scene;
    else throw std::invalid_argument("train: unlabeled_pool must be \"train\" or \"scene\"");
  }
  read(j, "unlabeled_limit", t.unlabeled_limit, s);
  t.train.validate();
  return t;
}

EvalConfig parse_eval(const json& j) {
  const std::string s = "eval";
  check_keys(j, {"protocols", "k", "tau_knn", "linear_epochs", "linear_lr", "pooling", "maps"}, s);
  EvalConfig e;
  read(j, "protocols", e.protocols, s);
  read(j, "k", e.k, s);
  read(j, "tau_knn", e.tau_knn, s);
  read(j, "linear_epochs", e.linear_epochs, s);
  read(j, "linear_lr", e.linear_lr, s);
  if (j.contains("pooling")) e.pooling = pooling_from_string(need<std::string>(j, "pooling", s));
  if (j.contains("maps")) {
    for (const auto& m : need<std::vector<std::string>>(j, "maps", s)) e.maps.push_back(map_scope_from_string(m));
  }
  for (const auto& p : e.protocols) {
    if (p != "knn" && p != "linear" && p != "head") {
      throw std::invalid_argument("eval: unknown protocol \"" + p + "\" (expected knn, linear or head)");
    }
  }
  if (e.k < 1) throw std::invalid_argument("eval: k must be at least 1");
  if (!(e.tau_knn > 0.0)) throw std::invalid_argument("eval: tau_knn must be positive");
  if (e.linear_epochs < 1 || !(e.linear_lr > 0.0)) throw std::invalid_argument("eval: bad linear probe settings");
  return e;
}

SweepConfig parse_sweep(const json& j) {
  const std::string s = "sweep";
  check_keys(j, {"crop_size", "batch_size", "pca_components", "k"}, s);
  SweepConfig w;
  read(j, "crop_size", w.crop_size, s);
  read(j, "batch_size", w.batch_size, s);
  read(j, "pca_components", w.pca_components, s);
  read(j, "k", w.k, s);
  return w;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, {"name", "out_dir", "deterministic", "data", "split", "pca", "augment", "backbone", "train", "eval",
                 "sweep"},
             "config");
  RunConfig c;
  read(j, "name", c.name, "config");
  if (j.contains("out_dir")) c.out_dir = need<std::string>(j, "out_dir", "config");
  read(j, "deterministic", c.deterministic, "config");

  const json& data = io::require(j, "data", "config");
  check_keys(data, {"synth", "cube", "ground_truth"}, "data");
  if (data.contains("synth")) {
    if (data.contains("cube") || data.contains("ground_truth")) {
      throw std::invalid_argument("data: give either synth or cube/ground_truth, not both");
    }
    c.data.synth = parse_synth(data.at("synth"));
  } else {
    c.data.cube = need<std::string>(data, "cube", "data");
    c.data.ground_truth = need<std::string>(data, "ground_truth", "data");
  }

  if (j.contains("split")) {
    const json& s = j.at("split");
    check_keys(s, {"ratio", "per_class"}, "split");
    read(s, "ratio", c.split.ratio, "split");
    read(s, "per_class", c.split.per_class, "split");
  }
  if (j.contains("pca")) {
    const json& p = j.at("pca");
    check_keys(p, {"components", "fit"}, "pca");
    read(p, "components", c.pca.components, "pca");
    if (p.contains("fit")) {
      const auto f = need<std::string>(p, "fit", "pca");
      if (f == "scene") c.pca.fit = PcaFit::scene;
      else if (f == "train") c.pca.fit = PcaFit::train;
      else throw std::invalid_argument("pca: fit must be \"scene\" or \"train\"");
    }
  }
  if (j.contains("augment")) c.augment = parse_augment(j.at("augment"));

  json bb = j.contains("backbone") ? j.at("backbone") : json::object();
  if (!bb.is_object()) throw std::invalid_argument("backbone: expected an object");
  if (!bb.contains("in_channels")) bb["in_channels"] = c.pca.components;
  if (!bb.contains("input_size")) bb["input_size"] = c.augment.canonical_size;
  c.backbone = backbone_config_from_json(bb);

  if (j.contains("train")) c.train = parse_train(j.at("train"));
  if (j.contains("eval")) c.eval = parse_eval(j.at("eval"));
  if (j.contains("sweep")) c.sweep = parse_sweep(j.at("sweep"));
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_json(io::read_json(path));
}

json RunConfig::to_json() const {
  json data;
  if (this->data.synth) {
    data["synth"] = synth_to_json(*this->data.synth);
  } else {
    data["cube"] = this->data.cube.string();
    data["ground_truth"] = this->data.ground_truth.string();
  }
  json split{{"ratio", this->split.ratio}};
  if (!this->split.per_class.empty()) split["per_class"] = this->split.per_class;
  json maps = json::array();
  for (auto m : eval.maps) maps.push_back(knowcl::to_string(m));
  const TrainConfig& t = train.train;
  return {
      {"name", name},
      {"out_dir", out_dir.string()},
      {"deterministic", deterministic},
      {"data", data},
      {"split", split},
      {"pca", {{"components", pca.components}, {"fit", knowcl::to_string(pca.fit)}}},
      {"augment",
       {{"patch_size", augment.patch_size},
        {"crop_size", augment.crop_size},
        {"canonical_size", augment.canonical_size},
        {"flip_prob", augment.flip_prob},
        {"blur_prob", augment.blur_prob},
        {"blur_sigma_range", {augment.blur_sigma_min, augment.blur_sigma_max}},
        {"seed", augment.seed}}},
      {"backbone", knowcl::to_json(backbone)},
      {"train",
       {{"mode", knowcl::to_string(t.mode)},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.lr},
        {"weight_decay", t.weight_decay},
        {"tau", t.tau},
        {"seed", t.seed},
        {"grad_clip", t.grad_clip},
        {"unlabeled_pool", knowcl::to_string(train.unlabeled_pool)},
        {"unlabeled_limit", train.unlabeled_limit}}},
      {"eval",
       {{"protocols", eval.protocols},
        {"k", eval.k},
        {"tau_knn", eval.tau_knn},
        {"linear_epochs", eval.linear_epochs},
        {"linear_lr", eval.linear_lr},
        {"pooling", knowcl::to_string(eval.pooling)},
        {"maps", maps}}},
      {"sweep",
       {{"crop_size", sweep.crop_size},
        {"batch_size", sweep.batch_size},
        {"pca_components", sweep.pca_components},
        {"k", sweep.k}}},
  };
}

void RunConfig::validate() const {
  if (name.empty()) throw std::invalid_argument("config: name must not be empty");
  if (split.per_class.empty() && !(split.ratio > 0.0 && split.ratio <= 1.0)) {
    throw std::invalid_argument("split: ratio must lie in (0, 1]");
  }
  if (pca.components < 1) throw std::invalid_argument("pca: components must be at least 1");
  if (data.synth && pca.components > data.synth->bands / 2) {
    throw std::invalid_argument("pca: components " + std::to_string(pca.components) + " exceed the " +
                                std::to_string(data.synth->bands / 2) + " bands of the smaller spectral group");
  }
  augment.validate();
  backbone.validate();
  if (backbone.in_channels != pca.components) {
    throw std::invalid_argument("backbone: in_channels " + std::to_string(backbone.in_channels) +
                                " must equal pca components " + std::to_string(pca.components));
  }
  if (backbone.input_size != augment.canonical_size) {
    throw std::invalid_argument("backbone: input_size " + std::to_string(backbone.input_size) +
                                " must equal augment canonical_size " + std::to_string(augment.canonical_size));
  }
  train.train.validate();
}

void RunConfig::set_seed(std::uint64_t seed) {
  train.train.seed = seed;
  augment.seed = seed;
}

std::size_t RunConfig::threads() const { return default_threads(); }

}  // namespace knowcl
