#include "knowcl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "knowcl/losses.hpp"
#include "knowcl/optim.hpp"
#include "knowcl/parallel.hpp"

namespace knowcl {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::supervised: return "supervised";
    case Mode::unsupervised: return "unsupervised";
    case Mode::semisupervised: return "semisupervised";
  }
  throw std::invalid_argument("unknown mode");
}

Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::supervised, Mode::unsupervised, Mode::semisupervised}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown training mode \"" + s + "\" (expected supervised, unsupervised or semisupervised)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train: " + m); };
  if (epochs < 1) fail("epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (mode != Mode::supervised && batch_size < 2) fail("batch_size must be at least 2 for contrastive modes");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  Temperature{tau}.validate();
  if (!(grad_clip > 0.0)) fail("grad_clip must be positive");
  if (initial_loss_weights) LossWeights{{(*initial_loss_weights)[0], (*initial_loss_weights)[1]}}.validate();
}

LabeledSet labeled_from(std::span<const LabeledPixel> pixels) {
  LabeledSet s;
  for (const auto& p : pixels) {
    s.pixels.push_back(p.at);
    s.targets.push_back(p.label - 1);
  }
  return s;
}

UnlabeledSet unlabeled_from(std::span<const LabeledPixel> pixels) {
  UnlabeledSet s;
  for (const auto& p : pixels) s.pixels.push_back(p.at);
  return s;
}

double TrainReport::final_loss() const {
  if (epochs.empty()) throw std::logic_error("train report has no epochs");
  return epochs.back().fused_loss;
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j{{"record", "epoch"}, {"epoch", r.epoch}, {"lr", r.lr}, {"fused_loss", r.fused_loss},
                   {"seconds", r.seconds}};
  if (r.supervised_loss) j["supervised_loss"] = *r.supervised_loss;
  if (r.contrastive_loss) j["contrastive_loss"] = *r.contrastive_loss;
  if (r.positive_similarity) j["positive_similarity"] = *r.positive_similarity;
  if (r.weights) {
    j["w_supervised"] = (*r.weights)[0];
    j["w_contrastive"] = (*r.weights)[1];
  }
  return j;
}

nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j{{"record", "step"}, {"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr},
                   {"fused_loss", r.fused_loss}};
  if (r.supervised_loss) j["supervised_loss"] = *r.supervised_loss;
  if (r.contrastive_loss) j["contrastive_loss"] = *r.contrastive_loss;
  if (r.weights) {
    j["w_supervised"] = (*r.weights)[0];
    j["w_contrastive"] = (*r.weights)[1];
  }
  return j;
}

std::string TrainReport::to_ndjson() const {
  std::ostringstream out;
  for (const auto& e : epochs) out << to_json(e).dump() << "\n";
  for (const auto& s : steps) out << to_json(s).dump() << "\n";
  return out.str();
}

Model make_model(const BackboneConfig& cfg, int num_classes, Mode mode, std::uint64_t seed) {
  return Model::create(cfg, num_classes, mode != Mode::unsupervised, mode != Mode::supervised, seed);
}

std::size_t steps_per_epoch(std::size_t labeled, std::size_t unlabeled, std::size_t batch_size) {
  const std::size_t n = std::max(labeled, unlabeled);
  return (n + batch_size - 1) / batch_size;
}

namespace {

constexpr std::uint64_t kLabeledStream = 0x4C;
constexpr std::uint64_t kUnlabeledStream = 0x55;

// Endless stream over n items: each pass is a fresh keyed permutation.
class Stream {
 public:
  Stream(std::size_t n, std::uint64_t seed, std::uint64_t tag) : n_(n), seed_(seed), tag_(tag) {}

  void start_epoch(std::size_t epoch) {
    epoch_ = epoch;
    perms_.clear();
  }

  std::size_t index_at(std::size_t pos) {
    const std::size_t pass = pos / n_;
    auto it = perms_.find(pass);
    if (it == perms_.end()) {
      std::vector<std::size_t> perm(n_);
      for (std::size_t i = 0; i < n_; ++i) perm[i] = i;
      Rng rng(mix_key({seed_, epoch_, tag_, pass, 0x5045524DULL}));
      shuffle(perm.begin(), perm.end(), rng);
      it = perms_.emplace(pass, std::move(perm)).first;
    }
    return it->second[pos % n_];
  }

  std::uint64_t draw_key(std::size_t pos) const { return mix_key({seed_, epoch_, tag_, pos}); }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t tag_;
  std::size_t epoch_ = 0;
  std::map<std::size_t, std::vector<std::size_t>> perms_;
};

struct Batch {
  nn::Mat<float> x;                 // rows: labeled A | unlabeled A | unlabeled B
  std::vector<std::uint64_t> keys;  // per row
  std::vector<int> targets;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
};

void copy_patch(const Patch& p, nn::Mat<float>& x, std::size_t row) {
  std::copy(p.values.begin(), p.values.end(), x.row(static_cast<Eigen::Index>(row)).data());
}

class Trainer {
 public:
  Trainer(Model& model, const ViewSource& source, const LabeledSet* labeled, const UnlabeledSet* unlabeled,
          const TrainConfig& cfg)
      : model_(model), source_(source), labeled_(labeled), unlabeled_(unlabeled), cfg_(cfg) {}

  TrainReport run();

 private:
  Batch make_batch(Stream* ls, Stream* us, std::size_t step_in_epoch);
  void step(const Batch& b, StepRecord& rec, double& pos_sim);

  Model& model_;
  const ViewSource& source_;
  const LabeledSet* labeled_;
  const UnlabeledSet* unlabeled_;
  const TrainConfig& cfg_;
  std::size_t lbatch_ = 0;
  std::size_t ubatch_ = 0;
};

Batch Trainer::make_batch(Stream* ls, Stream* us, std::size_t step_in_epoch) {
  const AugmentConfig& aug = source_.augment;
  const GroupedCube& cube = *source_.reduced;
  const std::size_t width = cube.group_a.bands * aug.canonical_size * aug.canonical_size;
  Batch b;
  b.labeled = ls ? lbatch_ : 0;
  b.unlabeled = us ? ubatch_ : 0;
  const std::size_t rows = b.labeled + 2 * b.unlabeled;
  b.x.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  b.keys.resize(rows);
  b.targets.resize(b.labeled);

  std::vector<std::size_t> lidx(b.labeled), uidx(b.unlabeled);
  std::vector<std::uint64_t> lkey(b.labeled), ukey(b.unlabeled);
  for (std::size_t i = 0; i < b.labeled; ++i) {
    const std::size_t pos = step_in_epoch * lbatch_ + i;
    lidx[i] = ls->index_at(pos);
    lkey[i] = ls->draw_key(pos);
    b.targets[i] = labeled_->targets[lidx[i]];
    b.keys[i] = lkey[i];
  }
  for (std::size_t i = 0; i < b.unlabeled; ++i) {
    const std::size_t pos = step_in_epoch * ubatch_ + i;
    uidx[i] = us->index_at(pos);
    ukey[i] = us->draw_key(pos);
    b.keys[b.labeled + i] = mix_key({ukey[i], 0});
    b.keys[b.labeled + b.unlabeled + i] = mix_key({ukey[i], 1});
  }
  const std::size_t threads = cfg_.threads;
  parallel_for(b.labeled + b.unlabeled, threads, [&](std::size_t j) {
    if (j < b.labeled) {
      const Patch p = extract_patch(cube.group_a, labeled_->pixels[lidx[j]], aug.patch_size);
      copy_patch(augment_view(p, aug, mix_key({lkey[j], 0})), b.x, j);
    } else {
      const std::size_t i = j - b.labeled;
      const ViewPair pair = make_view_pair(cube, unlabeled_->pixels[uidx[i]], aug, ukey[i]);
      copy_patch(pair.view_a, b.x, b.labeled + i);
      copy_patch(pair.view_b, b.x, b.labeled + b.unlabeled + i);
    }
  });
  return b;
}

void Trainer::step(const Batch& b, StepRecord& rec, double& pos_sim) {
  const auto nl = static_cast<Eigen::Index>(b.labeled);
  const auto nu = static_cast<Eigen::Index>(b.unlabeled);
  const Encoded<float> enc = model_.encoder->forward(b.x, b.keys, true);
  const Eigen::Index dim = enc.cls.cols();

  nn::Mat<float> dlogits;
  double ce = 0.0;
  if (nl > 0) {
    const nn::Mat<float> h = enc.cls.topRows(nl);
    const nn::Mat<float> logits =
        model_.supervised->forward(h, std::span<const std::uint64_t>(b.keys.data(), b.labeled), true);
    ce = cross_entropy(logits, b.targets, &dlogits);
    rec.supervised_loss = ce;
  }
  nn::Mat<float> dz, dzhat;
  double cl = 0.0;
  if (nu > 0) {
    const nn::Mat<float> h = enc.mean.bottomRows(2 * nu);
    const nn::Mat<float> z = model_.contrastive->forward(h);
    const ContrastiveResult r = contrastive_loss<float>(z.topRows(nu), z.bottomRows(nu), cfg_.tau, &dz, &dzhat);
    cl = r.loss;
    pos_sim = r.positive_similarity;
    rec.contrastive_loss = cl;
  }

  double coef_ce = 1.0, coef_cl = 1.0;
  if (nl > 0 && nu > 0) {
    const std::array<double, 2> w{model_.loss_weights.value(0, 0), model_.loss_weights.value(0, 1)};
    const std::array<double, 2> losses{ce, cl};
    const FusedResult fused = adaptive_fused(losses, w);
    rec.fused_loss = fused.value;
    rec.weights = w;
    coef_ce = fused.d_losses[0];
    coef_cl = fused.d_losses[1];
    if (!cfg_.freeze_loss_weights) {
      model_.loss_weights.grad(0, 0) = static_cast<float>(fused.d_weights[0]);
      model_.loss_weights.grad(0, 1) = static_cast<float>(fused.d_weights[1]);
    }
  } else {
    rec.fused_loss = nl > 0 ? ce : cl;
  }

  nn::Mat<float> d_cls, d_mean;
  if (nl > 0) {
    dlogits *= static_cast<float>(coef_ce);
    d_cls = nn::Mat<float>::Zero(enc.cls.rows(), dim);
    d_cls.topRows(nl) = model_.supervised->backward(dlogits);
  }
  if (nu > 0 && !cfg_.detach_contrastive) {
    nn::Mat<float> dzcat(2 * nu, dz.cols());
    dzcat.topRows(nu) = dz;
    dzcat.bottomRows(nu) = dzhat;
    dzcat *= static_cast<float>(coef_cl);
    d_mean = nn::Mat<float>::Zero(enc.mean.rows(), dim);
    d_mean.bottomRows(2 * nu) = model_.contrastive->backward(dzcat);
  }
  if (d_cls.size() > 0 || d_mean.size() > 0) model_.encoder->backward(d_cls, d_mean);
}

TrainReport Trainer::run() {
  cfg_.validate();
  if (!source_.reduced) throw std::invalid_argument("train: no view source");
  source_.augment.validate();
  const bool use_l = cfg_.mode != Mode::unsupervised;
  const bool use_u = cfg_.mode != Mode::supervised;
  if (use_l) {
    if (!labeled_ || labeled_->pixels.empty()) throw std::invalid_argument("train: empty labeled training set");
    if (labeled_->pixels.size() != labeled_->targets.size()) throw std::invalid_argument("train: label count mismatch");
    if (!model_.supervised) throw std::invalid_argument("train: model lacks a supervised head");
    for (int t : labeled_->targets) {
      if (t < 0 || t >= model_.num_classes) throw std::invalid_argument("train: target outside class range");
    }
  }
  if (use_u) {
    if (!unlabeled_ || unlabeled_->pixels.empty()) throw std::invalid_argument("train: empty unlabeled set");
    if (unlabeled_->pixels.size() < 2) throw std::invalid_argument("train: contrastive batches need N >= 2");
    if (!model_.contrastive) throw std::invalid_argument("train: model lacks a contrastive head");
  }
  if (source_.reduced->group_a.bands != model_.config.in_channels ||
      source_.augment.canonical_size != model_.config.input_size) {
    throw std::invalid_argument("train: view geometry does not match the backbone config");
  }

  const std::size_t nl = use_l ? labeled_->pixels.size() : 0;
  const std::size_t nu = use_u ? unlabeled_->pixels.size() : 0;
  lbatch_ = std::min(cfg_.batch_size, nl);
  ubatch_ = std::min(cfg_.batch_size, nu);
  const std::size_t per_epoch = steps_per_epoch(nl, nu, cfg_.batch_size);
  const std::size_t total = per_epoch * cfg_.epochs;

  if (cfg_.initial_loss_weights) {
    model_.loss_weights.value(0, 0) = static_cast<float>((*cfg_.initial_loss_weights)[0]);
    model_.loss_weights.value(0, 1) = static_cast<float>((*cfg_.initial_loss_weights)[1]);
  }
  nn::ParamRefs<float> params;
  model_.encoder->collect(params);
  if (use_l) model_.supervised->collect(params);
  if (use_u) model_.contrastive->collect(params);
  if (use_l && use_u && !cfg_.freeze_loss_weights) params.push_back(&model_.loss_weights);
  AdamW opt(params);

  std::optional<Stream> ls, us;
  if (use_l) ls.emplace(nl, cfg_.seed, kLabeledStream);
  if (use_u) us.emplace(nu, cfg_.seed, kUnlabeledStream);

  TrainReport report;
  report.mode = cfg_.mode;
  report.total_steps = total;
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (ls) ls->start_epoch(epoch);
    if (us) us->start_epoch(epoch);
    EpochRecord er;
    er.epoch = epoch + 1;
    er.lr = cosine_lr(global, total, cfg_.lr);
    double sum_ce = 0, sum_cl = 0, sum_f = 0, sum_pos = 0;
    for (std::size_t s = 0; s < per_epoch; ++s, ++global) {
      const Batch batch = make_batch(ls ? &*ls : nullptr, us ? &*us : nullptr, s);
      StepRecord rec;
      rec.step = global;
      rec.epoch = epoch + 1;
      rec.lr = cosine_lr(global, total, cfg_.lr);
      opt.zero_grad();
      double pos = 0.0;
      step(batch, rec, pos);
      clip_grad_norm(params, cfg_.grad_clip);
      opt.step(rec.lr, cfg_.weight_decay);
      if (!std::isfinite(rec.fused_loss)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(global));
      }
      sum_ce += rec.supervised_loss.value_or(0.0);
      sum_cl += rec.contrastive_loss.value_or(0.0);
      sum_f += rec.fused_loss;
      sum_pos += pos;
      report.steps.push_back(rec);
    }
    const double n = static_cast<double>(per_epoch);
    if (use_l) er.supervised_loss = sum_ce / n;
    if (use_u) {
      er.contrastive_loss = sum_cl / n;
      er.positive_similarity = sum_pos / n;
    }
    er.fused_loss = sum_f / n;
    if (use_l && use_u) {
      er.weights = std::array<double, 2>{model_.loss_weights.value(0, 0), model_.loss_weights.value(0, 1)};
    }
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(er);
  }
  return report;
}

}  // namespace

TrainReport train_supervised(Model& model, const ViewSource& source, const LabeledSet& data, const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.mode = Mode::supervised;
  return Trainer(model, source, &data, nullptr, c).run();
}

TrainReport train_unsupervised(Model& model, const ViewSource& source, const UnlabeledSet& data,
                               const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.mode = Mode::unsupervised;
  return Trainer(model, source, nullptr, &data, c).run();
}

TrainReport train_semisupervised(Model& model, const ViewSource& source, const LabeledSet& labeled,
                                 const UnlabeledSet& unlabeled, const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.mode = Mode::semisupervised;
  return Trainer(model, source, &labeled, &unlabeled, c).run();
}

TrainReport train(Model& model, const ViewSource& source, const LabeledSet& labeled, const UnlabeledSet& unlabeled,
                  const TrainConfig& cfg) {
  switch (cfg.mode) {
    case Mode::supervised: return train_supervised(model, source, labeled, cfg);
    case Mode::unsupervised: return train_unsupervised(model, source, unlabeled, cfg);
    case Mode::semisupervised: return train_semisupervised(model, source, labeled, unlabeled, cfg);
  }
  throw std::invalid_argument("unknown mode");
}

}  // namespace knowcl
