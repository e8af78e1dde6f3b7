#include "mfn/training.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "mfn/errors.hpp"
#include "mfn/image_io.hpp"

namespace mfn {
namespace {

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
  for (auto p : params) p.requires_grad_(on);
}

double value_of(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

void require_finite(const torch::Tensor& t, const char* name) {
  if (!std::isfinite(t.item<double>())) throw NumericError(std::string("loss term '") + name + "' is not finite");
}

}  // namespace

double lr_schedule(int64_t iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.max_iters)
    throw ConfigError("lr_schedule: iteration " + std::to_string(iter) + " outside [0, " +
                      std::to_string(cfg.max_iters) + "]");
  const int64_t start = cfg.max_iters - cfg.decay_window;
  if (iter < start || cfg.decay_window == 0) return iter < cfg.max_iters ? cfg.lr_init : cfg.lr_final;
  const double t = static_cast<double>(iter - start) / static_cast<double>(cfg.decay_window);
  // Convex form so both endpoints are exact.
  return cfg.lr_init * (1.0 - t) + cfg.lr_final * t;
}

TrainingSet::TrainingSet(std::vector<torch::Tensor> images, std::vector<data::BinaryMask> masks, DataConfig cfg)
    : cfg_(std::move(cfg)), count_(images.size()), images_(std::move(images)), masks_(std::move(masks)) {
  if (images_.size() != masks_.size()) throw DataError("training set needs one mask per image");
}

TrainingSet TrainingSet::load(const std::filesystem::path& dir, const DataConfig& cfg) {
  TrainingSet set;
  set.cfg_ = cfg;
  for (auto& e : data::load_prepared(dir))
    if (e.split == data::Split::train) set.entries_.push_back(std::move(e));
  set.count_ = set.entries_.size();
  return set;
}

std::pair<torch::Tensor, data::BinaryMask> TrainingSet::item(size_t index) const {
  if (!images_.empty()) return {images_[index], masks_[index]};
  const auto& e = entries_[index];
  return {io::load_image(e.image), io::load_mask(e.mask)};
}

Batch TrainingSet::sample(int64_t iteration, int64_t batch_size, uint64_t seed) const {
  if (empty()) throw DataError("training set is empty");
  data::Rng rng(data::derive_seed(seed, static_cast<uint64_t>(iteration)));
  std::uniform_int_distribution<size_t> pick(0, count_ - 1);
  std::vector<torch::Tensor> images, masks;
  for (int64_t b = 0; b < batch_size; ++b) {
    const size_t index = pick(rng);
    auto [image, mask] = item(index);
    const std::string name = entries_.empty() ? "image #" + std::to_string(index) : entries_[index].image.string();
    auto pair = data::make_training_pair(image, mask, cfg_, data::Split::train, rng, name);
    images.push_back(pair.gt * 2.0 - 1.0);
    masks.push_back(pair.mask.to_tensor());
  }
  return {torch::stack(images), torch::stack(masks)};
}

Trainer::Trainer(const Config& config) : config_(config) {
  model_ = std::make_unique<InpaintingModel>(config_);
  const auto& t = config_.train;
  auto opts = torch::optim::AdamOptions(t.lr_init).betas({t.adam_beta1, t.adam_beta2});
  opt_g_ = std::make_unique<torch::optim::Adam>(model_->generator_parameters(), opts);
  opt_d_ = std::make_unique<torch::optim::Adam>(model_->discriminator_parameters(), opts);
}

void Trainer::set_lr(double lr) {
  for (auto* opt : {opt_g_.get(), opt_d_.get()})
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

LossReport Trainer::warmup_step(const Batch& batch, double lr) {
  auto& m = *model_;
  m.train(true);
  opt_g_->zero_grad();
  auto mask = batch.mask.to(batch.image.dtype());
  auto priors = m.prompter()->forward(batch.image * (1.0 - mask), mask);
  auto prior = prior_loss(m.project(priors), m.pretext_targets(batch.image));
  require_finite(prior, "prior");
  prior.backward();
  opt_g_->step();
  LossReport r;
  r.iteration = ++iteration_;
  r.prior = r.total = prior.item<double>();
  r.lr = lr;
  return r;
}

LossReport Trainer::step(const Batch& batch) {
  const double lr = lr_schedule(iteration_, config_.train);
  set_lr(lr);
  if (iteration_ < config_.train.warmup_iters && model_->has_projection()) return warmup_step(batch, lr);

  auto& m = *model_;
  const auto& w = config_.loss;
  m.train(true);
  auto out = m.forward(batch.image, batch.mask);
  auto mask = batch.mask.to(batch.image.dtype());

  // Discriminator: real vs the detached composite against the soft target.
  auto& d = m.discriminator();
  set_requires_grad(m.discriminator_parameters(), true);
  opt_d_->zero_grad();
  auto d_fake = d->forward(out.composite.detach());
  auto d_real = d->forward(batch.image);
  auto sigma = soft_mask_target(mask, d_fake.size(2), d_fake.size(3), w.sigma_kernel, w.sigma_std);
  auto loss_d = adv_d_loss(d_fake, d_real, sigma);
  require_finite(loss_d, "adv_d");
  loss_d.backward();
  opt_d_->step();

  // Generator and prompter, with D frozen.
  d->eval();
  set_requires_grad(m.discriminator_parameters(), false);
  opt_g_->zero_grad();
  auto targets = m.pretext().extract(batch.image);
  for (auto& t : targets) t = t.detach();
  auto pred_feats = m.pretext().extract(out.prediction);

  LossTerms terms;
  if (m.has_projection()) {
    std::vector<torch::Tensor> prior_targets(targets.begin(), targets.begin() + out.priors.levels.size());
    terms.prior = prior_loss(m.project(out.priors), prior_targets);
  } else {
    terms.prior = torch::zeros({}, batch.image.options());
  }
  terms.rec = rec_loss(out.prediction, batch.image, mask, w.alpha);
  terms.perc = perceptual_loss(pred_feats, targets);
  terms.style = style_loss(pred_feats, targets);
  auto g_fake = d->forward(out.composite);
  terms.adv_g = adv_g_loss(g_fake, downsample_mask(mask, g_fake.size(2), g_fake.size(3)));
  auto total = total_loss(terms, w);
  total.backward();
  opt_g_->step();
  set_requires_grad(m.discriminator_parameters(), true);
  d->train();

  LossReport r;
  r.iteration = ++iteration_;
  r.rec = value_of(terms.rec);
  r.perc = value_of(terms.perc);
  r.style = value_of(terms.style);
  r.adv_g = value_of(terms.adv_g);
  r.adv_d = loss_d.item<double>();
  r.prior = value_of(terms.prior);
  r.total = total.item<double>();
  r.lr = lr;
  return r;
}

TrainLoopResult train_loop(const Config& config, const TrainingSet& dataset, const TrainLoopOptions& options) {
  if (dataset.empty()) throw DataError("training set is empty; nothing to train on");
  validate(config);
  std::filesystem::create_directories(options.out_dir);
  const auto last = options.out_dir / "last.ckpt";
  const auto log_path = options.out_dir / "loss_log.jsonl";

  Trainer trainer(config);
  if (options.resume) {
    if (!std::filesystem::exists(last)) throw DataError("cannot resume: no checkpoint at " + last.string());
    restore(trainer, read_checkpoint(last));
    // Drop log records past the checkpoint; they will be regenerated.
    std::vector<std::string> kept;
    {
      std::ifstream in(log_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (LossReport::from_json(nlohmann::json::parse(line)).iteration <= trainer.iteration()) kept.push_back(line);
      }
    }
    std::ofstream out(log_path, std::ios::trunc);
    for (const auto& l : kept) out << l << '\n';
  } else {
    std::ofstream(log_path, std::ios::trunc);
  }

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw DataError("cannot write " + log_path.string());
  const auto& t = config.train;
  TrainLoopResult result;
  while (trainer.iteration() < t.max_iters) {
    if (options.stop_after && trainer.iteration() >= *options.stop_after) break;
    auto batch = dataset.sample(trainer.iteration(), t.batch_size, t.seed);
    const auto report = trainer.step(batch);
    log << report.to_json().dump() << '\n';
    log.flush();
    if (options.on_step) options.on_step(report);
    if (t.checkpoint_every > 0 && trainer.iteration() % t.checkpoint_every == 0 &&
        trainer.iteration() < t.max_iters) {
      const auto ck = capture(trainer);
      write_checkpoint(options.out_dir / "checkpoints" / ("iter_" + std::to_string(trainer.iteration()) + ".ckpt"),
                       ck);
      write_checkpoint(last, ck);
    }
  }
  write_checkpoint(last, capture(trainer));
  result.iterations = trainer.iteration();
  result.checkpoint = last;
  return result;
}

metrics::Inpainter make_inpainter(InpaintingModel& model) {
  return [&model](const torch::Tensor& gt, const torch::Tensor& mask) {
    torch::NoGradGuard guard;
    model.train(false);
    auto x = gt.unsqueeze(0).to(torch::kFloat) * 2.0 - 1.0;
    auto m = mask.unsqueeze(0).to(torch::kFloat);
    auto out = model.forward(x, m);
    return ((out.prediction.squeeze(0) + 1.0) * 0.5).clamp(0.0, 1.0);
  };
}

std::vector<metrics::EvalSample> load_eval_samples(const std::filesystem::path& prepared, const DataConfig& cfg) {
  const auto dir = std::filesystem::is_directory(prepared) ? prepared : prepared.parent_path();
  if (!std::filesystem::exists(prepared)) throw DataError("manifest not found: " + prepared.string());
  std::vector<metrics::EvalSample> samples;
  data::Rng rng(cfg.seed);
  for (const auto& e : data::load_prepared(dir)) {
    if (e.split != data::Split::test) continue;
    auto pair = data::make_training_pair(io::load_image(e.image), io::load_mask(e.mask), cfg, data::Split::test, rng,
                                         e.image.string());
    samples.push_back({e.image.filename().string(), pair.gt, pair.mask.to_tensor()});
  }
  if (samples.empty()) throw DataError("no test-split entries in " + prepared.string());
  return samples;
}

metrics::MetricTable evaluate_dataset(const std::filesystem::path& checkpoint, const std::filesystem::path& prepared) {
  auto model = load_model(checkpoint);
  const auto samples = load_eval_samples(prepared, model->config().data);
  metrics::ProxyPerceptualDistance proxy(model->pretext_ptr());
  return metrics::evaluate_samples(samples, make_inpainter(*model), &proxy);
}

}  // namespace mfn
