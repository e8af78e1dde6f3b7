#include "mfn/model.hpp"

#include "mfn/errors.hpp"

namespace mfn {
namespace {

void append(std::vector<std::pair<std::string, torch::Tensor>>& out, const std::string& prefix,
            const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) out.emplace_back(prefix + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) out.emplace_back(prefix + b.key(), b.value());
}

}  // namespace

ModelVariant apply_ablation(Ablation ablation) {
  ModelVariant v;
  v.ablation = ablation;
  switch (ablation) {
    case Ablation::none: break;
    case Ablation::no_semantic_supervision: v.semantic_supervision = false; break;
    case Ablation::no_lpt: v.use_lpt = false; break;
    case Ablation::no_multiscale: v.multiscale = false; break;
    case Ablation::no_attention_transfer: v.attention_transfer = false; break;
    case Ablation::no_spa: v.use_spa = false; break;
  }
  return v;
}

ModelVariant apply_ablation(std::string_view flag) { return apply_ablation(parse_ablation(flag)); }

InpaintingModel::InpaintingModel(const Config& config) : InpaintingModel(config, apply_ablation(config.train.ablation)) {}

InpaintingModel::InpaintingModel(const Config& config, const ModelVariant& variant)
    : config_(config), variant_(variant) {
  validate(config_);
  torch::manual_seed(config_.model.init_seed);
  const auto& m = config_.model;
  const int levels = variant_.multiscale ? m.prompter_levels : 1;

  pretext_ = std::make_shared<RandomConvExtractor>(config_.pretext.seed, config_.pretext.channels);

  PrompterOptions po;
  po.channels = m.prompter_channels;
  po.prior_channels = m.prior_channels;
  po.depth = m.prompter_depth;
  po.levels = levels;
  po.use_spa = variant_.use_spa;
  prompter_ = Prompter(po);

  if (variant_.semantic_supervision) {
    // Extractor channels are listed fine to coarse; priors run coarse to fine.
    std::vector<int64_t> targets(config_.pretext.channels.rbegin(), config_.pretext.channels.rend());
    targets.resize(static_cast<size_t>(levels));
    projection_ = PriorProjection(m.prior_channels, targets);
  }

  GeneratorOptions go;
  go.encoder_channels = m.encoder_channels;
  go.prior_channels = m.prior_channels;
  go.prior_levels = levels;
  go.lpt_hidden = m.lpt_hidden;
  go.rn_eps = m.rn_eps;
  go.use_lpt = variant_.use_lpt;
  go.attention_transfer = variant_.attention_transfer;
  generator_ = Generator(go);

  discriminator_ = Discriminator(m.disc_channels);
}

ModelOutput InpaintingModel::forward(const torch::Tensor& image, const torch::Tensor& mask) {
  ModelOutput out;
  auto m = mask.to(image.dtype());
  out.priors = prompter_->forward(image * (1.0 - m), m);
  out.state = generator_->forward(image, m, out.priors);
  out.prediction = out.state.output;
  out.composite = composite_output(out.prediction, image, m);
  return out;
}

std::vector<torch::Tensor> InpaintingModel::pretext_targets(const torch::Tensor& image) const {
  torch::NoGradGuard guard;
  auto feats = pretext_->extract(image);
  feats.resize(variant_.multiscale ? static_cast<size_t>(config_.model.prompter_levels) : 1);
  return feats;
}

std::vector<torch::Tensor> InpaintingModel::project(const PriorPyramid& priors) {
  if (!has_projection()) return {};
  return projection_->forward(priors);
}

void InpaintingModel::train(bool on) {
  prompter_->train(on);
  if (has_projection()) projection_->train(on);
  generator_->train(on);
  discriminator_->train(on);
}

std::vector<std::pair<std::string, torch::Tensor>> InpaintingModel::named_state() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  append(out, "prompter.", *prompter_);
  if (!projection_.is_empty()) append(out, "projection.", *projection_);
  append(out, "generator.", *generator_);
  append(out, "discriminator.", *discriminator_);
  return out;
}

std::vector<std::string> InpaintingModel::parameter_names() const {
  std::vector<std::string> names;
  auto add = [&](const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters(true)) names.push_back(prefix + p.key());
  };
  add("prompter.", *prompter_);
  if (!projection_.is_empty()) add("projection.", *projection_);
  add("generator.", *generator_);
  add("discriminator.", *discriminator_);
  return names;
}

std::vector<torch::Tensor> InpaintingModel::generator_parameters() const {
  auto params = prompter_->parameters();
  if (!projection_.is_empty()) {
    auto p = projection_->parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  auto g = generator_->parameters();
  params.insert(params.end(), g.begin(), g.end());
  return params;
}

std::vector<torch::Tensor> InpaintingModel::discriminator_parameters() const { return discriminator_->parameters(); }

int64_t InpaintingModel::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : generator_parameters()) n += p.numel();
  for (const auto& p : discriminator_parameters()) n += p.numel();
  return n;
}

}  // namespace mfn
