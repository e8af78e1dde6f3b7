#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mfn/config.hpp"
#include "mfn/features.hpp"
#include "mfn/generator.hpp"
#include "mfn/losses.hpp"
#include "mfn/prompter.hpp"

namespace mfn {

// Structural switches derived from one ablation flag.
struct ModelVariant {
  Ablation ablation = Ablation::none;
  bool semantic_supervision = true;  // prior projection + prior loss
  bool use_lpt = true;               // LPT vs concat+conv fusion
  bool multiscale = true;            // three prior scales vs the smallest one only
  bool attention_transfer = true;    // attention maps vs plain skips
  bool use_spa = true;               // SPA vs plain residual blocks
};

ModelVariant apply_ablation(Ablation ablation);
// Throws ConfigError naming an unknown flag.
ModelVariant apply_ablation(std::string_view flag);

struct ModelOutput {
  PriorPyramid priors;
  DecoderState state;
  torch::Tensor prediction;  // I_p in [-1,1]
  torch::Tensor composite;   // I_p * M + I_gt * (1 - M) in [-1,1]
};

// Prompter, optional prior projection, generator and discriminator, plus the
// frozen pretext extractor. Images are (B,3,H,W) in [-1,1], masks (B,1,H,W).
class InpaintingModel {
 public:
  explicit InpaintingModel(const Config& config);
  InpaintingModel(const Config& config, const ModelVariant& variant);

  ModelOutput forward(const torch::Tensor& image, const torch::Tensor& mask);

  // Pretext features of the ground truth, restricted to the prior levels in use.
  std::vector<torch::Tensor> pretext_targets(const torch::Tensor& image) const;
  // Projected priors; empty without semantic supervision.
  std::vector<torch::Tensor> project(const PriorPyramid& priors);

  void train(bool on = true);

  Prompter& prompter() { return prompter_; }
  bool has_projection() const { return !projection_.is_empty(); }
  PriorProjection& projection() { return projection_; }
  Generator& generator() { return generator_; }
  Discriminator& discriminator() { return discriminator_; }
  const FeatureExtractor& pretext() const { return *pretext_; }
  std::shared_ptr<const FeatureExtractor> pretext_ptr() const { return pretext_; }
  const ModelVariant& variant() const { return variant_; }
  const Config& config() const { return config_; }

  // Parameters and buffers with "prompter.", "projection.", "generator.",
  // "discriminator." prefixes, in a fixed order.
  std::vector<std::pair<std::string, torch::Tensor>> named_state() const;
  std::vector<std::string> parameter_names() const;

  // Optimizer groups: generator side (prompter, projection, generator) and D.
  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;

  int64_t parameter_count() const;

 private:
  Config config_;
  ModelVariant variant_;
  std::shared_ptr<const FeatureExtractor> pretext_;
  Prompter prompter_{nullptr};
  PriorProjection projection_{nullptr};
  Generator generator_{nullptr};
  Discriminator discriminator_{nullptr};
};

}  // namespace mfn
