#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mfn {

struct Size2 {
  int64_t height = 0;
  int64_t width = 0;
  friend bool operator==(const Size2&, const Size2&) = default;
};

// Model variants removed one component at a time (ablation study rows B-F).
enum class Ablation {
  none,
  no_semantic_supervision,
  no_lpt,
  no_multiscale,
  no_attention_transfer,
  no_spa,
};

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation ablation);

struct DataConfig {
  double moving_ratio_max = 0.05;
  double overlap_threshold = 0.5;
  Size2 train_crop{512, 512};
  Size2 test_size{512, 1024};
  uint64_t seed = 0;
  // Mask producer: number and scale of randomly placed instance templates.
  int templates_min = 1;
  int templates_max = 3;
  double template_scale_min = 0.2;
  double template_scale_max = 0.5;
  std::vector<std::string> moving_classes{"person", "rider",      "car",    "truck",
                                          "bus",    "motorcycle", "bicycle"};
};

struct ModelConfig {
  std::vector<int64_t> encoder_channels{64, 128, 256, 512};
  int64_t prompter_channels = 64;
  int64_t prior_channels = 64;
  int prompter_depth = 2;
  int prompter_levels = 3;
  int64_t lpt_hidden = 128;
  int64_t disc_channels = 64;
  double rn_eps = 1e-5;
  uint64_t init_seed = 0;
};

struct PretextConfig {
  uint64_t seed = 1234;
  std::vector<int64_t> channels{32, 64, 128};
};

struct LossWeights {
  double alpha = 1.0;
  double lambda_rec = 1.0;
  double lambda_perc = 0.5;
  double lambda_style = 250.0;
  double lambda_adv = 0.01;
  // Soft fake target of the patch discriminator: Gaussian blur of (1 - M).
  int sigma_kernel = 15;
  double sigma_std = 5.0;
};

struct TrainConfig {
  int64_t batch_size = 8;
  int64_t max_iters = 200000;
  double lr_init = 1e-4;
  double lr_final = 1e-5;
  int64_t decay_window = 20000;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  uint64_t seed = 0;
  int64_t checkpoint_every = 10000;
  // Iterations during which only the prompter is optimized (prior loss only).
  int64_t warmup_iters = 0;
  Ablation ablation = Ablation::none;
};

struct Config {
  DataConfig data;
  ModelConfig model;
  PretextConfig pretext;
  LossWeights loss;
  TrainConfig train;
};

// INI text with sections [data] [model] [pretext] [loss] [train]. Missing
// keys keep their defaults; unknown keys or sections are rejected.
Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);

// Canonical INI rendering; parse_config(to_ini(c)) reproduces c exactly.
std::string to_ini(const Config& config);

// Stable 64-bit digest of everything that affects training numerics.
uint64_t config_hash(const Config& config);

// Throws ConfigError when an invariant of any section is violated.
void validate(const Config& config);

// Small preset used by tests and the quick-start example: 64x64 crops,
// narrow channels, a few hundred iterations.
Config toy_config();

}  // namespace mfn
