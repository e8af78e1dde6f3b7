#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "mfn/prompter.hpp"

namespace mfn {

// The bottleneck always stacks exactly this many prior-transfer blocks.
inline constexpr int kBottleneckBlocks = 8;

// Nearest-neighbour resize of a (B,1,H,W) mask.
torch::Tensor resize_mask(const torch::Tensor& mask, int64_t height, int64_t width);

// Region normalization: per sample and channel, hole (mask = 1) and known
// pixels are standardized with their own mean/variance. A region with no
// pixels borrows whole-map statistics. The mask is resized (nearest) to the
// feature size when needed.
torch::Tensor region_normalize(const torch::Tensor& feature, const torch::Tensor& mask, double eps);

// Row-stochastic patch affinities over a grid_h x grid_w bottleneck.
struct AttentionScores {
  torch::Tensor scores;  // (B, N, N), N = grid_h * grid_w
  int64_t grid_h = 0;
  int64_t grid_w = 0;
};

// 3x3 patches centred at every position (stride 1, reflect padding), as
// (B, N, C*9) in row-major position order.
torch::Tensor extract_patches(const torch::Tensor& feature);

// softmax_j(<f_i/|f_i|, f_j/|f_j|>) for patches (B, N, D). Zero patches have
// zero similarity with everything.
torch::Tensor attention_scores_from_patches(const torch::Tensor& patches);

AttentionScores attention_scores(const torch::Tensor& bottleneck);

// Recombines the r_h x r_w blocks of `feature` with the shared scores:
// out_block[i] = sum_j scores[i,j] * block[j]. feature must be an integer
// multiple of the score grid in both dimensions.
torch::Tensor attention_transfer(const AttentionScores& scores, const torch::Tensor& feature);

// I_p * M + I_gt * (1 - M).
torch::Tensor composite_output(const torch::Tensor& predicted, const torch::Tensor& ground_truth,
                               const torch::Tensor& mask);

// Learnable prior transfer: region-normalize F, then modulate it with
// per-pixel [beta, gamma] predicted from the prior map S:
//   out = beta * RN(F) + gamma.
class LptImpl : public torch::nn::Module {
 public:
  LptImpl(int64_t feature_channels, int64_t prior_channels, int64_t hidden, double eps);

  // S is bilinearly resized to F's spatial size when they differ.
  torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& prior, const torch::Tensor& mask);

  // beta and gamma maps at F's resolution.
  std::pair<torch::Tensor, torch::Tensor> modulation(const torch::Tensor& prior, int64_t height, int64_t width);

  // Heads emit beta = 1, gamma = 0 regardless of S.
  void set_identity_modulation();

  double eps() const { return eps_; }

 private:
  int64_t feature_channels_;
  int64_t prior_channels_;
  double eps_;
  torch::nn::Conv2d shared_{nullptr}, beta_head_{nullptr}, gamma_head_{nullptr};
};
TORCH_MODULE(Lpt);

// Variant without LPT: concatenate F with the resized prior and convolve.
class ConcatFusionImpl : public torch::nn::Module {
 public:
  ConcatFusionImpl(int64_t feature_channels, int64_t prior_channels);
  torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& prior, const torch::Tensor& mask);

 private:
  int64_t feature_channels_;
  int64_t prior_channels_;
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(ConcatFusion);

// Holds exactly one of Lpt / ConcatFusion.
class PriorFusionImpl : public torch::nn::Module {
 public:
  PriorFusionImpl(int64_t feature_channels, int64_t prior_channels, int64_t hidden, double eps, bool use_lpt);
  torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& prior, const torch::Tensor& mask);

  bool uses_lpt() const { return !lpt_.is_empty(); }
  Lpt& lpt() { return lpt_; }

 private:
  Lpt lpt_{nullptr};
  ConcatFusion concat_{nullptr};
};
TORCH_MODULE(PriorFusion);

// Conv(S_L) followed by kBottleneckBlocks x [fusion -> conv3x3 -> LeakyReLU].
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int64_t channels, int64_t prior_channels, int64_t hidden, double eps, bool use_lpt);

  torch::Tensor forward(const torch::Tensor& feature, const torch::Tensor& prior, const torch::Tensor& mask);

  size_t block_count() const { return fusions_.size(); }
  PriorFusion& fusion(size_t i) { return fusions_.at(i); }
  torch::nn::Conv2d& conv(size_t i) { return convs_.at(i); }
  torch::nn::Conv2d& prior_conv() { return prior_conv_; }

 private:
  torch::nn::Conv2d prior_conv_{nullptr};
  std::vector<PriorFusion> fusions_;
  std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(Bottleneck);

struct GeneratorOptions {
  std::vector<int64_t> encoder_channels{64, 128, 256, 512};  // strides 2, 4, 8, 16
  int64_t prior_channels = 64;
  int prior_levels = 3;
  int64_t lpt_hidden = 128;
  double rn_eps = 1e-5;
  bool use_lpt = true;
  bool attention_transfer = true;
};

// Encoder maps, finest first: strides 2, 4, 8, 16 (the last is the bottleneck).
struct EncoderFeatures {
  std::vector<torch::Tensor> levels;
};

struct DecoderState {
  AttentionScores attention;
  std::vector<torch::Tensor> attention_maps;      // strides 8, 4, 2
  torch::Tensor bottleneck;                       // multi-LPT output, stride 16
  std::vector<torch::Tensor> decoder_features;    // LPT outputs, strides 8, 4, 2
  std::vector<torch::Tensor> fused;               // fused with attention maps, strides 8, 4, 2
  torch::Tensor output;                           // I_p in [-1,1], full resolution
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorOptions& options);

  // masked_image = I_gt * (1 - M). Every encoder level must be an integer
  // multiple of the bottleneck grid (H, W divisible by 16, or at most 8).
  EncoderFeatures encode(const torch::Tensor& masked_image, const torch::Tensor& mask);

  // image: unmasked I_gt in [-1,1]; the hole is blanked here before encoding.
  DecoderState forward(const torch::Tensor& image, const torch::Tensor& mask, const PriorPyramid& priors);

  const GeneratorOptions& options() const { return options_; }
  Bottleneck& bottleneck() { return bottleneck_; }

 private:
  GeneratorOptions options_;
  std::vector<torch::nn::Conv2d> encoder_;
  Bottleneck bottleneck_{nullptr};
  std::vector<torch::nn::Conv2d> up_;
  std::vector<PriorFusion> fusion_;
  std::vector<torch::nn::Conv2d> merge_;
  torch::nn::Conv2d final_up_{nullptr}, to_rgb_{nullptr};
};
TORCH_MODULE(Generator);

}  // namespace mfn
