#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <vector>

#include "mfn/config.hpp"
#include "mfn/features.hpp"

namespace mfn {

// mean(|I_p - I_gt| * (1 + alpha * M)); M broadcasts over channels.
torch::Tensor rec_loss(const torch::Tensor& predicted, const torch::Tensor& ground_truth, const torch::Tensor& mask,
                       double alpha);

// sum_i mean|phi_i(x) - phi_i(z)|.
torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& predicted_features,
                              const std::vector<torch::Tensor>& target_features);
torch::Tensor perceptual_loss(const torch::Tensor& predicted, const torch::Tensor& ground_truth,
                              const FeatureExtractor& extractor);

// (B,C,H,W) -> (B,C,C), normalized by C*H*W.
torch::Tensor gram_matrix(const torch::Tensor& feature);

// sum_i mean|G(phi_i(x)) - G(phi_i(z))|.
torch::Tensor style_loss(const std::vector<torch::Tensor>& predicted_features,
                         const std::vector<torch::Tensor>& target_features);
torch::Tensor style_loss(const torch::Tensor& predicted, const torch::Tensor& ground_truth,
                         const FeatureExtractor& extractor);

// Area-downsampled hole fraction of a (B,1,H,W) mask.
torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t height, int64_t width);

// Gaussian blur of (1 - M) at full resolution, area-downsampled to the
// discriminator's output size: the soft fake target of the patch GAN.
torch::Tensor soft_mask_target(const torch::Tensor& mask, int64_t height, int64_t width, int kernel_size,
                               double sigma);

// E[(D(z) - sigma(1-M))^2] + E[(D(x) - 1)^2]
torch::Tensor adv_d_loss(const torch::Tensor& d_fake, const torch::Tensor& d_real, const torch::Tensor& sigma_map);

// E[(D(z) - 1)^2 * M]; mask already at D's output size.
torch::Tensor adv_g_loss(const torch::Tensor& d_fake, const torch::Tensor& mask);

// Generator-side terms of the weighted objective.
struct LossTerms {
  torch::Tensor rec, perc, style, adv_g, prior;
};

// prior + lambda_rec*rec + lambda_perc*perc + lambda_style*style + lambda_adv*adv_g.
// Throws NumericError naming the first non-finite term.
torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights);

struct LossReport {
  int64_t iteration = 0;
  double rec = 0, perc = 0, style = 0, adv_g = 0, adv_d = 0, prior = 0, total = 0;
  double lr = 0;

  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json& j);
  friend bool operator==(const LossReport&, const LossReport&) = default;
};

// Convolution whose weight is divided by its largest singular value,
// estimated with one power iteration per training-mode forward pass.
class SpectralConv2dImpl : public torch::nn::Module {
 public:
  SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding);
  torch::Tensor forward(const torch::Tensor& x);

  // Current normalized weight (no power-iteration update).
  torch::Tensor normalized_weight();

 private:
  int64_t stride_, padding_;
  torch::Tensor weight_orig_, bias_, u_, v_;
};
TORCH_MODULE(SpectralConv2d);

// Stride-16 patch discriminator emitting one score map channel.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& image);

 private:
  std::vector<SpectralConv2d> layers_;
};
TORCH_MODULE(Discriminator);

}  // namespace mfn
