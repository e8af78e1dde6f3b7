#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "mfn/config.hpp"

namespace mfn {

// Multi-scale prior features, coarsest first (strides 8, 4, 2).
struct PriorPyramid {
  std::vector<torch::Tensor> levels;
};

// Residual multi-rate block: parallel dilated 3x3 convolutions, concatenated
// and fused by a 1x1 convolution, added back onto the input.
class SpaBlockImpl : public torch::nn::Module {
 public:
  explicit SpaBlockImpl(int64_t channels, std::vector<int64_t> rates = {1, 2, 4, 8});

  torch::Tensor forward(const torch::Tensor& x);

  // Zeroes the fuse convolution so the block computes the identity.
  void zero_aggregation();

  int64_t channels() const { return channels_; }
  const std::vector<int64_t>& rates() const { return rates_; }

 private:
  int64_t channels_;
  std::vector<int64_t> rates_;
  std::vector<torch::nn::Conv2d> branches_;
  torch::nn::Conv2d fuse_{nullptr};
};
TORCH_MODULE(SpaBlock);

// conv3x3 -> LeakyReLU -> conv3x3, plus identity. Replaces SPA in the no_spa variant.
class PlainResBlockImpl : public torch::nn::Module {
 public:
  explicit PlainResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t channels_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(PlainResBlock);

struct PrompterOptions {
  int64_t channels = 64;
  int64_t prior_channels = 64;
  int depth = 2;  // blocks per decoder scale
  int levels = 3;
  bool use_spa = true;
};

// Encoder-decoder over [masked image, mask] emitting PriorPyramid levels.
// Shares no parameters with the generator.
class PrompterImpl : public torch::nn::Module {
 public:
  explicit PrompterImpl(const PrompterOptions& options);

  // masked_image: (B,3,H,W), mask: (B,1,H,W) with 1 = hole. Levels sit at strides 8, 4, 2
  // (rounded up for sizes not divisible by 8).
  PriorPyramid forward(const torch::Tensor& masked_image, const torch::Tensor& mask);

  const PrompterOptions& options() const { return options_; }

 private:
  PrompterOptions options_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::Sequential> stages_;
  std::vector<torch::nn::Conv2d> up_;
  std::vector<torch::nn::Conv2d> heads_;
};
TORCH_MODULE(Prompter);

// Learned 1x1 projections mapping each prior level onto the channel count of
// the matching pretext feature level.
class PriorProjectionImpl : public torch::nn::Module {
 public:
  PriorProjectionImpl(int64_t prior_channels, std::vector<int64_t> target_channels);

  std::vector<torch::Tensor> forward(const PriorPyramid& pyramid);

  // Identity weights, zero bias. Requires prior_channels == every target channel.
  void set_identity();

 private:
  int64_t prior_channels_;
  std::vector<int64_t> target_channels_;
  std::vector<torch::nn::Conv2d> proj_;
};
TORCH_MODULE(PriorProjection);

// Sum over levels of the mean absolute difference. Levels are matched by
// position; count or shape mismatches throw ShapeError.
torch::Tensor prior_loss(const std::vector<torch::Tensor>& projected,
                         const std::vector<torch::Tensor>& targets);

}  // namespace mfn
