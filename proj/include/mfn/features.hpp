#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace mfn {

// Frozen multi-level feature extractor. Supervises the prompter (pretext
// targets) and feeds the perceptual/style losses. Implementations never
// receive parameter updates; gradients flow through to the input only.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  // image: (B,3,H,W) in [-1,1]. Returns one map per level, ordered from the
  // coarsest (stride 8) to the finest (stride 2).
  virtual std::vector<torch::Tensor> extract(const torch::Tensor& image) const = 0;
  virtual std::vector<int64_t> channels() const = 0;
};

// Deterministic offline stand-in for a pretrained backbone: a fixed random
// stride-2 convolution pyramid drawn from a seeded generator.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  RandomConvExtractor(uint64_t seed, std::vector<int64_t> channels);

  std::vector<torch::Tensor> extract(const torch::Tensor& image) const override;
  std::vector<int64_t> channels() const override { return channels_; }

 private:
  std::vector<int64_t> channels_;
  std::vector<torch::Tensor> weights_;
  std::vector<torch::Tensor> biases_;
};

}  // namespace mfn
