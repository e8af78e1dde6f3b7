#include "mfn/features.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "mfn/errors.hpp"

namespace mfn {

RandomConvExtractor::RandomConvExtractor(uint64_t seed, std::vector<int64_t> channels)
    : channels_(std::move(channels)) {
  if (channels_.empty()) throw ConfigError("feature extractor needs at least one level");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  int64_t in = 3;
  for (int64_t out : channels_) {
    if (out <= 0) throw ConfigError("feature extractor channels must be positive");
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    weights_.push_back(at::randn({out, in, 3, 3}, gen, torch::kFloat) * std);
    biases_.push_back(at::randn({out}, gen, torch::kFloat) * 0.1);
    in = out;
  }
}

std::vector<torch::Tensor> RandomConvExtractor::extract(const torch::Tensor& image) const {
  if (image.dim() != 4 || image.size(1) != 3) throw ShapeError("feature extractor expects (B,3,H,W)");
  std::vector<torch::Tensor> fine_to_coarse;
  torch::Tensor x = image;
  for (size_t i = 0; i < weights_.size(); ++i) {
    auto w = weights_[i].to(image.dtype());
    auto b = biases_[i].to(image.dtype());
    x = torch::leaky_relu(torch::conv2d(x, w, b, /*stride=*/2, /*padding=*/1), 0.2);
    fine_to_coarse.push_back(x);
  }
  return {fine_to_coarse.rbegin(), fine_to_coarse.rend()};
}

}  // namespace mfn
