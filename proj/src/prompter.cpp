#include "mfn/prompter.hpp"

#include <string>

#include "mfn/errors.hpp"

namespace mfn {
namespace {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, 0.2); }

std::string shape_of(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.dim(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
  return s + ")";
}

}  // namespace

SpaBlockImpl::SpaBlockImpl(int64_t channels, std::vector<int64_t> rates)
    : channels_(channels), rates_(std::move(rates)) {
  if (rates_.empty()) throw ConfigError("SPA block needs at least one dilation rate");
  const auto n = static_cast<int64_t>(rates_.size());
  if (channels_ <= 0 || channels_ % n != 0)
    throw ConfigError("SPA block channels (" + std::to_string(channels_) +
                      ") must be a positive multiple of the rate count (" + std::to_string(n) + ")");
  for (int64_t rate : rates_) {
    auto conv = nn::Conv2d(nn::Conv2dOptions(channels_, channels_ / n, 3).dilation(rate).padding(rate));
    branches_.push_back(register_module("branch_r" + std::to_string(rate), conv));
  }
  fuse_ = register_module("fuse", nn::Conv2d(nn::Conv2dOptions(channels_, channels_, 1)));
}

torch::Tensor SpaBlockImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels_)
    throw ShapeError("SPA block expects " + std::to_string(channels_) + " channels, got " + shape_of(x));
  std::vector<torch::Tensor> outs;
  outs.reserve(branches_.size());
  for (auto& branch : branches_) outs.push_back(lrelu(branch->forward(x)));
  return x + fuse_->forward(torch::cat(outs, 1));
}

void SpaBlockImpl::zero_aggregation() {
  torch::NoGradGuard guard;
  fuse_->weight.zero_();
  fuse_->bias.zero_();
}

PlainResBlockImpl::PlainResBlockImpl(int64_t channels) : channels_(channels) {
  if (channels_ <= 0) throw ConfigError("residual block channels must be positive");
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor PlainResBlockImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != channels_)
    throw ShapeError("residual block expects " + std::to_string(channels_) + " channels, got " + shape_of(x));
  return x + conv2_->forward(lrelu(conv1_->forward(x)));
}

PrompterImpl::PrompterImpl(const PrompterOptions& options) : options_(options) {
  const int64_t c = options_.channels;
  if (options_.levels != 1 && options_.levels != 3)
    throw ConfigError("prompter supports 3 prior levels (or 1 for the single-scale variant)");
  stem_ = register_module("stem", nn::Conv2d(nn::Conv2dOptions(4, c, 3).padding(1)));
  for (int i = 0; i < 3; ++i) {
    down_.push_back(register_module("down" + std::to_string(i + 1),
                                    nn::Conv2d(nn::Conv2dOptions(c, c, 3).stride(2).padding(1))));
  }
  const std::string kind = options_.use_spa ? "spa" : "res";
  for (int l = 0; l < options_.levels; ++l) {
    nn::Sequential stage;
    for (int d = 0; d < options_.depth; ++d) {
      if (options_.use_spa)
        stage->push_back(SpaBlock(c));
      else
        stage->push_back(PlainResBlock(c));
    }
    stages_.push_back(register_module(kind + "_stage" + std::to_string(l), stage));
    heads_.push_back(register_module("head" + std::to_string(l),
                                     nn::Conv2d(nn::Conv2dOptions(c, options_.prior_channels, 1))));
    if (l > 0) {
      up_.push_back(register_module("up" + std::to_string(l),
                                    nn::Conv2d(nn::Conv2dOptions(c, c, 3).padding(1))));
    }
  }
}

PriorPyramid PrompterImpl::forward(const torch::Tensor& masked_image, const torch::Tensor& mask) {
  if (masked_image.dim() != 4 || masked_image.size(1) != 3)
    throw ShapeError("prompter expects a (B,3,H,W) image, got " + shape_of(masked_image));
  if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != masked_image.size(0) ||
      mask.size(2) != masked_image.size(2) || mask.size(3) != masked_image.size(3))
    throw ShapeError("prompter mask must be (B,1,H,W) matching the image, got " + shape_of(mask));

  auto x = lrelu(stem_->forward(torch::cat({masked_image, mask}, 1)));
  std::vector<torch::Tensor> skips;  // strides 2, 4, 8
  for (auto& down : down_) {
    x = lrelu(down->forward(x));
    skips.push_back(x);
  }

  PriorPyramid pyramid;
  auto d = stages_[0]->forward(skips[2]);
  pyramid.levels.push_back(heads_[0]->forward(d));
  for (int l = 1; l < options_.levels; ++l) {
    const auto& skip = skips[2 - l];
    auto up = F::interpolate(
        d, F::InterpolateFuncOptions().size(std::vector<int64_t>{skip.size(2), skip.size(3)}).mode(torch::kNearest));
    d = stages_[l]->forward(lrelu(up_[l - 1]->forward(up)) + skip);
    pyramid.levels.push_back(heads_[l]->forward(d));
  }
  return pyramid;
}

PriorProjectionImpl::PriorProjectionImpl(int64_t prior_channels, std::vector<int64_t> target_channels)
    : prior_channels_(prior_channels), target_channels_(std::move(target_channels)) {
  for (size_t l = 0; l < target_channels_.size(); ++l) {
    proj_.push_back(register_module("proj" + std::to_string(l),
                                    nn::Conv2d(nn::Conv2dOptions(prior_channels_, target_channels_[l], 1))));
  }
}

std::vector<torch::Tensor> PriorProjectionImpl::forward(const PriorPyramid& pyramid) {
  if (pyramid.levels.size() != proj_.size())
    throw ShapeError("prior projection expects " + std::to_string(proj_.size()) + " levels, got " +
                     std::to_string(pyramid.levels.size()));
  std::vector<torch::Tensor> out;
  for (size_t l = 0; l < proj_.size(); ++l) out.push_back(proj_[l]->forward(pyramid.levels[l]));
  return out;
}

void PriorProjectionImpl::set_identity() {
  torch::NoGradGuard guard;
  for (size_t l = 0; l < proj_.size(); ++l) {
    if (target_channels_[l] != prior_channels_)
      throw ConfigError("identity projection needs equal prior and target channels");
    proj_[l]->weight.copy_(torch::eye(prior_channels_).view({prior_channels_, prior_channels_, 1, 1}));
    proj_[l]->bias.zero_();
  }
}

torch::Tensor prior_loss(const std::vector<torch::Tensor>& projected, const std::vector<torch::Tensor>& targets) {
  if (projected.size() != targets.size() || projected.empty())
    throw ShapeError("prior loss level count mismatch: " + std::to_string(projected.size()) + " vs " +
                     std::to_string(targets.size()));
  torch::Tensor total;
  for (size_t l = 0; l < projected.size(); ++l) {
    if (!projected[l].sizes().equals(targets[l].sizes()))
      throw ShapeError("prior loss level " + std::to_string(l) + " shape mismatch: " + shape_of(projected[l]) +
                       " vs " + shape_of(targets[l]));
    auto term = (projected[l] - targets[l]).abs().mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

}  // namespace mfn
