#include "mfn/generator.hpp"

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

nn::Conv2d conv3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

// Nearest upsampling onto a target grid (x2 for sizes divisible by 16).
torch::Tensor upsample_to(const torch::Tensor& x, int64_t h, int64_t w) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kNearest));
}

torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

torch::Tensor resize_mask(const torch::Tensor& mask, int64_t height, int64_t width) {
  if (mask.dim() != 4 || mask.size(1) != 1) throw ShapeError("mask must be (B,1,H,W), got " + shape_of(mask));
  if (mask.size(2) == height && mask.size(3) == width) return mask;
  return F::interpolate(mask, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{height, width})
                                  .mode(torch::kNearest));
}

torch::Tensor region_normalize(const torch::Tensor& feature, const torch::Tensor& mask, double eps) {
  if (feature.dim() != 4) throw ShapeError("region_normalize expects (B,C,H,W), got " + shape_of(feature));
  auto m = resize_mask(mask, feature.size(2), feature.size(3)).to(feature.dtype());
  if (m.size(0) != feature.size(0)) throw ShapeError("region_normalize batch mismatch");
  const std::vector<int64_t> spatial{2, 3};
  const double total = static_cast<double>(feature.size(2) * feature.size(3));

  auto count_hole = m.sum(spatial, /*keepdim=*/true);
  auto count_known = total - count_hole;

  auto mean_all = feature.mean(spatial, true);
  auto var_all = (feature - mean_all).pow(2).mean(spatial, true);

  auto region_stats = [&](const torch::Tensor& weight, const torch::Tensor& count) {
    auto denom = count.clamp_min(1.0);
    auto mean = (feature * weight).sum(spatial, true) / denom;
    auto var = ((feature - mean).pow(2) * weight).sum(spatial, true) / denom;
    auto present = count > 0.5;
    return std::pair{torch::where(present, mean, mean_all), torch::where(present, var, var_all)};
  };
  auto [mean_h, var_h] = region_stats(m, count_hole);
  auto [mean_k, var_k] = region_stats(1.0 - m, count_known);

  return m * (feature - mean_h) / torch::sqrt(var_h + eps) +
         (1.0 - m) * (feature - mean_k) / torch::sqrt(var_k + eps);
}

torch::Tensor extract_patches(const torch::Tensor& feature) {
  if (feature.dim() != 4) throw ShapeError("extract_patches expects (B,C,H,W), got " + shape_of(feature));
  // Reflection needs at least two pixels per side.
  const bool reflect = feature.size(2) >= 2 && feature.size(3) >= 2;
  auto padded = F::pad(feature, F::PadFuncOptions({1, 1, 1, 1}).mode(reflect ? F::PadFuncOptions::mode_t(torch::kReflect) : F::PadFuncOptions::mode_t(torch::kReplicate)));
  auto cols = F::unfold(padded, F::UnfoldFuncOptions(3));  // (B, C*9, N)
  return cols.transpose(1, 2);
}

torch::Tensor attention_scores_from_patches(const torch::Tensor& patches) {
  if (patches.dim() != 3) throw ShapeError("attention patches must be (B,N,D), got " + shape_of(patches));
  auto norm = patches.norm(2, -1, /*keepdim=*/true).clamp_min(1e-12);
  auto unit = patches / norm;
  auto cosine = torch::bmm(unit, unit.transpose(1, 2));
  return torch::softmax(cosine, -1);
}

AttentionScores attention_scores(const torch::Tensor& bottleneck) {
  AttentionScores out;
  out.scores = attention_scores_from_patches(extract_patches(bottleneck));
  out.grid_h = bottleneck.size(2);
  out.grid_w = bottleneck.size(3);
  return out;
}

torch::Tensor attention_transfer(const AttentionScores& scores, const torch::Tensor& feature) {
  if (feature.dim() != 4) throw ShapeError("attention_transfer expects (B,C,H,W), got " + shape_of(feature));
  const int64_t gh = scores.grid_h, gw = scores.grid_w;
  const int64_t h = feature.size(2), w = feature.size(3);
  if (gh <= 0 || gw <= 0 || h % gh != 0 || w % gw != 0)
    throw ShapeError("attention_transfer: feature " + shape_of(feature) + " is not an integer multiple of the " +
                     std::to_string(gh) + "x" + std::to_string(gw) + " score grid");
  if (scores.scores.dim() != 3 || scores.scores.size(1) != gh * gw || scores.scores.size(2) != gh * gw ||
      scores.scores.size(0) != feature.size(0))
    throw ShapeError("attention_transfer: score matrix " + shape_of(scores.scores) + " does not match grid");
  const int64_t rh = h / gh, rw = w / gw;
  auto blocks = F::unfold(feature, F::UnfoldFuncOptions({rh, rw}).stride({rh, rw}));  // (B, C*rh*rw, N)
  auto mixed = torch::bmm(blocks, scores.scores.transpose(1, 2).to(feature.dtype()));
  return F::fold(mixed, F::FoldFuncOptions({h, w}, {rh, rw}).stride({rh, rw}));
}

torch::Tensor composite_output(const torch::Tensor& predicted, const torch::Tensor& ground_truth,
                               const torch::Tensor& mask) {
  return predicted * mask + ground_truth * (1.0 - mask);
}

LptImpl::LptImpl(int64_t feature_channels, int64_t prior_channels, int64_t hidden, double eps)
    : feature_channels_(feature_channels), prior_channels_(prior_channels), eps_(eps) {
  if (feature_channels <= 0 || prior_channels <= 0 || hidden <= 0)
    throw ConfigError("LPT channel counts must be positive");
  shared_ = register_module("shared", conv3(prior_channels, hidden));
  beta_head_ = register_module("beta", conv3(hidden, feature_channels));
  gamma_head_ = register_module("gamma", conv3(hidden, feature_channels));
  torch::NoGradGuard guard;
  beta_head_->bias.fill_(1.0);
  gamma_head_->bias.zero_();
}

std::pair<torch::Tensor, torch::Tensor> LptImpl::modulation(const torch::Tensor& prior, int64_t height,
                                                            int64_t width) {
  if (prior.dim() != 4 || prior.size(1) != prior_channels_)
    throw ShapeError("LPT prior must have " + std::to_string(prior_channels_) + " channels, got " + shape_of(prior));
  auto s = lrelu(shared_->forward(resize_bilinear(prior, height, width)));
  return {beta_head_->forward(s), gamma_head_->forward(s)};
}

torch::Tensor LptImpl::forward(const torch::Tensor& feature, const torch::Tensor& prior, const torch::Tensor& mask) {
  if (feature.dim() != 4 || feature.size(1) != feature_channels_)
    throw ShapeError("LPT feature must have " + std::to_string(feature_channels_) + " channels, got " +
                     shape_of(feature));
  auto [beta, gamma] = modulation(prior, feature.size(2), feature.size(3));
  return beta * region_normalize(feature, mask, eps_) + gamma;
}

void LptImpl::set_identity_modulation() {
  torch::NoGradGuard guard;
  beta_head_->weight.zero_();
  beta_head_->bias.fill_(1.0);
  gamma_head_->weight.zero_();
  gamma_head_->bias.zero_();
}

ConcatFusionImpl::ConcatFusionImpl(int64_t feature_channels, int64_t prior_channels)
    : feature_channels_(feature_channels), prior_channels_(prior_channels) {
  conv_ = register_module("conv", conv3(feature_channels + prior_channels, feature_channels));
}

torch::Tensor ConcatFusionImpl::forward(const torch::Tensor& feature, const torch::Tensor& prior,
                                        const torch::Tensor& /*mask*/) {
  if (feature.dim() != 4 || feature.size(1) != feature_channels_ || prior.dim() != 4 ||
      prior.size(1) != prior_channels_)
    throw ShapeError("concat fusion channel mismatch: " + shape_of(feature) + " / " + shape_of(prior));
  auto s = resize_bilinear(prior, feature.size(2), feature.size(3));
  return lrelu(conv_->forward(torch::cat({feature, s}, 1)));
}

PriorFusionImpl::PriorFusionImpl(int64_t feature_channels, int64_t prior_channels, int64_t hidden, double eps,
                                 bool use_lpt) {
  if (use_lpt)
    lpt_ = register_module("lpt", Lpt(feature_channels, prior_channels, hidden, eps));
  else
    concat_ = register_module("concat", ConcatFusion(feature_channels, prior_channels));
}

torch::Tensor PriorFusionImpl::forward(const torch::Tensor& feature, const torch::Tensor& prior,
                                       const torch::Tensor& mask) {
  return uses_lpt() ? lpt_->forward(feature, prior, mask) : concat_->forward(feature, prior, mask);
}

BottleneckImpl::BottleneckImpl(int64_t channels, int64_t prior_channels, int64_t hidden, double eps, bool use_lpt) {
  prior_conv_ = register_module("prior_conv", conv3(prior_channels, channels));
  for (int i = 0; i < kBottleneckBlocks; ++i) {
    fusions_.push_back(
        register_module("fusion" + std::to_string(i), PriorFusion(channels, channels, hidden, eps, use_lpt)));
    convs_.push_back(register_module("conv" + std::to_string(i), conv3(channels, channels)));
  }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& feature, const torch::Tensor& prior,
                                      const torch::Tensor& mask) {
  auto s = prior_conv_->forward(prior);
  auto x = feature;
  for (size_t i = 0; i < fusions_.size(); ++i) x = lrelu(convs_[i]->forward(fusions_[i]->forward(x, s, mask)));
  return x;
}

GeneratorImpl::GeneratorImpl(const GeneratorOptions& options) : options_(options) {
  const auto& ch = options_.encoder_channels;
  if (ch.size() != 4) throw ConfigError("generator needs four encoder channel counts");
  if (options_.prior_levels != 1 && options_.prior_levels != 3)
    throw ConfigError("generator accepts 3 prior levels (or 1 for the single-scale variant)");
  int64_t in = 4;
  for (size_t l = 0; l < ch.size(); ++l) {
    encoder_.push_back(register_module("enc" + std::to_string(l + 1), conv3(in, ch[l], 2)));
    in = ch[l];
  }
  bottleneck_ = register_module(
      "bottleneck", Bottleneck(ch[3], options_.prior_channels, options_.lpt_hidden, options_.rn_eps, options_.use_lpt));
  // Decoder stages at strides 8, 4, 2 reuse encoder channels ch[2], ch[1], ch[0].
  for (int k = 0; k < 3; ++k) {
    const int64_t from = ch[3 - k], to = ch[2 - k];
    const std::string tag = std::to_string(k);
    up_.push_back(register_module("up" + tag, conv3(from, to)));
    fusion_.push_back(register_module(
        "fusion" + tag, PriorFusion(to, options_.prior_channels, options_.lpt_hidden, options_.rn_eps, options_.use_lpt)));
    const int64_t merge_in = options_.attention_transfer ? 2 * to : to;
    merge_.push_back(register_module((options_.attention_transfer ? "attn_merge" : "skip_merge") + tag,
                                     conv3(merge_in, to)));
  }
  final_up_ = register_module("final_up", conv3(ch[0], ch[0]));
  to_rgb_ = register_module("to_rgb", conv3(ch[0], 3));
}

EncoderFeatures GeneratorImpl::encode(const torch::Tensor& masked_image, const torch::Tensor& mask) {
  if (masked_image.dim() != 4 || masked_image.size(1) != 3)
    throw ShapeError("generator expects a (B,3,H,W) image, got " + shape_of(masked_image));
  if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(2) != masked_image.size(2) ||
      mask.size(3) != masked_image.size(3))
    throw ShapeError("generator mask must be (B,1,H,W) matching the image, got " + shape_of(mask));
  EncoderFeatures out;
  auto x = torch::cat({masked_image, mask.to(masked_image.dtype())}, 1);
  for (auto& enc : encoder_) {
    x = lrelu(enc->forward(x));
    out.levels.push_back(x);
  }
  return out;
}

DecoderState GeneratorImpl::forward(const torch::Tensor& image, const torch::Tensor& mask,
                                    const PriorPyramid& priors) {
  if (static_cast<int>(priors.levels.size()) != options_.prior_levels)
    throw ShapeError("generator expects " + std::to_string(options_.prior_levels) + " prior levels, got " +
                     std::to_string(priors.levels.size()));
  auto m = mask.to(image.dtype());
  auto enc = encode(image * (1.0 - m), m);

  DecoderState state;
  state.attention = attention_scores(enc.levels[3]);
  for (int k = 0; k < 3; ++k) {
    const auto& level = enc.levels[2 - k];
    state.attention_maps.push_back(options_.attention_transfer ? attention_transfer(state.attention, level) : level);
  }

  state.bottleneck = bottleneck_->forward(enc.levels[3], priors.levels[0], m);
  auto x = state.bottleneck;
  for (int k = 0; k < 3; ++k) {
    const auto& prior = priors.levels[options_.prior_levels == 1 ? 0 : k];
    const auto& skip = enc.levels[2 - k];
    auto up = lrelu(up_[k]->forward(upsample_to(x, skip.size(2), skip.size(3))));
    auto deco = fusion_[k]->forward(up, prior, m);
    state.decoder_features.push_back(deco);
    const auto& attn = state.attention_maps[k];
    x = options_.attention_transfer ? lrelu(merge_[k]->forward(torch::cat({attn, deco}, 1)))
                                    : lrelu(merge_[k]->forward(attn + deco));
    state.fused.push_back(x);
  }
  x = lrelu(final_up_->forward(upsample_to(x, image.size(2), image.size(3))));
  state.output = torch::tanh(to_rgb_->forward(x));
  return state;
}

}  // namespace mfn
