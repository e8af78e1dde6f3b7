#include "mfn/losses.hpp"

#include <cmath>
#include <string>

#include "mfn/errors.hpp"

namespace mfn {
namespace {

namespace F = torch::nn::functional;

std::string shape_of(const torch::Tensor& t) {
  std::string s = "(";
  for (int64_t i = 0; i < t.dim(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
  return s + ")";
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes()))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
}

void require_levels(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b, const char* what) {
  if (a.size() != b.size() || a.empty())
    throw ShapeError(std::string(what) + ": feature level mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
}

torch::Tensor gaussian_kernel1d(int size, double sigma, torch::Dtype dtype) {
  auto x = torch::arange(size, torch::TensorOptions().dtype(torch::kDouble)) - (size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  return (g / g.sum()).to(dtype);
}

}  // namespace

torch::Tensor rec_loss(const torch::Tensor& predicted, const torch::Tensor& ground_truth, const torch::Tensor& mask,
                       double alpha) {
  require_same_shape(predicted, ground_truth, "rec_loss");
  if (mask.dim() != predicted.dim() || mask.size(0) != predicted.size(0) || mask.size(-1) != predicted.size(-1) ||
      mask.size(-2) != predicted.size(-2))
    throw ShapeError("rec_loss: mask " + shape_of(mask) + " incompatible with " + shape_of(predicted));
  auto weight = 1.0 + alpha * mask.to(predicted.dtype());
  return ((predicted - ground_truth).abs() * weight).mean();
}

torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& predicted_features,
                              const std::vector<torch::Tensor>& target_features) {
  require_levels(predicted_features, target_features, "perceptual_loss");
  torch::Tensor total;
  for (size_t i = 0; i < predicted_features.size(); ++i) {
    require_same_shape(predicted_features[i], target_features[i], "perceptual_loss");
    auto term = (predicted_features[i] - target_features[i]).abs().mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor perceptual_loss(const torch::Tensor& predicted, const torch::Tensor& ground_truth,
                              const FeatureExtractor& extractor) {
  require_same_shape(predicted, ground_truth, "perceptual_loss");
  return perceptual_loss(extractor.extract(predicted), extractor.extract(ground_truth));
}

torch::Tensor gram_matrix(const torch::Tensor& feature) {
  if (feature.dim() != 4) throw ShapeError("gram_matrix expects (B,C,H,W), got " + shape_of(feature));
  const int64_t b = feature.size(0), c = feature.size(1), hw = feature.size(2) * feature.size(3);
  auto f = feature.reshape({b, c, hw});
  return torch::bmm(f, f.transpose(1, 2)) / static_cast<double>(c * hw);
}

torch::Tensor style_loss(const std::vector<torch::Tensor>& predicted_features,
                         const std::vector<torch::Tensor>& target_features) {
  require_levels(predicted_features, target_features, "style_loss");
  torch::Tensor total;
  for (size_t i = 0; i < predicted_features.size(); ++i) {
    require_same_shape(predicted_features[i], target_features[i], "style_loss");
    auto term = (gram_matrix(predicted_features[i]) - gram_matrix(target_features[i])).abs().mean();
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor style_loss(const torch::Tensor& predicted, const torch::Tensor& ground_truth,
                         const FeatureExtractor& extractor) {
  require_same_shape(predicted, ground_truth, "style_loss");
  return style_loss(extractor.extract(predicted), extractor.extract(ground_truth));
}

torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t height, int64_t width) {
  if (mask.dim() != 4 || mask.size(1) != 1) throw ShapeError("downsample_mask expects (B,1,H,W), got " + shape_of(mask));
  return F::adaptive_avg_pool2d(mask, F::AdaptiveAvgPool2dFuncOptions({height, width}));
}

torch::Tensor soft_mask_target(const torch::Tensor& mask, int64_t height, int64_t width, int kernel_size,
                               double sigma) {
  if (mask.dim() != 4 || mask.size(1) != 1) throw ShapeError("soft_mask_target expects (B,1,H,W), got " + shape_of(mask));
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("soft_mask_target kernel must be odd");
  torch::NoGradGuard guard;
  auto known = 1.0 - mask;
  const int64_t pad = kernel_size / 2;
  const bool reflect = mask.size(2) > pad && mask.size(3) > pad;
  auto g = gaussian_kernel1d(kernel_size, sigma, mask.scalar_type());
  auto padded = F::pad(known, F::PadFuncOptions({pad, pad, pad, pad}).mode(reflect ? F::PadFuncOptions::mode_t(torch::kReflect) : F::PadFuncOptions::mode_t(torch::kReplicate)));
  auto blurred = torch::conv2d(padded, g.view({1, 1, 1, kernel_size}));
  blurred = torch::conv2d(blurred, g.view({1, 1, kernel_size, 1}));
  return F::adaptive_avg_pool2d(blurred, F::AdaptiveAvgPool2dFuncOptions({height, width}));
}

torch::Tensor adv_d_loss(const torch::Tensor& d_fake, const torch::Tensor& d_real, const torch::Tensor& sigma_map) {
  require_same_shape(d_fake, sigma_map, "adv_d_loss");
  require_same_shape(d_fake, d_real, "adv_d_loss");
  return (d_fake - sigma_map).pow(2).mean() + (d_real - 1.0).pow(2).mean();
}

torch::Tensor adv_g_loss(const torch::Tensor& d_fake, const torch::Tensor& mask) {
  require_same_shape(d_fake, mask, "adv_g_loss");
  return ((d_fake - 1.0).pow(2) * mask).mean();
}

torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights) {
  const std::pair<const char*, const torch::Tensor*> named[] = {
      {"prior", &terms.prior}, {"rec", &terms.rec}, {"perc", &terms.perc},
      {"style", &terms.style}, {"adv_g", &terms.adv_g}};
  for (const auto& [name, t] : named) {
    if (!t->defined()) throw NumericError(std::string("loss term '") + name + "' is undefined");
    if (!std::isfinite(t->item<double>())) throw NumericError(std::string("loss term '") + name + "' is not finite");
  }
  return terms.prior + weights.lambda_rec * terms.rec + weights.lambda_perc * terms.perc +
         weights.lambda_style * terms.style + weights.lambda_adv * terms.adv_g;
}

nlohmann::json LossReport::to_json() const {
  return {{"iter", iteration}, {"rec", rec},     {"perc", perc},   {"style", style}, {"adv_g", adv_g},
          {"adv_d", adv_d},    {"prior", prior}, {"total", total}, {"lr", lr}};
}

LossReport LossReport::from_json(const nlohmann::json& j) {
  LossReport r;
  r.iteration = j.at("iter").get<int64_t>();
  r.rec = j.at("rec").get<double>();
  r.perc = j.at("perc").get<double>();
  r.style = j.at("style").get<double>();
  r.adv_g = j.at("adv_g").get<double>();
  r.adv_d = j.at("adv_d").get<double>();
  r.prior = j.at("prior").get<double>();
  r.total = j.at("total").get<double>();
  r.lr = j.at("lr").get<double>();
  return r;
}

SpectralConv2dImpl::SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding)
    : stride_(stride), padding_(padding) {
  // Kaiming-uniform init matching torch::nn::Conv2d defaults.
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight_orig_ = register_parameter("weight_orig", torch::empty({out, in, kernel, kernel}).uniform_(-bound, bound));
  bias_ = register_parameter("bias", torch::empty({out}).uniform_(-bound, bound));
  u_ = register_buffer("u", F::normalize(torch::randn({out}), F::NormalizeFuncOptions().dim(0)));
  v_ = register_buffer("v", F::normalize(torch::randn({in * kernel * kernel}), F::NormalizeFuncOptions().dim(0)));
}

torch::Tensor SpectralConv2dImpl::normalized_weight() {
  auto w = weight_orig_.reshape({weight_orig_.size(0), -1});
  // Clones keep later power-iteration updates out of this forward's graph.
  auto u = u_.to(w.dtype()).clone();
  auto v = v_.to(w.dtype()).clone();
  auto sigma = torch::dot(u, torch::mv(w, v));
  return weight_orig_ / sigma;
}

torch::Tensor SpectralConv2dImpl::forward(const torch::Tensor& x) {
  if (is_training()) {
    torch::NoGradGuard guard;
    auto w = weight_orig_.reshape({weight_orig_.size(0), -1});
    auto opts = F::NormalizeFuncOptions().dim(0).eps(1e-12);
    v_.copy_(F::normalize(torch::mv(w.t(), u_.to(w.dtype())), opts));
    u_.copy_(F::normalize(torch::mv(w, v_.to(w.dtype())), opts));
  }
  return torch::conv2d(x, normalized_weight(), bias_, stride_, padding_);
}

DiscriminatorImpl::DiscriminatorImpl(int64_t channels) {
  const int64_t widths[] = {channels, channels * 2, channels * 4, channels * 4};
  int64_t in = 3;
  for (int i = 0; i < 4; ++i) {
    layers_.push_back(register_module("conv" + std::to_string(i), SpectralConv2d(in, widths[i], 4, 2, 1)));
    in = widths[i];
  }
  layers_.push_back(register_module("score", SpectralConv2d(in, 1, 3, 1, 1)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) throw ShapeError("discriminator expects (B,3,H,W), got " + shape_of(image));
  auto x = image;
  for (size_t i = 0; i + 1 < layers_.size(); ++i) x = torch::leaky_relu(layers_[i]->forward(x), 0.2);
  return layers_.back()->forward(x);
}

}  // namespace mfn
