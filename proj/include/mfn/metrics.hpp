#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfn/features.hpp"

namespace mfn::metrics {

// Zero-MSE PSNR is reported as this value.
inline constexpr double kPsnrCap = 100.0;

// Images are (3,H,W) or (B,3,H,W) tensors in [0,1]; metrics run in double.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
double mae(const torch::Tensor& a, const torch::Tensor& b);
// Root mean squared error on the 0-255 scale.
double rmse(const torch::Tensor& a, const torch::Tensor& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Luma (BT.601) of a (3,H,W) image.
torch::Tensor to_gray(const torch::Tensor& image);

// Single-scale SSIM: mean of the local SSIM map over all fully covered
// Gaussian windows of the grayscale images.
double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options = {});

// Learned-perceptual-distance slot. The offline default is a proxy built
// on the frozen stub extractor and is labelled as such in reports.
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual double distance(const torch::Tensor& a, const torch::Tensor& b) const = 0;
  virtual std::string name() const = 0;
};

// sum over levels of the spatial mean of squared differences between
// channel-normalized features.
class ProxyPerceptualDistance final : public PerceptualDistance {
 public:
  explicit ProxyPerceptualDistance(std::shared_ptr<const FeatureExtractor> extractor)
      : extractor_(std::move(extractor)) {}
  double distance(const torch::Tensor& a, const torch::Tensor& b) const override;
  std::string name() const override { return "lpips_proxy"; }

 private:
  std::shared_ptr<const FeatureExtractor> extractor_;
};

// Upper-inclusive interval (lower, upper].
struct Bucket {
  double lower = 0;
  double upper = 0;
  std::string label;
  bool contains(double ratio) const { return ratio > lower && ratio <= upper; }
};

// Six mask-ratio intervals (0,0.1], ..., (0.5,0.6].
struct BucketSpec {
  std::vector<Bucket> buckets;
  static BucketSpec standard();
};

struct BucketGroups {
  std::vector<std::vector<size_t>> buckets;  // sample indices per bucket, input order
  std::vector<size_t> out_of_range;          // ratio > last upper bound
  std::vector<size_t> excluded;              // ratio <= 0: nothing to evaluate
};

BucketGroups bucket_by_mask_ratio(std::span<const double> hole_ratios, const BucketSpec& spec = BucketSpec::standard());

struct MetricRow {
  std::string bucket;
  size_t count = 0;
  double psnr = 0, ssim = 0, mae = 0, rmse = 0;
  std::optional<double> lpips;
};

struct MetricTable {
  std::vector<MetricRow> rows;  // one per bucket, "out-of-range" when present, then "average"
  std::string lpips_name = "lpips_proxy";

  // Empty rows print n/a in every metric column.
  std::string to_csv() const;
};

struct EvalSample {
  std::string name;
  torch::Tensor gt;    // (3,H,W) in [0,1]
  torch::Tensor mask;  // (1,H,W), 1 = hole
};

// Raw prediction in [0,1] for a ground truth and mask; the harness blanks
// nothing itself, the inpainter is responsible for hiding the hole.
using Inpainter = std::function<torch::Tensor(const torch::Tensor& gt, const torch::Tensor& mask)>;

// Scores composite(prediction, gt, mask) against gt, grouped by mask ratio.
MetricTable evaluate_samples(std::span<const EvalSample> samples, const Inpainter& inpainter,
                             const PerceptualDistance* perceptual = nullptr,
                             const BucketSpec& spec = BucketSpec::standard());

}  // namespace mfn::metrics
