#include "mfn/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mfn/errors.hpp"
#include "mfn/generator.hpp"

namespace mfn::metrics {
namespace {

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) throw ShapeError(std::string(what) + ": image shapes differ");
}

torch::Tensor as_double(const torch::Tensor& t) { return t.detach().to(torch::kDouble); }

torch::Tensor gaussian_window(int size, double sigma) {
  auto x = torch::arange(size, torch::kDouble) - (size - 1) / 2.0;
  auto g = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

std::string cell(double v, int precision) {
  if (!std::isfinite(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

struct Scores {
  double psnr, ssim, mae, rmse;
  std::optional<double> lpips;
};

MetricRow summarize(const std::string& label, const std::vector<size_t>& members, const std::vector<Scores>& scores,
                    bool with_lpips) {
  MetricRow row;
  row.bucket = label;
  row.count = members.size();
  if (members.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.psnr = row.ssim = row.mae = row.rmse = nan;
    if (with_lpips) row.lpips = nan;
    return row;
  }
  double p = 0, s = 0, m = 0, r = 0, l = 0;
  for (size_t i : members) {
    p += scores[i].psnr;
    s += scores[i].ssim;
    m += scores[i].mae;
    r += scores[i].rmse;
    if (scores[i].lpips) l += *scores[i].lpips;
  }
  const double n = static_cast<double>(members.size());
  row.psnr = p / n;
  row.ssim = s / n;
  row.mae = m / n;
  row.rmse = r / n;
  if (with_lpips) row.lpips = l / n;
  return row;
}

}  // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  require_same(a, b, "psnr");
  const double mse = (as_double(a) - as_double(b)).pow(2).mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double mae(const torch::Tensor& a, const torch::Tensor& b) {
  require_same(a, b, "mae");
  return (as_double(a) - as_double(b)).abs().mean().item<double>();
}

double rmse(const torch::Tensor& a, const torch::Tensor& b) {
  require_same(a, b, "rmse");
  return std::sqrt((as_double(a) - as_double(b)).pow(2).mean().item<double>()) * 255.0;
}

torch::Tensor to_gray(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("to_gray expects (3,H,W)");
  auto d = as_double(image);
  return 0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2];
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, const SsimOptions& options) {
  require_same(a, b, "ssim");
  auto x = to_gray(a), y = to_gray(b);
  if (x.size(0) < options.window || x.size(1) < options.window)
    throw ShapeError("ssim: image smaller than the " + std::to_string(options.window) + "x" +
                     std::to_string(options.window) + " window");
  auto w = gaussian_window(options.window, options.sigma).view({1, 1, options.window, options.window});
  auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t.view({1, 1, t.size(0), t.size(1)}), w); };
  const double c1 = std::pow(options.k1 * options.data_range, 2);
  const double c2 = std::pow(options.k2 * options.data_range, 2);
  auto mu_x = filt(x), mu_y = filt(y);
  auto sxx = filt(x * x) - mu_x * mu_x;
  auto syy = filt(y * y) - mu_y * mu_y;
  auto sxy = filt(x * y) - mu_x * mu_y;
  auto map = ((2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)) / ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

double ProxyPerceptualDistance::distance(const torch::Tensor& a, const torch::Tensor& b) const {
  require_same(a, b, "perceptual distance");
  torch::NoGradGuard guard;
  auto batch = [](const torch::Tensor& t) { return (t.dim() == 3 ? t.unsqueeze(0) : t).to(torch::kFloat) * 2.0 - 1.0; };
  auto fa = extractor_->extract(batch(a));
  auto fb = extractor_->extract(batch(b));
  double total = 0.0;
  for (size_t l = 0; l < fa.size(); ++l) {
    auto na = fa[l] / (fa[l].pow(2).sum(1, true).sqrt() + 1e-10);
    auto nb = fb[l] / (fb[l].pow(2).sum(1, true).sqrt() + 1e-10);
    total += (na - nb).pow(2).sum(1).mean().to(torch::kDouble).item<double>();
  }
  return total;
}

BucketSpec BucketSpec::standard() {
  BucketSpec spec;
  for (int i = 0; i < 6; ++i) {
    spec.buckets.push_back({i / 10.0, (i + 1) / 10.0, std::to_string(i * 10) + "-" + std::to_string((i + 1) * 10) + "%"});
  }
  return spec;
}

BucketGroups bucket_by_mask_ratio(std::span<const double> hole_ratios, const BucketSpec& spec) {
  BucketGroups groups;
  groups.buckets.resize(spec.buckets.size());
  for (size_t i = 0; i < hole_ratios.size(); ++i) {
    const double r = hole_ratios[i];
    if (!(r > 0.0)) {
      groups.excluded.push_back(i);
      continue;
    }
    bool placed = false;
    for (size_t b = 0; b < spec.buckets.size() && !placed; ++b) {
      if (spec.buckets[b].contains(r)) {
        groups.buckets[b].push_back(i);
        placed = true;
      }
    }
    if (!placed) groups.out_of_range.push_back(i);
  }
  return groups;
}

std::string MetricTable::to_csv() const {
  std::ostringstream os;
  os << "bucket,count,psnr_db_peak1,ssim,mae,rmse_255," << lpips_name << '\n';
  for (const auto& r : rows) {
    os << r.bucket << ',' << r.count << ',' << cell(r.psnr, 4) << ',' << cell(r.ssim, 6) << ',' << cell(r.mae, 6)
       << ',' << cell(r.rmse, 4) << ',' << (r.lpips ? cell(*r.lpips, 6) : "n/a") << '\n';
  }
  return os.str();
}

MetricTable evaluate_samples(std::span<const EvalSample> samples, const Inpainter& inpainter,
                             const PerceptualDistance* perceptual, const BucketSpec& spec) {
  std::vector<double> ratios;
  ratios.reserve(samples.size());
  for (const auto& s : samples) ratios.push_back(s.mask.to(torch::kDouble).mean().item<double>());
  const auto groups = bucket_by_mask_ratio(ratios, spec);

  std::vector<Scores> scores(samples.size());
  std::vector<size_t> evaluated;
  auto score = [&](size_t i) {
    const auto& s = samples[i];
    auto pred = inpainter(s.gt, s.mask);
    require_same(pred, s.gt, "evaluate");
    auto out = composite_output(pred.to(s.gt.dtype()), s.gt, s.mask);
    scores[i] = {psnr(out, s.gt), ssim(out, s.gt), mae(out, s.gt), rmse(out, s.gt), std::nullopt};
    if (perceptual) scores[i].lpips = perceptual->distance(out, s.gt);
    evaluated.push_back(i);
  };
  for (const auto& b : groups.buckets)
    for (size_t i : b) score(i);
  for (size_t i : groups.out_of_range) score(i);

  MetricTable table;
  if (perceptual) table.lpips_name = perceptual->name();
  const bool with_lpips = perceptual != nullptr;
  for (size_t b = 0; b < spec.buckets.size(); ++b)
    table.rows.push_back(summarize(spec.buckets[b].label, groups.buckets[b], scores, with_lpips));
  if (!groups.out_of_range.empty())
    table.rows.push_back(summarize("out-of-range", groups.out_of_range, scores, with_lpips));
  std::sort(evaluated.begin(), evaluated.end());
  table.rows.push_back(summarize("average", evaluated, scores, with_lpips));
  return table;
}

}  // namespace mfn::metrics
