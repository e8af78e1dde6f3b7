#include "mfn/isodata.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "mfn/errors.hpp"

namespace mfn::metrics {
namespace {

// Nearest center per point; ties resolve to the lowest index.
std::vector<int> assign(const torch::Tensor& x, const torch::Tensor& centers) {
  auto d = torch::cdist(x, centers);
  auto idx = std::get<1>(d.min(1)).contiguous();
  auto* p = idx.data_ptr<int64_t>();
  return std::vector<int>(p, p + idx.numel());
}

torch::Tensor mean_of(const torch::Tensor& x, const std::vector<int>& labels, int k, std::vector<int64_t>& counts) {
  auto centers = torch::zeros({k, x.size(1)}, x.options());
  counts.assign(k, 0);
  auto lab = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kLong);
  centers.index_add_(0, lab, x);
  for (int l : labels) ++counts[l];
  auto c = torch::tensor(counts, torch::kDouble).clamp_min(1).unsqueeze(1);
  return centers / c;
}

// Drops empty or small clusters and relabels the survivors contiguously.
torch::Tensor prune(const torch::Tensor& x, const torch::Tensor& centers, int min_samples) {
  auto labels = assign(x, centers);
  std::vector<int64_t> counts(centers.size(0), 0);
  for (int l : labels) ++counts[l];
  std::vector<int64_t> keep;
  for (int64_t c = 0; c < centers.size(0); ++c)
    if (counts[c] >= min_samples && counts[c] > 0) keep.push_back(c);
  if (keep.empty()) {
    // Everything too small: keep the most populated cluster.
    keep.push_back(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  return centers.index_select(0, torch::tensor(keep, torch::kLong));
}

}  // namespace

IsodataResult isodata_cluster(const torch::Tensor& points, const IsodataOptions& options) {
  if (options.k_init < 1) throw ConfigError("isodata: k_init must be >= 1");
  if (points.dim() != 2 || points.size(0) == 0) throw ShapeError("isodata: points must be a non-empty (N,D) tensor");
  auto x = points.detach().to(torch::kDouble).contiguous();
  const int64_t n = x.size(0);

  // Seeds: k distinct points (by value) in a seeded random order.
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int64_t> seeds;
  for (int64_t i : order) {
    if (static_cast<int>(seeds.size()) == options.k_init) break;
    bool dup = false;
    for (int64_t s : seeds) dup = dup || torch::equal(x[i], x[s]);
    if (!dup) seeds.push_back(i);
  }
  auto centers = x.index_select(0, torch::tensor(seeds, torch::kLong));
  const int k_target = options.k_init;

  IsodataResult result;
  std::vector<int> labels;
  std::vector<int64_t> counts;
  for (int it = 0; it < options.max_iter; ++it) {
    result.iterations = it + 1;
    centers = prune(x, centers, options.min_samples);
    labels = assign(x, centers);
    const int k = static_cast<int>(centers.size(0));
    auto updated = mean_of(x, labels, k, counts);

    // Split wide clusters while below twice the requested count.
    std::vector<torch::Tensor> next;
    int splits = 0;
    for (int c = 0; c < k; ++c) {
      std::vector<int64_t> idx;
      for (int64_t i = 0; i < n; ++i)
        if (labels[i] == c) idx.push_back(i);
      auto pts = x.index_select(0, torch::tensor(idx, torch::kLong));
      auto sd = (pts - updated[c]).pow(2).mean(0).sqrt();
      auto [smax, dim] = sd.max(0);
      const bool can_split = k + splits < 2 * k_target && static_cast<int64_t>(idx.size()) >= 2 * std::max(1, options.min_samples);
      if (can_split && smax.item<double>() > options.split_std) {
        auto offset = torch::zeros_like(updated[c]);
        offset[dim.item<int64_t>()] = smax.item<double>() * 0.5;
        next.push_back(updated[c] + offset);
        next.push_back(updated[c] - offset);
        ++splits;
      } else {
        next.push_back(updated[c]);
      }
    }
    auto candidate = torch::stack(next);

    // Merge the closest pairs under the distance threshold.
    if (splits == 0 && candidate.size(0) > 1) {
      auto refreshed = mean_of(x, assign(x, candidate), static_cast<int>(candidate.size(0)), counts);
      auto d = torch::cdist(refreshed, refreshed);
      std::vector<std::tuple<double, int, int>> pairs;
      for (int a = 0; a < d.size(0); ++a)
        for (int b = a + 1; b < d.size(0); ++b) {
          const double v = d[a][b].item<double>();
          if (v < options.merge_dist) pairs.emplace_back(v, a, b);
        }
      std::sort(pairs.begin(), pairs.end());
      std::vector<bool> used(refreshed.size(0), false), dropped(refreshed.size(0), false);
      int merges = 0;
      auto merged = refreshed.clone();
      for (const auto& [v, a, b] : pairs) {
        if (merges >= options.max_pairs) break;
        if (used[a] || used[b]) continue;
        const double na = static_cast<double>(counts[a]), nb = static_cast<double>(counts[b]);
        merged[a] = (refreshed[a] * na + refreshed[b] * nb) / std::max(1.0, na + nb);
        used[a] = used[b] = true;
        dropped[b] = true;
        ++merges;
      }
      std::vector<int64_t> keep;
      for (int64_t c = 0; c < merged.size(0); ++c)
        if (!dropped[c]) keep.push_back(c);
      candidate = merged.index_select(0, torch::tensor(keep, torch::kLong));
    }

    const bool same = candidate.sizes() == centers.sizes() && torch::allclose(candidate, centers, 0.0, 1e-12);
    centers = candidate;
    if (same) {
      result.converged = true;
      break;
    }
  }
  centers = prune(x, centers, 1);
  labels = assign(x, centers);
  result.centers = mean_of(x, labels, static_cast<int>(centers.size(0)), counts);
  result.labels = std::move(labels);
  return result;
}

IsodataResult isodata_cluster_map(const torch::Tensor& features, const IsodataOptions& options) {
  auto f = features.dim() == 4 && features.size(0) == 1 ? features.squeeze(0) : features;
  if (f.dim() != 3) throw ShapeError("isodata: feature map must be (C,H,W)");
  return isodata_cluster(f.reshape({f.size(0), -1}).t(), options);
}

}  // namespace mfn::metrics
