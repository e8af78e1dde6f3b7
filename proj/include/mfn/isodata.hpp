#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace mfn::metrics {

struct IsodataOptions {
  int k_init = 8;
  int min_samples = 1;       // clusters with fewer members are dissolved
  double split_std = 1.0;    // split when the largest per-dimension std exceeds this
  double merge_dist = 0.5;   // merge center pairs closer than this
  int max_pairs = 2;         // merges per iteration
  int max_iter = 50;
  uint64_t seed = 0;
};

struct IsodataResult {
  std::vector<int> labels;  // one per point, contiguous ids from 0
  torch::Tensor centers;    // (K, D) double
  int iterations = 0;
  bool converged = false;
};

// points: (N, D). Throws ConfigError when k_init < 1.
IsodataResult isodata_cluster(const torch::Tensor& points, const IsodataOptions& options);

// Feature map (C,H,W) or (1,C,H,W); labels are in row-major pixel order.
IsodataResult isodata_cluster_map(const torch::Tensor& features, const IsodataOptions& options);

}  // namespace mfn::metrics
