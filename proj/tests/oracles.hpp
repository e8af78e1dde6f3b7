#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <vector>

// Independent loop-based reference implementations shared by the unit tests
// and the acceptance runner.
namespace mfn::oracle {

// Plain-loop oracles over contiguous double tensors.
inline std::vector<double> values(const torch::Tensor& t) {
  auto c = t.to(torch::kDouble).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

inline double rec_oracle(const torch::Tensor& p, const torch::Tensor& g, const torch::Tensor& m, double alpha) {
  // p, g: (B,C,H,W); m: (B,1,H,W)
  const int64_t B = p.size(0), C = p.size(1), HW = p.size(2) * p.size(3);
  auto pv = values(p), gv = values(g), mv = values(m);
  double s = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < HW; ++i) {
        const size_t k = static_cast<size_t>((b * C + c) * HW + i);
        s += std::abs(pv[k] - gv[k]) * (1.0 + alpha * mv[static_cast<size_t>(b * HW + i)]);
      }
  return s / static_cast<double>(B * C * HW);
}

inline double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// Gram of a (B,C,H,W) map as a flat B*C*C vector, normalized by C*H*W.
inline std::vector<double> gram_oracle(const torch::Tensor& f) {
  const int64_t B = f.size(0), C = f.size(1), HW = f.size(2) * f.size(3);
  auto v = values(f);
  std::vector<double> g(static_cast<size_t>(B * C * C), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < C; ++i)
      for (int64_t j = 0; j < C; ++j) {
        double s = 0;
        for (int64_t k = 0; k < HW; ++k)
          s += v[static_cast<size_t>((b * C + i) * HW + k)] * v[static_cast<size_t>((b * C + j) * HW + k)];
        g[static_cast<size_t>((b * C + i) * C + j)] = s / static_cast<double>(C * HW);
      }
  return g;
}

inline double mean_sq(const std::vector<double>& a, double target) {
  double s = 0;
  for (double x : a) s += (x - target) * (x - target);
  return s / static_cast<double>(a.size());
}

// Reflect-padded 3x3 patches, cosine similarity and softmax, written out
// index by index for a single-channel-agnostic (C,H,W) double feature map.
inline torch::Tensor brute_scores(const torch::Tensor& f) {
  const int64_t C = f.size(0), H = f.size(1), W = f.size(2), N = H * W;
  auto refl = [](int64_t i, int64_t n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  std::vector<std::vector<double>> patch(N);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx)
            patch[y * W + x].push_back(f[c][refl(y + dy, H)][refl(x + dx, W)].item<double>());
  auto out = torch::zeros({N, N}, torch::kDouble);
  for (int64_t i = 0; i < N; ++i) {
    std::vector<double> cos(N);
    double z = 0;
    for (int64_t j = 0; j < N; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (size_t k = 0; k < patch[i].size(); ++k) {
        dot += patch[i][k] * patch[j][k];
        ni += patch[i][k] * patch[i][k];
        nj += patch[j][k] * patch[j][k];
      }
      cos[j] = std::exp(dot / (std::sqrt(ni) * std::sqrt(nj)));
      z += cos[j];
    }
    for (int64_t j = 0; j < N; ++j) out[i][j] = cos[j] / z;
  }
  return out;
}

// Straight sliding-window SSIM on luma with an 11x11, sigma 1.5 Gaussian.
inline double ssim_oracle(const torch::Tensor& a, const torch::Tensor& b) {
  auto gray = [](const torch::Tensor& t) {
    auto d = t.to(torch::kDouble);
    return (0.299 * d[0] + 0.587 * d[1] + 0.114 * d[2]).contiguous();
  };
  auto x = gray(a), y = gray(b);
  const int64_t H = x.size(0), W = x.size(1), K = 11;
  double w[11][11], z = 0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) z += w[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / 4.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto X = x.accessor<double, 2>(), Y = y.accessor<double, 2>();
  double total = 0;
  int64_t n = 0;
  for (int64_t r = 0; r + K <= H; ++r)
    for (int64_t c = 0; c + K <= W; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
          mx += w[i][j] / z * X[r + i][c + j];
          my += w[i][j] / z * Y[r + i][c + j];
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
          const double dx = X[r + i][c + j] - mx, dy = Y[r + i][c + j] - my;
          vx += w[i][j] / z * dx * dx;
          vy += w[i][j] / z * dy * dy;
          cxy += w[i][j] / z * dx * dy;
        }
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++n;
    }
  return total / static_cast<double>(n);
}

}  // namespace mfn::oracle
