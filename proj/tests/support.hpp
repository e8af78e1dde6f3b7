#pragma once

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mfn/config.hpp"
#include "mfn/data_pipeline.hpp"
#include "mfn/synthetic.hpp"

namespace mfn::test {

struct GradcheckResult {
  bool ok = true;
  double worst = 0.0;  // largest |analytic - numeric| - (atol + rtol*|numeric|)
  std::string where;
  int64_t checked = 0;
};

// Central-difference check of d<w, f(inputs)>/d inputs for a fixed random
// projection w. Inputs must be double tensors with requires_grad set; they
// are perturbed in place and restored.
inline GradcheckResult gradcheck(const std::function<torch::Tensor()>& f, const std::vector<torch::Tensor>& inputs,
                                 double eps = 1e-6, double atol = 1e-5, double rtol = 1e-3) {
  auto probe = f();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(7);
  auto w = at::randn(probe.sizes(), gen, torch::kDouble);
  auto scalar = [&] { return (f() * w).sum(); };

  auto grads = torch::autograd::grad({scalar()}, inputs, {}, false, false, /*allow_unused=*/true);
  GradcheckResult r;
  torch::NoGradGuard guard;
  for (size_t k = 0; k < inputs.size(); ++k) {
    auto x = inputs[k];
    auto* p = x.data_ptr<double>();
    auto g = grads[k].defined() ? grads[k].contiguous() : torch::zeros_like(x);
    const auto* gp = g.data_ptr<double>();
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double up = scalar().item<double>();
      p[i] = orig - eps;
      const double down = scalar().item<double>();
      p[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double excess = std::abs(gp[i] - numeric) - (atol + rtol * std::abs(numeric));
      ++r.checked;
      if (excess > 0 && r.ok) {
        r.ok = false;
        r.where = "input " + std::to_string(k) + " element " + std::to_string(i) + ": analytic " +
                  std::to_string(gp[i]) + " numeric " + std::to_string(numeric);
      }
      r.worst = std::max(r.worst, excess);
    }
  }
  return r;
}

inline torch::Tensor leaf(torch::Tensor t) { return t.to(torch::kDouble).detach().requires_grad_(true); }

// Module parameters, converted to double, as gradcheck inputs.
inline std::vector<torch::Tensor> double_params(torch::nn::Module& m) {
  m.to(torch::kDouble);
  return m.parameters();
}

// Seeded synthetic scenes shared by the data-pipeline tests.
inline std::vector<data::SyntheticScene> scenes(int count, Size2 size, uint64_t seed) {
  std::vector<data::SyntheticScene> out;
  DataConfig cfg;
  for (int i = 0; i < count; ++i) out.push_back(data::synthetic_scene(data::derive_seed(seed, i), size, cfg));
  return out;
}

inline torch::Tensor randu(std::vector<int64_t> shape, uint64_t seed, torch::Dtype dtype = torch::kDouble) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return at::rand(shape, gen, dtype);
}

inline torch::Tensor randn(std::vector<int64_t> shape, uint64_t seed, torch::Dtype dtype = torch::kDouble) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return at::randn(shape, gen, dtype);
}

}  // namespace mfn::test
