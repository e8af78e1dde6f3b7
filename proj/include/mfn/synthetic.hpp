#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mfn/config.hpp"
#include "mfn/data_pipeline.hpp"

namespace mfn::data {

// Street-like toy scene: sky, facades, road, plus annotated static objects
// (signs, poles, vegetation) and moving ones (cars, people). Roughly one
// scene in five carries a large vehicle that pushes the moving-object ratio
// over the default filter threshold.
struct SyntheticScene {
  torch::Tensor image;  // (3,H,W) in [0,1]
  std::vector<InstanceAnnotation> annotations;
};

SyntheticScene synthetic_scene(uint64_t seed, Size2 size, const PipelineConfig& cfg);

// images/NNNNNN.png, annotations/NNNNNN.json and manifest.jsonl under dir.
// Every test_every-th scene goes to the test split (0: none).
void write_synthetic_dataset(const std::filesystem::path& dir, int count, Size2 size, uint64_t seed, int test_every,
                             const PipelineConfig& cfg);

}  // namespace mfn::data
