#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mfn/config.hpp"
#include "mfn/data_pipeline.hpp"

namespace mfn::io {

// RGB image as a (3,H,W) float tensor in [0,1]. Throws DataError.
torch::Tensor load_image(const std::filesystem::path& path);
std::optional<Size2> probe_image_size(const std::filesystem::path& path);

// (3,H,W) in [0,1], clamped and rounded to 8 bits.
void save_image(const std::filesystem::path& path, const torch::Tensor& image);

// Single-channel 8-bit: 255 = hole, 0 = known. Loading treats > 127 as hole.
data::BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const data::BinaryMask& mask);

// 8-bit indexed label image, one value per cluster id (ids must be < 256).
void save_label_image(const std::filesystem::path& path, std::span<const int> labels, int64_t height, int64_t width);

// Side-by-side strip of equally sized (3,H,W) images.
void save_grid(const std::filesystem::path& path, const std::vector<torch::Tensor>& images);

}  // namespace mfn::io
