#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace ego2front {

// 8-bit RGB PNG <-> (3, H, W) float in [-1, 1], mapped linearly.
torch::Tensor read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const torch::Tensor& image);

// 8-bit grayscale PNG <-> (1, H, W) float in [0, 1].
torch::Tensor read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const torch::Tensor& mask);

// Images of equal height placed side by side, each (C, H, W) in [-1, 1];
// single-channel inputs in [0, 1] are expanded to gray RGB.
torch::Tensor side_by_side(const std::vector<torch::Tensor>& images);

}  // namespace ego2front
