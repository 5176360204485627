#pragma once

#include "ego2front/datapipe.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace ego2front {

// In-memory training set: one frontal image and pose mask per entry, each
// with one or more ego frames.
struct TrainingSet {
    torch::Tensor frontal;           // (M, 3, H, W) in [-1, 1]
    torch::Tensor masks;             // (M, 1, H, W) in [0, 1]
    std::vector<torch::Tensor> ego;  // M entries of (k_i, 3, H, W)
    std::vector<std::string> ids;
    std::vector<std::optional<ClothingLabels>> clothing;

    int64_t size() const { return frontal.defined() ? frontal.size(0) : 0; }
    void validate() const;
    // Every frontal and ego image stacked, for codec fitting.
    torch::Tensor all_images() const;
    TrainingSet subset(const std::vector<int64_t>& indices) const;
};

// Loads the entries of one split ("train", "val", or "" for all); paths are
// resolved against the manifest's directory.
TrainingSet load_training_set(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
                              const std::string& split);

}  // namespace ego2front
