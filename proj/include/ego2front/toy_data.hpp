#pragma once

#include "ego2front/dataset.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ego2front::toy {

// Procedural paired shapes: a frontal T-pose figure and top-down views of
// the same figure. Shirt and trouser colors, sleeve length and trouser
// length are shared between the two views.
struct Subject {
    std::string id;
    torch::Tensor frontal;            // (3, S, S) in [-1, 1]
    torch::Tensor mask;               // (1, S, S) binary silhouette
    std::vector<torch::Tensor> ego;   // (3, S, S) each
    ClothingLabels clothing;
    std::vector<double> pose;         // frontal joints
    std::vector<std::vector<double>> ego_poses;
};

Subject make_subject(uint64_t seed, int64_t size = 64, int64_t ego_frames = 10);

TrainingSet make_training_set(int64_t subjects, uint64_t seed, int64_t size = 64, int64_t ego_frames = 10);

// Writes `<root>/ego` and `<root>/frontal` with frame indexes. Subject k's
// frontal frame sits at t = 100k + 50 s with its ego frames spaced 0.6 s
// around it.
void write_dataset(const std::filesystem::path& root, int64_t subjects, uint64_t seed, int64_t size = 64,
                   int64_t ego_frames = 10);

}  // namespace ego2front::toy
