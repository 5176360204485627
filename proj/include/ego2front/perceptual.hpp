#pragma once

#include "ego2front/tensor.hpp"

#include <torch/torch.h>

#include <memory>
#include <string>

namespace torch::jit {
struct Module;
}

namespace ego2front {

// Feature-space image distance. Inputs are (N, C, H, W) in [-1, 1]; the
// result holds one non-negative distance per sample.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    virtual torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) = 0;
    virtual std::string name() const = 0;
};

// Fixed, randomly initialized conv feature pyramid. Channel vectors are
// unit-normalized per pixel, squared differences averaged over channels and
// space, then summed over the three taps.
class FeatureDistanceImpl : public torch::nn::Module {
public:
    explicit FeatureDistanceImpl(int64_t image_channels = 3);
    std::vector<torch::Tensor> features(const torch::Tensor& x);
    torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

private:
    torch::nn::Sequential stage1_{nullptr}, stage2_{nullptr}, stage3_{nullptr};
};
TORCH_MODULE(FeatureDistance);

class FeatureDistanceMetric : public PerceptualMetric {
public:
    explicit FeatureDistanceMetric(uint64_t seed = 0x1b1b5, int64_t image_channels = 3);
    torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) override;
    std::string name() const override { return "feature_distance"; }
    FeatureDistance& network() { return net_; }

private:
    FeatureDistance net_{nullptr};
};

// TorchScript module whose forward(a, b) returns per-sample distances.
class ScriptedPerceptualMetric : public PerceptualMetric {
public:
    explicit ScriptedPerceptualMetric(const std::string& path);
    ~ScriptedPerceptualMetric() override;
    torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) override;
    std::string name() const override { return "scripted:" + path_; }

private:
    std::string path_;
    std::unique_ptr<torch::jit::Module> module_;
};

// Single-pair distance with input validation.
double perceptual_distance(PerceptualMetric& metric, const ImageTensor& a, const ImageTensor& b);

}  // namespace ego2front
