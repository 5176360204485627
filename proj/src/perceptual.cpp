#include "ego2front/perceptual.hpp"

#include "ego2front/blocks.hpp"
#include "ego2front/error.hpp"

#include <torch/script.h>

#include <filesystem>

namespace ego2front {

FeatureDistanceImpl::FeatureDistanceImpl(int64_t image_channels) {
    stage1_ = register_module("stage1", torch::nn::Sequential(nn::conv3x3(image_channels, 16), torch::nn::SiLU(),
                                                              nn::conv3x3(16, 16), torch::nn::SiLU()));
    stage2_ = register_module("stage2", torch::nn::Sequential(torch::nn::AvgPool2d(2), nn::conv3x3(16, 32),
                                                              torch::nn::SiLU(), nn::conv3x3(32, 32), torch::nn::SiLU()));
    stage3_ = register_module("stage3", torch::nn::Sequential(torch::nn::AvgPool2d(2), nn::conv3x3(32, 64),
                                                              torch::nn::SiLU()));
    for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> FeatureDistanceImpl::features(const torch::Tensor& x) {
    auto f1 = stage1_->forward(x);
    auto f2 = stage2_->forward(f1);
    auto f3 = stage3_->forward(f2);
    return {f1, f2, f3};
}

torch::Tensor FeatureDistanceImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
    const auto fa = features(a);
    const auto fb = features(b);
    auto total = torch::zeros({a.size(0)}, a.options());
    for (size_t l = 0; l < fa.size(); ++l) {
        auto unit = [](const torch::Tensor& f) { return f / (f.pow(2).sum(1, true) + 1e-10).sqrt(); };
        total = total + (unit(fa[l]) - unit(fb[l])).pow(2).mean({1, 2, 3});
    }
    return total;
}

FeatureDistanceMetric::FeatureDistanceMetric(uint64_t seed, int64_t image_channels) {
    torch::manual_seed(seed);
    net_ = FeatureDistance(image_channels);
}

torch::Tensor FeatureDistanceMetric::distance(const torch::Tensor& a, const torch::Tensor& b) {
    if (!a.sizes().equals(b.sizes())) {
        throw ShapeError("perceptual distance: resolution mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
    return net_->forward(a.to(net_->parameters().front().scalar_type()), b.to(net_->parameters().front().scalar_type()));
}

ScriptedPerceptualMetric::ScriptedPerceptualMetric(const std::string& path) : path_(path) {
    if (!std::filesystem::exists(path)) throw AblationUnavailable("perceptual model not found at '" + path + "'");
    try {
        module_ = std::make_unique<torch::jit::Module>(torch::jit::load(path));
    } catch (const c10::Error& e) {
        throw AblationUnavailable("cannot load perceptual model '" + path + "': " + e.what_without_backtrace());
    }
    module_->eval();
    for (auto p : module_->parameters()) p.set_requires_grad(false);
}

ScriptedPerceptualMetric::~ScriptedPerceptualMetric() = default;

torch::Tensor ScriptedPerceptualMetric::distance(const torch::Tensor& a, const torch::Tensor& b) {
    if (!a.sizes().equals(b.sizes())) {
        throw ShapeError("perceptual distance: resolution mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
    auto out = module_->forward({a, b}).toTensor();
    return out.reshape({a.size(0)});
}

double perceptual_distance(PerceptualMetric& metric, const ImageTensor& a, const ImageTensor& b) {
    if (a.data().sizes() != b.data().sizes()) {
        throw ShapeError("perceptual distance: resolution mismatch " + shape_string(a.data()) + " vs " +
                         shape_string(b.data()));
    }
    if (a.range() != b.range()) throw RangeError("perceptual distance: images declare different value ranges");
    torch::NoGradGuard no_grad;
    // Remap to the canonical range the metric expects.
    auto canon = [](const ImageTensor& x) { return x.unit() * 2.0 - 1.0; };
    auto ta = a.range() == kCanonicalRange ? a.as_batch() : canon(a).reshape(a.as_batch().sizes());
    auto tb = b.range() == kCanonicalRange ? b.as_batch() : canon(b).reshape(b.as_batch().sizes());
    return metric.distance(ta, tb).mean().item<double>();
}

}  // namespace ego2front
