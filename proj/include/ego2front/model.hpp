#pragma once

#include "ego2front/codec.hpp"
#include "ego2front/condition.hpp"
#include "ego2front/config.hpp"
#include "ego2front/denoiser.hpp"
#include "ego2front/schedule.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace ego2front {

// One training or inference batch. Images are (N, C, H, W) in [-1, 1]; masks
// (N, 1, H, W) in [0, 1].
struct TrainingBatch {
    torch::Tensor frontal;
    torch::Tensor ego;
    torch::Tensor mask;
    std::vector<std::string> ids;
    uint64_t seed = 0;  // per-batch randomness inside the model (concept dropout)

    int64_t size() const { return ego.size(0); }
    // Throws UserError naming the first invalid sample.
    void validate(bool require_frontal = true) const;
};

// The surface the compound loss needs from a model.
class DenoisingModel {
public:
    virtual ~DenoisingModel() = default;
    virtual torch::Tensor encode_target(const torch::Tensor& frontal) = 0;
    virtual torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor& t,
                                        const TrainingBatch& batch) = 0;
    virtual torch::Tensor decode_raw(const torch::Tensor& latent) = 0;
};

struct ParameterGroup {
    std::string name;
    bool trainable = false;
    int64_t count = 0;
};

struct ParameterCensus {
    std::vector<ParameterGroup> groups;

    int64_t trainable_total() const;
    int64_t frozen_total() const;
    const ParameterGroup* find(const std::string& name) const;
};

class Ego2FrontModelImpl : public torch::nn::Module, public DenoisingModel {
public:
    explicit Ego2FrontModelImpl(const RunConfig& config);

    // Conditioning that stays fixed across denoising steps for one batch.
    struct Prepared {
        torch::Tensor ego_latent;
        torch::Tensor context;
        torch::Tensor mask;
    };

    Prepared prepare(const TrainingBatch& batch);
    torch::Tensor predict_prepared(const torch::Tensor& z_t, const torch::Tensor& t, const Prepared& prepared);
    ConditioningBundle bundle(const Prepared& prepared, const torch::Tensor& z_t, const torch::Tensor& t);

    torch::Tensor encode_target(const torch::Tensor& frontal) override;
    torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor& t, const TrainingBatch& batch) override;
    torch::Tensor decode_raw(const torch::Tensor& latent) override;

    // Full reverse process for a batch of ego images and pose masks; returns
    // images clamped to [-1, 1].
    torch::Tensor generate(const TrainingBatch& batch, const NoiseSchedule& schedule, const SamplerOptions& options,
                           double guidance_scale = 1.0);

    ParameterCensus census();
    std::vector<torch::Tensor> trainable_parameters();

    Codec& codec() { return codec_; }
    ConceptEncoder& concept_encoder() { return concept_; }
    ControlBranch& control() { return control_; }
    Denoiser& denoiser() { return denoiser_; }
    bool control_enabled() const { return !control_.is_empty(); }
    // Detaches the pose branch for a forward pass (neutrality checks).
    void set_control_active(bool active) { control_active_ = active; }
    const RunConfig& config() const { return config_; }

private:
    void apply_freeze_policy();

    RunConfig config_;
    Codec codec_{nullptr};
    ConceptEncoder concept_{nullptr};
    ControlBranch control_{nullptr};
    Denoiser denoiser_{nullptr};
    bool control_active_ = true;
};
TORCH_MODULE(Ego2FrontModel);

// Builds a model with parameters initialized from `seed`.
Ego2FrontModel make_model(const RunConfig& config, uint64_t seed);

}  // namespace ego2front
