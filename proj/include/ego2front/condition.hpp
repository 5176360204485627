#pragma once

#include "ego2front/blocks.hpp"
#include "ego2front/denoiser.hpp"
#include "ego2front/tensor.hpp"

#include <torch/torch.h>

#include <memory>
#include <string>
#include <vector>

namespace ego2front {

// Binary silhouette of the target body in T-pose, (1, H, W) or (N, 1, H, W)
// with values in [0, 1].
struct PoseMask {
    torch::Tensor data;
    std::string source = "silhouette";

    // Throws unless values lie in [0, 1] and some pixel exceeds 0.5.
    void validate() const;
    torch::Tensor as_batch() const { return data.dim() == 4 ? data : data.unsqueeze(0); }
};

enum class ConceptVariant { GlobalCls, GridDecoder };

ConceptVariant parse_concept_variant(const std::string& name);
std::string to_string(ConceptVariant variant);

struct ConceptEmbedding {
    torch::Tensor tokens;  // (N, token_count, embed_dim)
    ConceptVariant variant = ConceptVariant::GlobalCls;

    int64_t token_count() const { return tokens.size(-2); }
    int64_t embed_dim() const { return tokens.size(-1); }
};

struct ConceptSpec {
    ConceptVariant variant = ConceptVariant::GlobalCls;
    int64_t embed_dim = 128;
    int64_t queries = 8;
    int64_t backbone_width = 64;
    int64_t patch = 8;
    int64_t image_size = 64;
    int64_t image_channels = 3;
    // A missing backbone is replaced by the trainable summarizer only when allowed.
    bool backbone_available = true;
    bool allow_fallback = true;

    void validate() const;
    int64_t grid_tokens() const { return (image_size / patch) * (image_size / patch); }
};

// Image -> (pooled vector, patch-feature grid).
struct BackboneFeatures {
    torch::Tensor pooled;  // (N, W)
    torch::Tensor grid;    // (N, G, W)
};

// Frozen, randomly initialized patch-transformer with the interface of a
// pretrained image-text encoder.
class StandInBackboneImpl : public torch::nn::Module {
public:
    explicit StandInBackboneImpl(const ConceptSpec& spec);
    BackboneFeatures forward(const torch::Tensor& image);

private:
    torch::nn::Conv2d patch_embed_{nullptr};
    torch::Tensor cls_token_, positions_;
    nn::TransformerBlock block_{nullptr};
    torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(StandInBackbone);

// Trainable convolutional replacement used when no backbone is available.
class ConvSummarizerImpl : public torch::nn::Module {
public:
    explicit ConvSummarizerImpl(const ConceptSpec& spec);
    BackboneFeatures forward(const torch::Tensor& image);

private:
    torch::nn::Conv2d patchify_{nullptr}, mix_{nullptr};
};
TORCH_MODULE(ConvSummarizer);

// Learned queries cross-attending over the patch grid.
class GridDecoderImpl : public torch::nn::Module {
public:
    GridDecoderImpl(int64_t queries, int64_t grid_tokens, int64_t grid_width, int64_t embed_dim);
    torch::Tensor forward(const torch::Tensor& grid);

    torch::Tensor& queries() { return queries_; }
    torch::Tensor& positions() { return positions_; }

private:
    torch::Tensor queries_, positions_;
    torch::nn::Linear grid_proj_{nullptr};
    nn::TransformerBlock block_{nullptr};
    torch::nn::LayerNorm norm_{nullptr};
};
TORCH_MODULE(GridDecoder);

class ConceptEncoderImpl : public torch::nn::Module {
public:
    explicit ConceptEncoderImpl(ConceptSpec spec);

    const ConceptSpec& spec() const { return spec_; }
    // "stand_in" or "fallback_summarizer"; recorded in run metadata.
    std::string backbone_source() const;

    ConceptEmbedding forward(const torch::Tensor& image);

    torch::nn::Linear& projection() { return projection_; }
    GridDecoder& grid_decoder() { return grid_decoder_; }
    bool has_backbone() const { return !backbone_.is_empty(); }

private:
    BackboneFeatures features(const torch::Tensor& image);

    ConceptSpec spec_;
    StandInBackbone backbone_{nullptr};
    ConvSummarizer fallback_{nullptr};
    torch::nn::Linear projection_{nullptr};
    GridDecoder grid_decoder_{nullptr};
};
TORCH_MODULE(ConceptEncoder);

ConceptEmbedding encode_concept_global(ConceptEncoder& encoder, const ImageTensor& ego);
ConceptEmbedding encode_concept_grid(ConceptEncoder& encoder, const ImageTensor& ego);

// Pose-mask encoder mirroring the denoiser's encoder half. Every injection
// site ends in a zero-initialized 1x1 convolution.
class ControlBranchImpl : public torch::nn::Module {
public:
    // Rejects configurations whose latent grid cannot carry the denoiser's levels.
    ControlBranchImpl(const DenoiserSpec& spec, int64_t downsample_factor, int64_t image_size);

    std::vector<torch::Tensor> forward(const torch::Tensor& mask, const torch::Tensor& z_fused,
                                       const torch::Tensor& t, const torch::Tensor& context);

    int64_t sites() const { return spec_.injection_sites(); }
    const DenoiserSpec& spec() const { return spec_; }
    // Zero convolutions at the injection sites.
    std::vector<torch::Tensor> output_projection_parameters();

private:
    DenoiserSpec spec_;
    int64_t downsample_factor_;
    torch::nn::Sequential hint_{nullptr};
    TimeEmbedding time_embed_{nullptr};
    EncoderHalf encoder_{nullptr};
    torch::nn::ModuleList zero_convs_{nullptr};
};
TORCH_MODULE(ControlBranch);

std::vector<torch::Tensor> encode_pose_control(ControlBranch& branch, const PoseMask& mask,
                                               const LatentTensor& noised_input, int64_t t,
                                               const ConceptEmbedding& embedding);

// Channel concatenation [z_t, ego] -> fused latent.
LatentTensor fuse_ego_latent(const LatentTensor& z_t, const LatentTensor& ego_latent);
torch::Tensor fuse_ego_latent(const torch::Tensor& z_t, const torch::Tensor& ego_latent);

struct ConditioningBundle {
    ConceptEmbedding concept_embedding;
    std::vector<torch::Tensor> control_residuals;  // empty when the pose branch is detached
    LatentTensor ego_latent;
};

// Denoiser call with a bundle: residuals injected when present.
torch::Tensor predict_noise(Denoiser& denoiser, const torch::Tensor& z_fused, const torch::Tensor& t,
                            const ConditioningBundle& bundle);

}  // namespace ego2front
