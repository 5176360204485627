#pragma once

#include "ego2front/blocks.hpp"

#include <torch/torch.h>

#include <optional>
#include <string>
#include <vector>

namespace ego2front {

struct DenoiserSpec {
    int64_t base_channels = 64;
    std::vector<int64_t> channel_multipliers{1, 2, 4};
    std::vector<int64_t> attention_levels{1, 2};
    int64_t in_channels = 8;   // noised target latent + ego latent
    int64_t out_channels = 4;  // latent channels
    int64_t embed_dim = 128;   // cross-attention context width
    int64_t head_dim = 32;

    void validate() const;
    int64_t levels() const { return static_cast<int64_t>(channel_multipliers.size()); }
    int64_t level_channels(int64_t level) const;
    bool has_attention(int64_t level) const;
    int64_t time_dim() const { return base_channels * 4; }
    // One injection site per resolution level plus the mid block.
    int64_t injection_sites() const { return levels() + 1; }
    std::string site_name(int64_t site) const;
    // Activation shape at every injection site for a latent of the given size.
    std::vector<std::vector<int64_t>> site_shapes(int64_t batch, int64_t height, int64_t width) const;
};

// Sinusoidal step features followed by a two-layer MLP.
class TimeEmbeddingImpl : public torch::nn::Module {
public:
    explicit TimeEmbeddingImpl(int64_t base_channels);
    torch::Tensor forward(const torch::Tensor& t);

private:
    int64_t base_;
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(TimeEmbedding);

// Input convolution, one ResBlock (+ cross-attention) per level with stride-2
// downsampling between levels, and the mid block. Shared by the denoiser and
// the control branch.
class EncoderHalfImpl : public torch::nn::Module {
public:
    explicit EncoderHalfImpl(const DenoiserSpec& spec);

    struct Output {
        std::vector<torch::Tensor> sites;  // per-level outputs, then the mid output
    };

    // `input_offset` (optional) is added after the input convolution.
    // `residuals` (optional) are added to each site before it is consumed.
    Output forward(const torch::Tensor& x, const torch::Tensor& time_emb, const torch::Tensor& context,
                   const std::optional<torch::Tensor>& input_offset = {},
                   const std::vector<torch::Tensor>* residuals = nullptr);

private:
    DenoiserSpec spec_;
    torch::nn::Conv2d conv_in_{nullptr};
    torch::nn::ModuleList res_{nullptr}, attn_{nullptr}, down_{nullptr};
    nn::ResBlock mid_res1_{nullptr}, mid_res2_{nullptr};
    nn::SpatialTransformer mid_attn_{nullptr};
};
TORCH_MODULE(EncoderHalf);

// Noise-prediction U-Net over the fused latent.
class DenoiserImpl : public torch::nn::Module {
public:
    explicit DenoiserImpl(DenoiserSpec spec);

    const DenoiserSpec& spec() const { return spec_; }

    // z_fused (N, in_channels, h, w); t (N) int64 1-indexed; context (N, L, embed_dim).
    // `residuals`, when given, must hold one map per injection site.
    torch::Tensor forward(const torch::Tensor& z_fused, const torch::Tensor& t, const torch::Tensor& context,
                          const std::vector<torch::Tensor>* residuals = nullptr);

    // Parameters belonging to attention blocks, for the attention-only freeze mask.
    std::vector<torch::Tensor> attention_parameters();

private:
    void check_inputs(const torch::Tensor& z_fused, const torch::Tensor& t, const torch::Tensor& context,
                      const std::vector<torch::Tensor>* residuals) const;

    DenoiserSpec spec_;
    TimeEmbedding time_embed_{nullptr};
    EncoderHalf encoder_{nullptr};
    torch::nn::ModuleList up_res_{nullptr}, up_attn_{nullptr}, upsample_{nullptr};
    torch::nn::GroupNorm out_norm_{nullptr};
    torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(Denoiser);

}  // namespace ego2front
