#pragma once

#include <torch/torch.h>

#include <optional>

namespace ego2front::nn {

// Largest group count <= 32 that divides `channels`.
int64_t norm_groups(int64_t channels);

torch::nn::GroupNorm group_norm(int64_t channels);

// Sets every parameter of `module` to zero.
void zero_parameters(torch::nn::Module& module);

// Scaled dot-product attention over (N, L, C) inputs split into `heads`.
torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        int64_t heads);

class MultiHeadAttentionImpl : public torch::nn::Module {
public:
    MultiHeadAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t heads);

    // Self-attention when `context` is empty.
    torch::Tensor forward(const torch::Tensor& x, const std::optional<torch::Tensor>& context = {});

private:
    int64_t heads_;
    torch::nn::Linear to_q_{nullptr}, to_k_{nullptr}, to_v_{nullptr}, to_out_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

class FeedForwardImpl : public torch::nn::Module {
public:
    FeedForwardImpl(int64_t dim, int64_t mult = 4);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(FeedForward);

// Pre-norm transformer block: self-attention, optional cross-attention, MLP.
class TransformerBlockImpl : public torch::nn::Module {
public:
    TransformerBlockImpl(int64_t dim, int64_t context_dim, int64_t heads, bool cross_attention);
    torch::Tensor forward(torch::Tensor x, const std::optional<torch::Tensor>& context = {});

private:
    bool cross_;
    torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr}, norm3_{nullptr};
    MultiHeadAttention self_attn_{nullptr}, cross_attn_{nullptr};
    FeedForward ff_{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Feature map -> tokens -> TransformerBlock with cross-attention -> feature map,
// added back to the input.
class SpatialTransformerImpl : public torch::nn::Module {
public:
    SpatialTransformerImpl(int64_t channels, int64_t context_dim, int64_t head_dim = 32);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

private:
    torch::nn::GroupNorm norm_{nullptr};
    torch::nn::Conv2d proj_in_{nullptr}, proj_out_{nullptr};
    TransformerBlock block_{nullptr};
};
TORCH_MODULE(SpatialTransformer);

// GroupNorm-SiLU-conv twice, with an additive projection of the time embedding.
class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& time_emb);

private:
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
    torch::nn::Linear time_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1);
torch::nn::Conv2d conv1x1(int64_t in, int64_t out);

}  // namespace ego2front::nn
