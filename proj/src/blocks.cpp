#include "ego2front/blocks.hpp"

#include <cmath>

namespace ego2front::nn {

int64_t norm_groups(int64_t channels) {
    for (int64_t g = std::min<int64_t>(32, channels); g > 1; --g) {
        if (channels % g == 0) return g;
    }
    return 1;
}

torch::nn::GroupNorm group_norm(int64_t channels) {
    return torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(channels), channels).eps(1e-6));
}

void zero_parameters(torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    for (auto& p : module.parameters()) p.zero_();
}

torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        int64_t heads) {
    const auto n = q.size(0);
    const auto lq = q.size(1);
    const auto lk = k.size(1);
    const auto dim = q.size(2);
    const auto head_dim = dim / heads;
    auto split = [&](const torch::Tensor& x, int64_t len) {
        return x.reshape({n, len, heads, head_dim}).transpose(1, 2);
    };
    auto qh = split(q, lq);
    auto kh = split(k, lk);
    auto vh = split(v, lk);
    auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    auto out = torch::matmul(torch::softmax(scores, -1), vh);
    return out.transpose(1, 2).reshape({n, lq, dim});
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t heads)
    : heads_(heads) {
    TORCH_CHECK(query_dim % heads == 0, "attention width ", query_dim, " not divisible by ", heads,
                " heads");
    to_q_ = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(query_dim, query_dim).bias(false)));
    to_k_ = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(context_dim, query_dim).bias(false)));
    to_v_ = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(context_dim, query_dim).bias(false)));
    to_out_ = register_module("to_out", torch::nn::Linear(query_dim, query_dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& x,
                                              const std::optional<torch::Tensor>& context) {
    const auto& ctx = context ? *context : x;
    return to_out_(attention(to_q_(x), to_k_(ctx), to_v_(ctx), heads_));
}

FeedForwardImpl::FeedForwardImpl(int64_t dim, int64_t mult) {
    fc1_ = register_module("fc1", torch::nn::Linear(dim, dim * mult));
    fc2_ = register_module("fc2", torch::nn::Linear(dim * mult, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
    return fc2_(torch::gelu(fc1_(x)));
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t context_dim, int64_t heads,
                                           bool cross_attention)
    : cross_(cross_attention) {
    norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    self_attn_ = register_module("self_attn", MultiHeadAttention(dim, dim, heads));
    if (cross_) {
        norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
        cross_attn_ = register_module("cross_attn", MultiHeadAttention(dim, context_dim, heads));
    }
    norm3_ = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    ff_ = register_module("ff", FeedForward(dim));
}

torch::Tensor TransformerBlockImpl::forward(torch::Tensor x, const std::optional<torch::Tensor>& context) {
    x = x + self_attn_(norm1_(x));
    if (cross_) {
        TORCH_CHECK(context.has_value(), "cross-attention block called without context");
        x = x + cross_attn_(norm2_(x), context);
    }
    return x + ff_(norm3_(x));
}

SpatialTransformerImpl::SpatialTransformerImpl(int64_t channels, int64_t context_dim, int64_t head_dim) {
    const int64_t heads = std::max<int64_t>(1, channels / head_dim);
    norm_ = register_module("norm", group_norm(channels));
    proj_in_ = register_module("proj_in", conv1x1(channels, channels));
    block_ = register_module("block", TransformerBlock(channels, context_dim, heads, true));
    proj_out_ = register_module("proj_out", conv1x1(channels, channels));
}

torch::Tensor SpatialTransformerImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    auto tokens = proj_in_(norm_(x)).flatten(2).transpose(1, 2);  // (N, HW, C)
    tokens = block_(tokens, context);
    auto y = tokens.transpose(1, 2).reshape({n, c, h, w});
    return x + proj_out_(y);
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim) {
    norm1_ = register_module("norm1", group_norm(in_channels));
    conv1_ = register_module("conv1", conv3x3(in_channels, out_channels));
    time_proj_ = register_module("time_proj", torch::nn::Linear(time_dim, out_channels));
    norm2_ = register_module("norm2", group_norm(out_channels));
    conv2_ = register_module("conv2", conv3x3(out_channels, out_channels));
    if (in_channels != out_channels) skip_ = register_module("skip", conv1x1(in_channels, out_channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time_emb) {
    auto h = conv1_(torch::silu(norm1_(x)));
    h = h + time_proj_(torch::silu(time_emb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2_(torch::silu(norm2_(h)));
    return (skip_ ? skip_(x) : x) + h;
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

}  // namespace ego2front::nn
