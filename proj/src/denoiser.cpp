#include "ego2front/denoiser.hpp"

#include "ego2front/error.hpp"
#include "ego2front/schedule.hpp"
#include "ego2front/tensor.hpp"

#include <algorithm>

namespace ego2front {

void DenoiserSpec::validate() const {
    if (base_channels < 1 || channel_multipliers.empty()) throw UserError("denoiser: empty architecture");
    for (auto m : channel_multipliers) {
        if (m < 1) throw UserError("denoiser: channel multipliers must be positive");
    }
    for (auto a : attention_levels) {
        if (a < 0 || a >= levels()) {
            throw UserError("denoiser: attention level " + std::to_string(a) + " outside [0, " +
                            std::to_string(levels()) + ")");
        }
    }
    if (in_channels < 1 || out_channels < 1 || embed_dim < 1 || head_dim < 1) {
        throw UserError("denoiser: channel counts must be positive");
    }
}

int64_t DenoiserSpec::level_channels(int64_t level) const {
    return base_channels * channel_multipliers.at(static_cast<size_t>(level));
}

bool DenoiserSpec::has_attention(int64_t level) const {
    return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

std::string DenoiserSpec::site_name(int64_t site) const {
    return site < levels() ? "down[" + std::to_string(site) + "]" : std::string("mid");
}

std::vector<std::vector<int64_t>> DenoiserSpec::site_shapes(int64_t batch, int64_t height, int64_t width) const {
    std::vector<std::vector<int64_t>> shapes;
    for (int64_t l = 0; l < levels(); ++l) {
        shapes.push_back({batch, level_channels(l), height >> l, width >> l});
    }
    shapes.push_back({batch, level_channels(levels() - 1), height >> (levels() - 1), width >> (levels() - 1)});
    return shapes;
}

TimeEmbeddingImpl::TimeEmbeddingImpl(int64_t base_channels) : base_(base_channels) {
    fc1_ = register_module("fc1", torch::nn::Linear(base_channels, base_channels * 4));
    fc2_ = register_module("fc2", torch::nn::Linear(base_channels * 4, base_channels * 4));
}

torch::Tensor TimeEmbeddingImpl::forward(const torch::Tensor& t) {
    auto emb = timestep_embedding(t, base_).to(fc1_->weight.scalar_type());
    return fc2_(torch::silu(fc1_(emb)));
}

EncoderHalfImpl::EncoderHalfImpl(const DenoiserSpec& spec) : spec_(spec) {
    conv_in_ = register_module("conv_in", nn::conv3x3(spec.in_channels, spec.level_channels(0)));
    res_ = register_module("res", torch::nn::ModuleList());
    attn_ = register_module("attn", torch::nn::ModuleList());
    down_ = register_module("down", torch::nn::ModuleList());
    int64_t ch = spec.level_channels(0);
    for (int64_t l = 0; l < spec.levels(); ++l) {
        const auto out = spec.level_channels(l);
        res_->push_back(nn::ResBlock(ch, out, spec.time_dim()));
        // Placeholder Identity keeps indices aligned for levels without attention.
        if (spec.has_attention(l)) {
            attn_->push_back(nn::SpatialTransformer(out, spec.embed_dim, spec.head_dim));
        } else {
            attn_->push_back(torch::nn::Identity());
        }
        if (l + 1 < spec.levels()) down_->push_back(nn::conv3x3(out, out, 2));
        ch = out;
    }
    mid_res1_ = register_module("mid_res1", nn::ResBlock(ch, ch, spec.time_dim()));
    mid_attn_ = register_module("mid_attn", nn::SpatialTransformer(ch, spec.embed_dim, spec.head_dim));
    mid_res2_ = register_module("mid_res2", nn::ResBlock(ch, ch, spec.time_dim()));
}

EncoderHalfImpl::Output EncoderHalfImpl::forward(const torch::Tensor& x, const torch::Tensor& time_emb,
                                                 const torch::Tensor& context,
                                                 const std::optional<torch::Tensor>& input_offset,
                                                 const std::vector<torch::Tensor>* residuals) {
    Output out;
    auto h = conv_in_(x);
    if (input_offset) h = h + *input_offset;
    for (int64_t l = 0; l < spec_.levels(); ++l) {
        h = res_[l]->as<nn::ResBlock>()->forward(h, time_emb);
        if (spec_.has_attention(l)) h = attn_[l]->as<nn::SpatialTransformer>()->forward(h, context);
        if (residuals) h = h + (*residuals)[static_cast<size_t>(l)];
        out.sites.push_back(h);
        if (l + 1 < spec_.levels()) h = down_[l]->as<torch::nn::Conv2d>()->forward(h);
    }
    h = mid_res1_(h, time_emb);
    h = mid_attn_(h, context);
    h = mid_res2_(h, time_emb);
    if (residuals) h = h + residuals->back();
    out.sites.push_back(h);
    return out;
}

DenoiserImpl::DenoiserImpl(DenoiserSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    time_embed_ = register_module("time_embed", TimeEmbedding(spec_.base_channels));
    encoder_ = register_module("encoder", EncoderHalf(spec_));
    up_res_ = register_module("up_res", torch::nn::ModuleList());
    up_attn_ = register_module("up_attn", torch::nn::ModuleList());
    upsample_ = register_module("upsample", torch::nn::ModuleList());
    int64_t ch = spec_.level_channels(spec_.levels() - 1);
    for (int64_t l = spec_.levels() - 1; l >= 0; --l) {
        const auto out = spec_.level_channels(l);
        up_res_->push_back(nn::ResBlock(ch + out, out, spec_.time_dim()));
        if (spec_.has_attention(l)) {
            up_attn_->push_back(nn::SpatialTransformer(out, spec_.embed_dim, spec_.head_dim));
        } else {
            up_attn_->push_back(torch::nn::Identity());
        }
        if (l > 0) upsample_->push_back(nn::conv3x3(out, out));
        ch = out;
    }
    out_norm_ = register_module("out_norm", nn::group_norm(ch));
    out_conv_ = register_module("out_conv", nn::conv3x3(ch, spec_.out_channels));
}

void DenoiserImpl::check_inputs(const torch::Tensor& z_fused, const torch::Tensor& t,
                                const torch::Tensor& context, const std::vector<torch::Tensor>* residuals) const {
    if (z_fused.dim() != 4 || z_fused.size(1) != spec_.in_channels) {
        throw ShapeError("denoiser input " + shape_string(z_fused) + " does not have " +
                         std::to_string(spec_.in_channels) + " channels");
    }
    const auto stride = int64_t{1} << (spec_.levels() - 1);
    if (z_fused.size(2) % stride != 0 || z_fused.size(3) % stride != 0) {
        throw ShapeError("denoiser input " + shape_string(z_fused) + " not divisible by " + std::to_string(stride));
    }
    if (t.dim() != 1 || t.size(0) != z_fused.size(0)) {
        throw ShapeError("denoiser timestep vector " + shape_string(t) + " does not match batch");
    }
    if (context.dim() != 3 || context.size(0) != z_fused.size(0) || context.size(2) != spec_.embed_dim) {
        throw ShapeError("denoiser context " + shape_string(context) + " must be (N, L, " +
                         std::to_string(spec_.embed_dim) + ")");
    }
    if (residuals) {
        const auto expected = spec_.site_shapes(z_fused.size(0), z_fused.size(2), z_fused.size(3));
        if (residuals->size() != expected.size()) {
            throw ShapeError("expected " + std::to_string(expected.size()) + " control residuals, got " +
                             std::to_string(residuals->size()));
        }
        for (size_t i = 0; i < expected.size(); ++i) {
            if ((*residuals)[i].sizes().vec() != expected[i]) {
                throw ShapeError("control residual at site " + spec_.site_name(static_cast<int64_t>(i)) +
                                 " has shape " + shape_string((*residuals)[i]) + ", expected " +
                                 shape_string(torch::empty(expected[i], torch::kMeta)));
            }
        }
    }
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& z_fused, const torch::Tensor& t,
                                    const torch::Tensor& context, const std::vector<torch::Tensor>* residuals) {
    check_inputs(z_fused, t, context, residuals);
    const auto temb = time_embed_(t);
    auto enc = encoder_(z_fused, temb, context, std::nullopt, residuals);
    auto h = enc.sites.back();
    size_t up = 0;
    for (int64_t l = spec_.levels() - 1; l >= 0; --l, ++up) {
        h = torch::cat({h, enc.sites[static_cast<size_t>(l)]}, 1);
        h = up_res_[up]->as<nn::ResBlock>()->forward(h, temb);
        if (spec_.has_attention(l)) h = up_attn_[up]->as<nn::SpatialTransformer>()->forward(h, context);
        if (l > 0) {
            h = torch::nn::functional::interpolate(
                h, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
            h = upsample_[up]->as<torch::nn::Conv2d>()->forward(h);
        }
    }
    return out_conv_(torch::silu(out_norm_(h)));
}

std::vector<torch::Tensor> DenoiserImpl::attention_parameters() {
    std::vector<torch::Tensor> params;
    for (const auto& item : named_parameters()) {
        const auto& name = item.key();
        if (name.find("attn") != std::string::npos) params.push_back(item.value());
    }
    return params;
}

}  // namespace ego2front
