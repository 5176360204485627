#include "ego2front/condition.hpp"

#include "ego2front/error.hpp"

#include <algorithm>
#include <bit>

namespace ego2front {

void PoseMask::validate() const {
    if (!data.defined() || (data.dim() != 3 && data.dim() != 4) || data.size(-3) != 1) {
        throw ShapeError("pose mask must be single-channel (1,H,W) or (N,1,H,W), got " +
                         (data.defined() ? shape_string(data) : std::string("undefined")));
    }
    require_finite(data, "pose mask");
    if (data.min().item<double>() < 0.0 || data.max().item<double>() > 1.0) {
        throw RangeError("pose mask values must lie in [0, 1]");
    }
    if (!(data > 0.5).any().item<bool>()) throw RangeError("pose mask has no foreground pixel");
}

ConceptVariant parse_concept_variant(const std::string& name) {
    if (name == "global_cls") return ConceptVariant::GlobalCls;
    if (name == "grid_decoder") return ConceptVariant::GridDecoder;
    throw UserError("unknown concept variant '" + name + "'");
}

std::string to_string(ConceptVariant variant) {
    return variant == ConceptVariant::GlobalCls ? "global_cls" : "grid_decoder";
}

void ConceptSpec::validate() const {
    if (embed_dim < 1 || backbone_width < 1 || queries < 1) throw UserError("concept: sizes must be positive");
    if (patch < 1 || image_size % patch != 0) {
        throw UserError("concept: patch size must divide the image size");
    }
}

StandInBackboneImpl::StandInBackboneImpl(const ConceptSpec& spec) {
    const auto w = spec.backbone_width;
    patch_embed_ = register_module(
        "patch_embed",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(spec.image_channels, w, spec.patch).stride(spec.patch)));
    cls_token_ = register_parameter("cls_token", torch::randn({1, 1, w}) * 0.02);
    positions_ = register_parameter("positions", torch::randn({1, spec.grid_tokens() + 1, w}) * 0.02);
    block_ = register_module("block", nn::TransformerBlock(w, w, std::max<int64_t>(1, w / 32), false));
    norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({w})));
    for (auto& p : parameters()) p.set_requires_grad(false);
}

BackboneFeatures StandInBackboneImpl::forward(const torch::Tensor& image) {
    auto grid = patch_embed_(image).flatten(2).transpose(1, 2);  // (N, G, W)
    auto cls = cls_token_.expand({grid.size(0), 1, grid.size(2)});
    auto tokens = torch::cat({cls, grid}, 1) + positions_;
    tokens = norm_(block_(tokens));
    return {tokens.select(1, 0), tokens.slice(1, 1)};
}

ConvSummarizerImpl::ConvSummarizerImpl(const ConceptSpec& spec) {
    patchify_ = register_module("patchify",
                                torch::nn::Conv2d(torch::nn::Conv2dOptions(spec.image_channels, spec.backbone_width, spec.patch)
                                                      .stride(spec.patch)));
    mix_ = register_module("mix", nn::conv1x1(spec.backbone_width, spec.backbone_width));
}

BackboneFeatures ConvSummarizerImpl::forward(const torch::Tensor& image) {
    auto grid = mix_(torch::silu(patchify_(image))).flatten(2).transpose(1, 2);
    return {grid.mean(1), grid};
}

GridDecoderImpl::GridDecoderImpl(int64_t queries, int64_t grid_tokens, int64_t grid_width, int64_t embed_dim) {
    queries_ = register_parameter("queries", torch::randn({1, queries, embed_dim}) * 0.02);
    positions_ = register_parameter("positions", torch::randn({1, grid_tokens, embed_dim}) * 0.02);
    grid_proj_ = register_module("grid_proj", torch::nn::Linear(grid_width, embed_dim));
    block_ = register_module("block",
                             nn::TransformerBlock(embed_dim, embed_dim, std::max<int64_t>(1, embed_dim / 32), true));
    norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({embed_dim})));
}

torch::Tensor GridDecoderImpl::forward(const torch::Tensor& grid) {
    if (grid.dim() != 3 || grid.size(1) != positions_.size(1)) {
        throw ShapeError("grid decoder expects (N, " + std::to_string(positions_.size(1)) + ", W), got " +
                         shape_string(grid));
    }
    auto context = grid_proj_(grid) + positions_;
    auto q = queries_.expand({grid.size(0), queries_.size(1), queries_.size(2)});
    return norm_(block_(q, context));
}

ConceptEncoderImpl::ConceptEncoderImpl(ConceptSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.backbone_available) {
        backbone_ = register_module("backbone", StandInBackbone(spec_));
    } else if (spec_.allow_fallback) {
        fallback_ = register_module("fallback", ConvSummarizer(spec_));
    } else {
        throw AblationUnavailable("concept backbone unavailable and fallback disabled");
    }
    if (spec_.variant == ConceptVariant::GlobalCls) {
        projection_ = register_module(
            "projection", torch::nn::Linear(torch::nn::LinearOptions(spec_.backbone_width, spec_.embed_dim).bias(false)));
    } else {
        grid_decoder_ = register_module(
            "grid_decoder", GridDecoder(spec_.queries, spec_.grid_tokens(), spec_.backbone_width, spec_.embed_dim));
    }
}

std::string ConceptEncoderImpl::backbone_source() const {
    return backbone_.is_empty() ? "fallback_summarizer" : "stand_in";
}

BackboneFeatures ConceptEncoderImpl::features(const torch::Tensor& image) {
    if (!backbone_.is_empty()) {
        torch::NoGradGuard no_grad;
        return backbone_->forward(image);
    }
    return fallback_->forward(image);
}

ConceptEmbedding ConceptEncoderImpl::forward(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(2) != spec_.image_size || image.size(3) != spec_.image_size) {
        throw ShapeError("concept encoder expects (N, C, " + std::to_string(spec_.image_size) + ", " +
                         std::to_string(spec_.image_size) + "), got " + shape_string(image));
    }
    auto feats = features(image);
    if (spec_.variant == ConceptVariant::GlobalCls) {
        return {projection_(feats.pooled).unsqueeze(1), spec_.variant};
    }
    return {grid_decoder_(feats.grid), spec_.variant};
}

namespace {

ConceptEmbedding run_concept(ConceptEncoder& encoder, const ImageTensor& ego, ConceptVariant expected) {
    if (encoder->spec().variant != expected) {
        throw UserError("concept encoder configured as " + to_string(encoder->spec().variant) + ", not " +
                        to_string(expected));
    }
    auto out = encoder->forward(ego.as_batch());
    if (!ego.batched()) out.tokens = out.tokens.squeeze(0);
    return out;
}

}  // namespace

ConceptEmbedding encode_concept_global(ConceptEncoder& encoder, const ImageTensor& ego) {
    return run_concept(encoder, ego, ConceptVariant::GlobalCls);
}

ConceptEmbedding encode_concept_grid(ConceptEncoder& encoder, const ImageTensor& ego) {
    return run_concept(encoder, ego, ConceptVariant::GridDecoder);
}

ControlBranchImpl::ControlBranchImpl(const DenoiserSpec& spec, int64_t downsample_factor, int64_t image_size)
    : spec_(spec), downsample_factor_(downsample_factor) {
    spec_.validate();
    if (downsample_factor < 1 || !std::has_single_bit(static_cast<uint64_t>(downsample_factor)) ||
        image_size % downsample_factor != 0) {
        throw ShapeError("control branch: image size " + std::to_string(image_size) +
                         " incompatible with downsample factor " + std::to_string(downsample_factor));
    }
    const auto latent = image_size / downsample_factor;
    const auto stride = int64_t{1} << (spec_.levels() - 1);
    if (latent % stride != 0) {
        throw ShapeError("control branch: latent size " + std::to_string(latent) + " cannot carry " +
                         std::to_string(spec_.levels()) + " denoiser levels");
    }

    hint_ = torch::nn::Sequential();
    int64_t ch = std::max<int64_t>(4, spec_.base_channels / 4);
    hint_->push_back(nn::conv3x3(1, ch));
    for (int64_t s = 0; s < std::countr_zero(static_cast<uint64_t>(downsample_factor)); ++s) {
        hint_->push_back(torch::nn::SiLU());
        hint_->push_back(nn::conv3x3(ch, ch * 2, 2));
        ch *= 2;
    }
    hint_->push_back(torch::nn::SiLU());
    auto hint_out = nn::conv3x3(ch, spec_.level_channels(0));
    nn::zero_parameters(*hint_out);
    hint_->push_back(hint_out);
    register_module("hint", hint_);

    time_embed_ = register_module("time_embed", TimeEmbedding(spec_.base_channels));
    encoder_ = register_module("encoder", EncoderHalf(spec_));
    zero_convs_ = register_module("zero_convs", torch::nn::ModuleList());
    for (int64_t site = 0; site < spec_.injection_sites(); ++site) {
        const auto c = site < spec_.levels() ? spec_.level_channels(site) : spec_.level_channels(spec_.levels() - 1);
        auto conv = nn::conv1x1(c, c);
        nn::zero_parameters(*conv);
        zero_convs_->push_back(conv);
    }
}

std::vector<torch::Tensor> ControlBranchImpl::forward(const torch::Tensor& mask, const torch::Tensor& z_fused,
                                                      const torch::Tensor& t, const torch::Tensor& context) {
    if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != z_fused.size(0) ||
        mask.size(2) != z_fused.size(2) * downsample_factor_ || mask.size(3) != z_fused.size(3) * downsample_factor_) {
        throw ShapeError("control branch: mask " + shape_string(mask) + " not registered to latent " +
                         shape_string(z_fused));
    }
    if (z_fused.size(1) != spec_.in_channels) {
        throw ShapeError("control branch: latent " + shape_string(z_fused) + " does not have " +
                         std::to_string(spec_.in_channels) + " channels");
    }
    const auto temb = time_embed_(t);
    auto enc = encoder_(z_fused, temb, context, hint_->forward(mask));
    std::vector<torch::Tensor> residuals;
    residuals.reserve(enc.sites.size());
    for (size_t i = 0; i < enc.sites.size(); ++i) {
        residuals.push_back(zero_convs_[i]->as<torch::nn::Conv2d>()->forward(enc.sites[i]));
    }
    return residuals;
}

std::vector<torch::Tensor> ControlBranchImpl::output_projection_parameters() { return zero_convs_->parameters(); }

std::vector<torch::Tensor> encode_pose_control(ControlBranch& branch, const PoseMask& mask,
                                               const LatentTensor& noised_input, int64_t t,
                                               const ConceptEmbedding& embedding) {
    mask.validate();
    const bool single = noised_input.data.dim() == 3;
    auto z = single ? noised_input.data.unsqueeze(0) : noised_input.data;
    auto ctx = embedding.tokens.dim() == 2 ? embedding.tokens.unsqueeze(0) : embedding.tokens;
    auto steps = torch::full({z.size(0)}, t, torch::kLong);
    auto res = branch->forward(mask.as_batch().to(z.scalar_type()), z, steps, ctx);
    return res;
}

torch::Tensor fuse_ego_latent(const torch::Tensor& z_t, const torch::Tensor& ego_latent) {
    if (z_t.dim() != ego_latent.dim() || z_t.dim() < 3 || z_t.size(-1) != ego_latent.size(-1) ||
        z_t.size(-2) != ego_latent.size(-2) || (z_t.dim() == 4 && z_t.size(0) != ego_latent.size(0))) {
        throw ShapeError("fuse_ego_latent: spatial mismatch " + shape_string(z_t) + " vs " + shape_string(ego_latent));
    }
    return torch::cat({z_t, ego_latent}, z_t.dim() - 3);
}

LatentTensor fuse_ego_latent(const LatentTensor& z_t, const LatentTensor& ego_latent) {
    return {fuse_ego_latent(z_t.data, ego_latent.data), z_t.scale};
}

torch::Tensor predict_noise(Denoiser& denoiser, const torch::Tensor& z_fused, const torch::Tensor& t,
                            const ConditioningBundle& bundle) {
    const auto& ctx = bundle.concept_embedding.tokens;
    if (bundle.control_residuals.empty()) return denoiser->forward(z_fused, t, ctx);
    return denoiser->forward(z_fused, t, ctx, &bundle.control_residuals);
}

}  // namespace ego2front
