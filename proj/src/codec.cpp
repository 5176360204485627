#include "ego2front/codec.hpp"

#include "ego2front/blocks.hpp"
#include "ego2front/error.hpp"
#include "ego2front/schedule.hpp"

#include <torch/script.h>

#include <bit>
#include <filesystem>

namespace ego2front {

CodecKind parse_codec_kind(const std::string& name) {
    if (name == "toy_autoencoder") return CodecKind::ToyAutoencoder;
    if (name == "pretrained_vae_adapter") return CodecKind::PretrainedVaeAdapter;
    if (name == "human_prior_adapter") return CodecKind::HumanPriorAdapter;
    throw UserError("unknown codec kind '" + name + "'");
}

std::string to_string(CodecKind kind) {
    switch (kind) {
        case CodecKind::ToyAutoencoder: return "toy_autoencoder";
        case CodecKind::PretrainedVaeAdapter: return "pretrained_vae_adapter";
        case CodecKind::HumanPriorAdapter: return "human_prior_adapter";
    }
    return "?";
}

void CodecSpec::validate() const {
    if (downsample_factor < 1 || !std::has_single_bit(static_cast<uint64_t>(downsample_factor))) {
        throw UserError("codec downsample factor must be a power of two, got " +
                        std::to_string(downsample_factor));
    }
    if (latent_channels < 1 || hidden_channels < 1 || image_channels < 1) {
        throw UserError("codec channel counts must be positive");
    }
    if (!(scale > 0.0)) throw UserError("codec scale must be positive");
}

int64_t CodecSpec::stages() const {
    return std::countr_zero(static_cast<uint64_t>(downsample_factor));
}

namespace {

int64_t stage_channels(const CodecSpec& spec, int64_t stage) {
    return spec.hidden_channels * (stage == 0 ? 1 : 2);
}

}  // namespace

ToyAutoencoderImpl::ToyAutoencoderImpl(const CodecSpec& spec) {
    const auto stages = spec.stages();
    encoder_ = torch::nn::Sequential();
    encoder_->push_back(nn::conv3x3(spec.image_channels, stage_channels(spec, 0)));
    for (int64_t s = 0; s < stages; ++s) {
        encoder_->push_back(torch::nn::SiLU());
        encoder_->push_back(nn::conv3x3(stage_channels(spec, s), stage_channels(spec, s + 1), 2));
    }
    encoder_->push_back(torch::nn::SiLU());
    encoder_->push_back(nn::conv3x3(stage_channels(spec, stages), spec.latent_channels));

    decoder_ = torch::nn::Sequential();
    decoder_->push_back(nn::conv3x3(spec.latent_channels, stage_channels(spec, stages)));
    for (int64_t s = stages; s > 0; --s) {
        decoder_->push_back(torch::nn::SiLU());
        decoder_->push_back(torch::nn::ConvTranspose2d(
            torch::nn::ConvTranspose2dOptions(stage_channels(spec, s), stage_channels(spec, s - 1), 4)
                .stride(2)
                .padding(1)));
    }
    decoder_->push_back(torch::nn::SiLU());
    decoder_->push_back(nn::conv3x3(stage_channels(spec, 0), spec.image_channels));

    register_module("encoder", encoder_);
    register_module("decoder", decoder_);
}

torch::Tensor ToyAutoencoderImpl::encode(const torch::Tensor& image) { return encoder_->forward(image); }

torch::Tensor ToyAutoencoderImpl::decode(const torch::Tensor& latent) { return decoder_->forward(latent); }

StandInHumanExtractor::StandInHumanExtractor(int64_t image_channels) {
    net_ = register_module("net", torch::nn::Sequential(nn::conv3x3(image_channels, 16, 2), torch::nn::SiLU(),
                                                        nn::conv3x3(16, 32), torch::nn::SiLU()));
    for (auto& p : parameters()) p.set_requires_grad(false);
}

torch::Tensor StandInHumanExtractor::forward(const torch::Tensor& image) { return net_->forward(image); }

HumanPriorEncoderImpl::HumanPriorEncoderImpl(const CodecSpec& spec,
                                             std::shared_ptr<FeatureExtractor> extractor)
    : extractor_(std::move(extractor)) {
    int64_t channels = spec.image_channels;
    int64_t stride = spec.downsample_factor;
    if (extractor_) {
        register_module("extractor", extractor_);
        for (auto& p : extractor_->parameters()) p.set_requires_grad(false);
        channels = extractor_->out_channels();
        if (spec.downsample_factor % extractor_->stride() != 0) {
            throw UserError("human-prior extractor stride does not divide the codec downsample factor");
        }
        stride = spec.downsample_factor / extractor_->stride();
    }
    reduction_ = register_module(
        "reduction", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, spec.latent_channels, stride).stride(stride)));
}

torch::Tensor HumanPriorEncoderImpl::forward(const torch::Tensor& image) {
    if (!extractor_) {
        throw AblationUnavailable("ablation variant unavailable: no human-prior feature extractor configured");
    }
    torch::Tensor features;
    {
        // The extractor is frozen; gradients stop at its output.
        torch::NoGradGuard no_grad;
        features = extractor_->forward(image);
    }
    return reduction_(features);
}

CodecImpl::CodecImpl(CodecSpec spec, std::shared_ptr<FeatureExtractor> extractor, bool allow_stand_in)
    : spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.kind == CodecKind::PretrainedVaeAdapter) {
        if (spec_.weights_path.empty() || !std::filesystem::exists(spec_.weights_path)) {
            throw AblationUnavailable("ablation variant unavailable: pretrained VAE weights not found at '" +
                                      spec_.weights_path + "'");
        }
        try {
            pretrained_ = std::make_unique<torch::jit::Module>(torch::jit::load(spec_.weights_path));
        } catch (const c10::Error& e) {
            throw AblationUnavailable("ablation variant unavailable: cannot load '" + spec_.weights_path +
                                      "': " + e.what_without_backtrace());
        }
        pretrained_->eval();
        for (auto p : pretrained_->parameters()) p.set_requires_grad(false);
        return;
    }
    autoencoder_ = register_module("autoencoder", ToyAutoencoder(spec_));
    if (spec_.kind == CodecKind::HumanPriorAdapter) {
        if (!extractor && allow_stand_in) extractor = std::make_shared<StandInHumanExtractor>(spec_.image_channels);
        human_prior_ = register_module("human_prior", HumanPriorEncoder(spec_, std::move(extractor)));
    }
}

CodecImpl::~CodecImpl() = default;

void CodecImpl::check_image(const ImageTensor& image) const {
    if (image.range() != kCanonicalRange) {
        throw RangeError("codec expects images in the canonical [-1, 1] range");
    }
    if (image.channels() != spec_.image_channels) {
        throw ShapeError("codec expects " + std::to_string(spec_.image_channels) + " image channels, got " +
                         std::to_string(image.channels()));
    }
    const auto f = spec_.downsample_factor;
    if (image.height() % f != 0 || image.width() % f != 0) {
        throw ShapeError("image resolution " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()) + " not divisible by downsample factor " +
                         std::to_string(f));
    }
}

torch::Tensor CodecImpl::encode_tensor(const torch::Tensor& image) {
    torch::Tensor z;
    if (pretrained_) {
        z = pretrained_->get_method("encode")({image}).toTensor();
    } else {
        z = autoencoder_->encode(image);
    }
    return z * spec_.scale;
}

torch::Tensor CodecImpl::encode_ego_tensor(const torch::Tensor& image) {
    if (spec_.kind == CodecKind::HumanPriorAdapter) return human_prior_->forward(image) * spec_.scale;
    return encode_tensor(image);
}

torch::Tensor CodecImpl::decode_raw(const torch::Tensor& latent) {
    const auto z = latent / spec_.scale;
    if (pretrained_) return pretrained_->get_method("decode")({z}).toTensor();
    return autoencoder_->decode(z);
}

namespace {

LatentTensor finish_latent(torch::Tensor z, const ImageTensor& image, const CodecSpec& spec) {
    const auto f = spec.downsample_factor;
    if (z.size(-3) != spec.latent_channels || z.size(-2) * f != image.height() ||
        z.size(-1) * f != image.width()) {
        throw ShapeError("encoder produced " + shape_string(z) + ", inconsistent with the codec spec");
    }
    require_finite(z, "latent");
    if (!image.batched()) z = z.squeeze(0);
    return {z, spec.scale};
}

}  // namespace

LatentTensor CodecImpl::encode(const ImageTensor& image) {
    check_image(image);
    torch::NoGradGuard no_grad;
    return finish_latent(encode_tensor(image.as_batch()), image, spec_);
}

LatentTensor CodecImpl::encode_ego(const ImageTensor& image) {
    check_image(image);
    torch::NoGradGuard no_grad;
    return finish_latent(encode_ego_tensor(image.as_batch()), image, spec_);
}

LatentTensor CodecImpl::encode_human_prior(const ImageTensor& image) {
    check_image(image);
    if (!human_prior_ || !human_prior_->available()) {
        throw AblationUnavailable("ablation variant unavailable: no human-prior feature extractor configured");
    }
    torch::NoGradGuard no_grad;
    return finish_latent(human_prior_->forward(image.as_batch()) * spec_.scale, image, spec_);
}

ImageTensor CodecImpl::decode(const LatentTensor& latent) {
    const auto& z = latent.data;
    if (!z.defined() || (z.dim() != 3 && z.dim() != 4) || z.size(-3) != spec_.latent_channels) {
        throw ShapeError("decode: latent " + (z.defined() ? shape_string(z) : std::string("undefined")) +
                         " does not have " + std::to_string(spec_.latent_channels) + " channels");
    }
    torch::NoGradGuard no_grad;
    auto x = decode_raw(z.dim() == 3 ? z.unsqueeze(0) : z);
    if (z.dim() == 3) x = x.squeeze(0);
    return ImageTensor::clamped(x, kCanonicalRange);
}

CodecFitResult fit_toy_autoencoder(Codec& codec, const torch::Tensor& images, const CodecFitOptions& options) {
    if (codec->spec().kind == CodecKind::PretrainedVaeAdapter) {
        throw UserError("the pretrained VAE adapter is frozen and cannot be fitted");
    }
    if (images.dim() != 4 || images.size(0) == 0) throw ShapeError("codec fit expects a nonempty (N,C,H,W) batch");
    auto& ae = codec->autoencoder();
    std::vector<torch::Tensor> params;
    for (auto& p : ae->parameters()) {
        p.set_requires_grad(true);
        params.push_back(p);
    }
    torch::optim::Adam optim(params, torch::optim::AdamOptions(options.learning_rate));
    auto gen = make_generator(options.seed);
    const auto n = images.size(0);
    const auto batch = std::min(options.batch_size, n);
    for (int64_t step = 0; step < options.steps; ++step) {
        auto idx = torch::randperm(n, gen, torch::kLong).slice(0, 0, batch);
        auto x = images.index_select(0, idx);
        optim.zero_grad();
        auto loss = torch::mse_loss(ae->decode(ae->encode(x)), x);
        loss.backward();
        optim.step();
    }
    for (auto& p : ae->parameters()) p.set_requires_grad(false);

    torch::NoGradGuard no_grad;
    auto latents = ae->encode(images);
    const double sd = latents.std().item<double>();
    CodecFitResult result;
    result.final_mse = torch::mse_loss(ae->decode(latents), images).item<double>();
    result.latent_std = sd;
    codec->set_scale(sd > 1e-8 ? 1.0 / sd : 1.0);
    return result;
}

}  // namespace ego2front
