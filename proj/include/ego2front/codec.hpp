#pragma once

#include "ego2front/tensor.hpp"

#include <torch/torch.h>

#include <memory>
#include <string>

namespace torch::jit {
struct Module;
}

namespace ego2front {

enum class CodecKind {
    ToyAutoencoder,
    PretrainedVaeAdapter,
    HumanPriorAdapter,
};

CodecKind parse_codec_kind(const std::string& name);
std::string to_string(CodecKind kind);

struct CodecSpec {
    CodecKind kind = CodecKind::ToyAutoencoder;
    int64_t downsample_factor = 8;
    int64_t latent_channels = 4;
    double scale = 1.0;
    int64_t hidden_channels = 32;
    int64_t image_channels = 3;
    // TorchScript archive with `encode` / `decode` methods; pretrained adapter only.
    std::string weights_path;

    // Throws UserError on a non power-of-two factor or non-positive sizes.
    void validate() const;
    int64_t stages() const;
};

// Strided-conv encoder and transposed-conv decoder. The decoder output is
// unbounded; Codec::decode clamps it.
class ToyAutoencoderImpl : public torch::nn::Module {
public:
    explicit ToyAutoencoderImpl(const CodecSpec& spec);

    torch::Tensor encode(const torch::Tensor& image);
    torch::Tensor decode(const torch::Tensor& latent);

private:
    torch::nn::Sequential encoder_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(ToyAutoencoder);

// Frozen network producing a spatial feature map at a fixed stride.
class FeatureExtractor : public torch::nn::Module {
public:
    virtual torch::Tensor forward(const torch::Tensor& image) = 0;
    virtual int64_t out_channels() const = 0;
    virtual int64_t stride() const = 0;
};

// Randomly initialized frozen conv stack standing in for a human-prior
// backbone (stride 2, 32 channels).
class StandInHumanExtractor : public FeatureExtractor {
public:
    explicit StandInHumanExtractor(int64_t image_channels = 3);
    torch::Tensor forward(const torch::Tensor& image) override;
    int64_t out_channels() const override { return 32; }
    int64_t stride() const override { return 2; }

private:
    torch::nn::Sequential net_{nullptr};
};

// Passes pixels through unchanged.
class IdentityExtractor : public FeatureExtractor {
public:
    explicit IdentityExtractor(int64_t image_channels = 3) : channels_(image_channels) {}
    torch::Tensor forward(const torch::Tensor& image) override { return image; }
    int64_t out_channels() const override { return channels_; }
    int64_t stride() const override { return 1; }

private:
    int64_t channels_;
};

// Frozen extractor followed by a learned strided convolution that lands on
// the codec's latent grid.
class HumanPriorEncoderImpl : public torch::nn::Module {
public:
    HumanPriorEncoderImpl(const CodecSpec& spec, std::shared_ptr<FeatureExtractor> extractor);

    torch::Tensor forward(const torch::Tensor& image);
    bool available() const { return extractor_ != nullptr; }
    torch::nn::Conv2d& reduction() { return reduction_; }

private:
    std::shared_ptr<FeatureExtractor> extractor_;
    torch::nn::Conv2d reduction_{nullptr};
};
TORCH_MODULE(HumanPriorEncoder);

class CodecImpl : public torch::nn::Module {
public:
    // The human-prior kind uses `extractor` when given, otherwise the stand-in;
    // pass `allow_stand_in = false` to model a missing backbone.
    explicit CodecImpl(CodecSpec spec, std::shared_ptr<FeatureExtractor> extractor = nullptr,
                       bool allow_stand_in = true);
    ~CodecImpl() override;

    const CodecSpec& spec() const { return spec_; }
    void set_scale(double scale) { spec_.scale = scale; }

    // Target-image path.
    LatentTensor encode(const ImageTensor& image);
    ImageTensor decode(const LatentTensor& latent);

    // Egocentric-image path: the human-prior encoder for that kind, encode() otherwise.
    LatentTensor encode_ego(const ImageTensor& image);
    LatentTensor encode_human_prior(const ImageTensor& image);

    // Differentiable batch paths on raw tensors, scale included; no range checks.
    torch::Tensor encode_tensor(const torch::Tensor& image);
    torch::Tensor encode_ego_tensor(const torch::Tensor& image);
    torch::Tensor decode_raw(const torch::Tensor& latent);

    ToyAutoencoder& autoencoder() { return autoencoder_; }
    HumanPriorEncoder& human_prior() { return human_prior_; }

private:
    void check_image(const ImageTensor& image) const;

    CodecSpec spec_;
    ToyAutoencoder autoencoder_{nullptr};
    HumanPriorEncoder human_prior_{nullptr};
    std::unique_ptr<torch::jit::Module> pretrained_;
};
TORCH_MODULE(Codec);

struct CodecFitOptions {
    int64_t steps = 400;
    int64_t batch_size = 8;
    double learning_rate = 2e-3;
    uint64_t seed = 0;
};

struct CodecFitResult {
    double final_mse = 0.0;
    double latent_std = 1.0;
};

// Trains the toy autoencoder on `images` (N, C, H, W) in [-1, 1] with an MSE
// reconstruction loss, then sets the codec scale to 1 / latent std.
CodecFitResult fit_toy_autoencoder(Codec& codec, const torch::Tensor& images,
                                   const CodecFitOptions& options);

}  // namespace ego2front
