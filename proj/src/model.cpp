#include "ego2front/model.hpp"

#include "ego2front/error.hpp"

namespace ego2front {

void TrainingBatch::validate(bool require_frontal) const {
    auto id_of = [&](int64_t i) {
        return i < static_cast<int64_t>(ids.size()) ? ids[static_cast<size_t>(i)] : "#" + std::to_string(i);
    };
    if (!ego.defined() || ego.dim() != 4 || ego.size(0) == 0) throw UserError("batch is empty");
    if (!mask.defined() || mask.dim() != 4 || mask.size(0) != ego.size(0) || mask.size(1) != 1) {
        throw ShapeError("batch masks must be (N,1,H,W) aligned with the ego images");
    }
    if (require_frontal && (!frontal.defined() || !frontal.sizes().equals(ego.sizes()))) {
        throw ShapeError("batch frontal images must match the ego images in shape");
    }
    for (int64_t i = 0; i < ego.size(0); ++i) {
        auto check_image = [&](const torch::Tensor& x, const char* what) {
            if (!torch::isfinite(x).all().item<bool>() || x.min().item<double>() < -1.0 || x.max().item<double>() > 1.0) {
                throw UserError("sample " + id_of(i) + ": " + what + " image outside [-1, 1] or non-finite");
            }
        };
        check_image(ego[i], "ego");
        if (require_frontal) check_image(frontal[i], "frontal");
        const auto m = mask[i];
        if (m.min().item<double>() < 0.0 || m.max().item<double>() > 1.0 || !(m > 0.5).any().item<bool>()) {
            throw UserError("sample " + id_of(i) + ": pose mask empty or outside [0, 1]");
        }
    }
}

int64_t ParameterCensus::trainable_total() const {
    int64_t n = 0;
    for (const auto& g : groups) n += g.trainable ? g.count : 0;
    return n;
}

int64_t ParameterCensus::frozen_total() const {
    int64_t n = 0;
    for (const auto& g : groups) n += g.trainable ? 0 : g.count;
    return n;
}

const ParameterGroup* ParameterCensus::find(const std::string& name) const {
    for (const auto& g : groups) {
        if (g.name == name) return &g;
    }
    return nullptr;
}

Ego2FrontModelImpl::Ego2FrontModelImpl(const RunConfig& config) : config_(config) {
    config_.finalize();
    codec_ = register_module("codec", Codec(config_.codec));
    concept_ = register_module("concept", ConceptEncoder(config_.concept_spec));
    if (config_.control) {
        control_ = register_module(
            "control", ControlBranch(config_.denoiser, config_.codec.downsample_factor, config_.image_size));
    }
    denoiser_ = register_module("denoiser", Denoiser(config_.denoiser));
    apply_freeze_policy();
}

namespace {

int64_t numel_of(const std::vector<torch::Tensor>& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.numel();
    return n;
}

void set_trainable(const std::vector<torch::Tensor>& params, bool trainable) {
    for (auto p : params) p.set_requires_grad(trainable);
}

}  // namespace

void Ego2FrontModelImpl::apply_freeze_policy() {
    set_trainable(codec_->parameters(), false);
    if (codec_->spec().kind == CodecKind::HumanPriorAdapter) {
        set_trainable(codec_->human_prior()->reduction()->parameters(), true);
    }
    // The concept backbone freezes itself; projection and decoder stay trainable.
    if (!control_.is_empty()) set_trainable(control_->parameters(), true);
    set_trainable(denoiser_->parameters(), !config_.train_only_attention);
    if (config_.train_only_attention) set_trainable(denoiser_->attention_parameters(), true);
}

ParameterCensus Ego2FrontModelImpl::census() {
    ParameterCensus c;
    auto add = [&](std::string name, const std::vector<torch::Tensor>& params) {
        if (params.empty()) return;
        // A group is trainable when all of its parameters are.
        bool trainable = true;
        for (const auto& p : params) trainable = trainable && p.requires_grad();
        c.groups.push_back({std::move(name), trainable, numel_of(params)});
    };
    if (codec_->spec().kind == CodecKind::HumanPriorAdapter) {
        add("codec", codec_->autoencoder()->parameters());
        auto& prior = codec_->human_prior();
        std::vector<torch::Tensor> extractor;
        for (const auto& item : prior->named_parameters()) {
            if (item.key().rfind("reduction", 0) != 0) extractor.push_back(item.value());
        }
        add("human_prior_extractor", extractor);
        add("human_prior_reduction", prior->reduction()->parameters());
    } else {
        add("codec", codec_->parameters());
    }
    std::vector<torch::Tensor> backbone, head;
    for (const auto& item : concept_->named_parameters()) {
        const auto& key = item.key();
        if (key.rfind("backbone", 0) == 0 || key.rfind("fallback", 0) == 0) {
            backbone.push_back(item.value());
        } else {
            head.push_back(item.value());
        }
    }
    add(concept_->has_backbone() ? "concept_backbone" : "concept_fallback", backbone);
    add(config_.concept_spec.variant == ConceptVariant::GlobalCls ? "concept_projection" : "concept_grid_decoder", head);
    if (!control_.is_empty()) {
        std::vector<torch::Tensor> body;
        for (const auto& item : control_->named_parameters()) {
            if (item.key().rfind("zero_convs", 0) != 0) body.push_back(item.value());
        }
        add("control_branch", body);
        add("control_output_projections", control_->output_projection_parameters());
    }
    if (config_.train_only_attention) {
        std::vector<torch::Tensor> attn, rest;
        for (const auto& item : denoiser_->named_parameters()) {
            (item.key().find("attn") != std::string::npos ? attn : rest).push_back(item.value());
        }
        add("denoiser_attention", attn);
        add("denoiser_other", rest);
    } else {
        add("denoiser", denoiser_->parameters());
    }
    return c;
}

std::vector<torch::Tensor> Ego2FrontModelImpl::trainable_parameters() {
    std::vector<torch::Tensor> out;
    for (const auto& p : parameters()) {
        if (p.requires_grad()) out.push_back(p);
    }
    return out;
}

Ego2FrontModelImpl::Prepared Ego2FrontModelImpl::prepare(const TrainingBatch& batch) {
    Prepared p;
    p.ego_latent = codec_->encode_ego_tensor(batch.ego);
    if (codec_->spec().kind != CodecKind::HumanPriorAdapter) p.ego_latent = p.ego_latent.detach();
    p.context = concept_->forward(batch.ego).tokens;
    if (is_training() && config_.concept_dropout > 0.0) {
        auto gen = make_generator(mix_seed(batch.seed, 0xd0));
        auto keep = (torch::rand({p.context.size(0), 1, 1}, gen, p.context.options()) >= config_.concept_dropout)
                        .to(p.context.scalar_type());
        p.context = p.context * keep;
    }
    p.mask = batch.mask.to(p.ego_latent.scalar_type());
    return p;
}

ConditioningBundle Ego2FrontModelImpl::bundle(const Prepared& prepared, const torch::Tensor& z_t, const torch::Tensor& t) {
    ConditioningBundle b;
    b.concept_embedding = {prepared.context, config_.concept_spec.variant};
    b.ego_latent = {prepared.ego_latent, codec_->spec().scale};
    if (!control_.is_empty() && control_active_) {
        const auto fused = fuse_ego_latent(z_t, prepared.ego_latent);
        b.control_residuals = control_->forward(prepared.mask, fused, t, prepared.context);
    }
    return b;
}

torch::Tensor Ego2FrontModelImpl::predict_prepared(const torch::Tensor& z_t, const torch::Tensor& t,
                                                   const Prepared& prepared) {
    const auto b = bundle(prepared, z_t, t);
    return ego2front::predict_noise(denoiser_, fuse_ego_latent(z_t, prepared.ego_latent), t, b);
}

torch::Tensor Ego2FrontModelImpl::encode_target(const torch::Tensor& frontal) {
    torch::NoGradGuard no_grad;
    return codec_->encode_tensor(frontal);
}

torch::Tensor Ego2FrontModelImpl::predict_noise(const torch::Tensor& z_t, const torch::Tensor& t,
                                                const TrainingBatch& batch) {
    return predict_prepared(z_t, t, prepare(batch));
}

torch::Tensor Ego2FrontModelImpl::decode_raw(const torch::Tensor& latent) { return codec_->decode_raw(latent); }

torch::Tensor Ego2FrontModelImpl::generate(const TrainingBatch& batch, const NoiseSchedule& schedule,
                                           const SamplerOptions& options, double guidance_scale) {
    batch.validate(false);
    torch::NoGradGuard no_grad;
    const bool was_training = is_training();
    eval();
    const auto prepared = prepare(batch);
    Prepared unconditional = prepared;
    unconditional.context = torch::zeros_like(prepared.context);

    const auto n = batch.size();
    const auto f = codec_->spec().downsample_factor;
    const std::vector<int64_t> shape{n, codec_->spec().latent_channels, batch.ego.size(2) / f, batch.ego.size(3) / f};
    NoisePredictor predictor = [&](const torch::Tensor& z, int64_t t) {
        const auto steps = torch::full({n}, t, torch::kLong);
        auto eps = predict_prepared(z, steps, prepared);
        if (guidance_scale != 1.0) {
            const auto uncond = predict_prepared(z, steps, unconditional);
            eps = uncond + guidance_scale * (eps - uncond);
        }
        return eps;
    };
    auto z0 = sample(predictor, schedule, shape, options, prepared.ego_latent.scalar_type());
    auto images = codec_->decode_raw(z0).clamp(-1.0, 1.0);
    if (was_training) train();
    return images;
}

Ego2FrontModel make_model(const RunConfig& config, uint64_t seed) {
    torch::manual_seed(seed);
    return Ego2FrontModel(config);
}

}  // namespace ego2front
