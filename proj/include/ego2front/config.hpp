#pragma once

#include "ego2front/codec.hpp"
#include "ego2front/condition.hpp"
#include "ego2front/denoiser.hpp"
#include "ego2front/schedule.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ego2front {

struct ScheduleConfig {
    int64_t steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct AugmentConfig {
    double p = 0.5;                  // ego rotation probability
    double q = 0.5;                  // frontal perturbation probability
    double zoom_max = 1.15;
    double shift_max = 0.05;         // fraction of the frame
    double rotation_max_deg = 5.0;   // frontal
    double ego_rotation_max_deg = 10.0;
};

struct TrainConfig {
    int64_t steps = 500;
    int64_t batch_size = 8;
    double learning_rate = 5e-4;
    uint64_t seed = 0;
    int64_t checkpoint_every = 100;
    int64_t codec_steps = 600;
    double codec_learning_rate = 2e-3;
};

struct SampleConfig {
    int64_t steps = 25;
    SamplerKind sampler = SamplerKind::Strided;
    double guidance_scale = 1.0;
};

struct EvalConfig {
    double hip_fraction = 0.5;
    double psnr_cap = 99.0;
};

struct DataConfig {
    double window = 5.0;
    int64_t per_frontal = 10;
    int64_t max_ego = 12;
    int64_t val_percent = 15;
};

struct PathConfig {
    std::string manifest;
    std::string output_dir = "runs";
};

struct RunConfig {
    int64_t image_size = 64;
    ScheduleConfig schedule;
    CodecSpec codec;
    DenoiserSpec denoiser;
    ConceptSpec concept_spec;
    bool control = true;
    bool train_only_attention = false;
    double concept_dropout = 0.0;
    double lambda_diff = 1.0;
    double lambda_perc = 0.2;
    AugmentConfig augment;
    TrainConfig train;
    SampleConfig sample;
    EvalConfig eval;
    DataConfig data;
    PathConfig paths;

    // Fills derived fields (denoiser channel counts, concept image size) and
    // checks cross-field consistency. Throws UserError.
    void finalize();

    NoiseSchedule build_schedule() const;

    // Sorted "key = value" lines covering every key.
    std::string resolved_text() const;
    // SHA-256 of the resolved text, excluding keys that do not change the
    // model or data stream (step budget, checkpoint cadence, paths).
    std::string digest() const;
    std::string short_digest() const { return digest().substr(0, 16); }

    // Applies one key; throws UserError for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    static std::vector<std::string> keys();
};

// Parses "key = value" lines ('#' comments, blank lines ignored) over the
// defaults. Unknown keys are collected and reported together.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Applies "key=value" overrides after the file.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

std::string sha256_hex(const std::string& data);

}  // namespace ego2front
