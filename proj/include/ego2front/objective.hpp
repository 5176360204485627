#pragma once

#include "ego2front/config.hpp"
#include "ego2front/dataset.hpp"
#include "ego2front/model.hpp"
#include "ego2front/perceptual.hpp"
#include "ego2front/schedule.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ego2front {

struct LossWeights {
    double lambda_diff = 1.0;
    double lambda_perc = 0.2;

    void validate() const;
};

struct LossComponents {
    torch::Tensor total;
    torch::Tensor diff;  // mean squared noise-prediction error
    torch::Tensor perc;  // mean perceptual distance of the decoded single-step estimate
};

// Recombines components; total == lambda_diff * diff + lambda_perc * perc.
torch::Tensor combine_loss(const torch::Tensor& diff, const torch::Tensor& perc, const LossWeights& weights);

// Draws t ~ U{1..T} and eps ~ N(0, I) per sample from `seed`, noises the
// encoded target, predicts the noise and scores both terms. The perceptual
// term is evaluated without gradient when its weight is zero.
LossComponents compound_loss(const TrainingBatch& batch, DenoisingModel& model, PerceptualMetric& metric,
                             const NoiseSchedule& schedule, const LossWeights& weights, uint64_t seed);

struct StepRecord {
    int64_t step = 0;
    double l_diff = 0.0;
    double l_perc = 0.0;
    double total = 0.0;
    double wall_time = 0.0;
};

inline constexpr int64_t kCheckpointFormatVersion = 1;

struct CheckpointInfo {
    int64_t format_version = kCheckpointFormatVersion;
    std::string config_hash;
    std::string config_text;
    int64_t step = 0;
    double codec_scale = 1.0;
    std::vector<std::string> group_tags;  // "name:trainable" / "name:frozen"
};

// Model, optimizer, schedule and perceptual metric for one run.
class TrainingSession {
public:
    explicit TrainingSession(RunConfig config);

    const RunConfig& config() const { return config_; }
    Ego2FrontModel& model() { return model_; }
    FeatureDistanceMetric& metric() { return metric_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    int64_t step() const { return step_; }
    bool codec_fitted() const { return codec_fitted_; }

    // Fits the toy codec once (no-op for the pretrained adapter or when
    // already fitted); returns the reconstruction MSE.
    double fit_codec(const TrainingSet& data);

    // One optimizer step on a batch drawn deterministically from (seed, step).
    StepRecord train_step(const TrainingSet& data);

    TrainingBatch draw_batch(const TrainingSet& data, int64_t step) const;

    void save(const std::filesystem::path& path) const;
    // Restores weights, optimizer state and step; rejects a format or config
    // mismatch.
    void load(const std::filesystem::path& path);

private:
    void rebuild_optimizer();

    RunConfig config_;
    NoiseSchedule schedule_;
    Ego2FrontModel model_{nullptr};
    FeatureDistanceMetric metric_;
    std::unique_ptr<torch::optim::Adam> optimizer_;
    int64_t step_ = 0;
    bool codec_fitted_ = false;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

struct TrainRunOptions {
    std::filesystem::path run_dir;
    bool resume = false;
    // Called after every step; returning false stops the run.
    std::function<bool(const StepRecord&)> on_step;
};

struct TrainRunResult {
    std::vector<StepRecord> records;
    std::vector<std::filesystem::path> checkpoints;
};

// Runs the loop until config.train.steps, writing checkpoints every
// checkpoint_every steps plus the final one, and appending to metrics.jsonl.
// A non-finite loss aborts with TrainingDiverged; checkpoints already written
// are left in place.
TrainRunResult train(TrainingSession& session, const TrainingSet& data, const TrainRunOptions& options);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int64_t step);
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace ego2front
