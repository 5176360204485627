#pragma once

#include "ego2front/config.hpp"
#include "ego2front/objective.hpp"
#include "ego2front/quality.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ego2front {

// Held for the lifetime of a command that writes into `dir`; a second holder
// fails with UserError.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path path_;
};

// paths.output_dir, placed under $EGO2FRONT_OUTPUT_ROOT when that is set and
// the configured directory is relative.
std::filesystem::path output_root(const RunConfig& config);
// <output root>/run-<short digest>
std::filesystem::path run_directory(const RunConfig& config);

struct PrepOptions {
    std::filesystem::path ego_dir;
    std::filesystem::path frontal_dir;
    std::filesystem::path out_manifest;
    double window = 5.0;
    int64_t per_frontal = 10;
    int64_t max_ego = 12;
    int64_t val_percent = 15;
};

struct PrepSummary {
    int64_t entries = 0;
    int64_t train = 0;
    int64_t val = 0;
    int64_t dropped = 0;
    int64_t rejected_records = 0;
    std::filesystem::path drop_report;

    // Some index records could not be parsed; the manifest was still written.
    bool partial() const { return rejected_records > 0; }
    std::string describe() const;
};

PrepSummary cmd_prep(const PrepOptions& options);

struct TrainOptions {
    RunConfig config;
    bool resume = false;                           // continue from the latest checkpoint in the run directory
    std::optional<std::filesystem::path> resume_from;  // explicit checkpoint; its config hash must match
    std::function<bool(const StepRecord&)> on_step;
};

struct TrainSummary {
    std::filesystem::path run_dir;
    std::vector<StepRecord> records;
    std::vector<std::filesystem::path> checkpoints;
    int64_t resumed_from_step = 0;
};

TrainSummary cmd_train(const TrainOptions& options);

// Session rebuilt from the configuration stored in a checkpoint.
std::unique_ptr<TrainingSession> load_session(const std::filesystem::path& checkpoint);

struct InferOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path ego_image;
    std::filesystem::path pose_mask;
    std::filesystem::path out_image;
    std::optional<int64_t> steps;
    std::optional<SamplerKind> sampler;
    uint64_t seed = 0;
};

struct InferSummary {
    std::filesystem::path image;
    std::filesystem::path grid;
    std::filesystem::path sidecar;
};

InferSummary cmd_infer(const InferOptions& options);

struct EvalSettings {
    SamplerOptions sampler;
    double guidance_scale = 1.0;
    double hip_fraction = 0.5;
    double psnr_cap = kPsnrCap;
    int64_t batch_size = 8;
};

EvalSettings eval_settings(const RunConfig& config, uint64_t seed);

// Generates one frontal image per entry from its first ego frame and pose
// mask, returned as (M, 3, H, W).
torch::Tensor generate_predictions(TrainingSession& session, const TrainingSet& data, const EvalSettings& settings);

EvalReport evaluate_predictions(const torch::Tensor& predictions, const TrainingSet& data, PerceptualMetric& metric,
                                const EvalSettings& settings);

struct EvalOptions {
    std::optional<std::filesystem::path> checkpoint;
    std::filesystem::path manifest;
    std::string split = "val";
    std::filesystem::path report;  // JSON; a text table is written next to it
    // Directory of <frontal_id>.png predictions used instead of sampling.
    std::optional<std::filesystem::path> predictions;
    // JSON lines {"id", "lower", "upper"} of labels judged on the predictions.
    std::optional<std::filesystem::path> predicted_labels;
    std::optional<int64_t> steps;
    uint64_t seed = 0;
    std::string label = "model";
};

struct EvalSummary {
    EvalReport report;
    std::optional<ClothingAccuracy> clothing;
    std::filesystem::path json;
    std::filesystem::path table;
};

EvalSummary cmd_eval(const EvalOptions& options);

struct RankSummary {
    RankAggregate aggregate;
    std::filesystem::path json;
    std::filesystem::path table;
};

// Writes <out_prefix>.json and <out_prefix>.txt.
RankSummary cmd_rank(const std::filesystem::path& ballots, const std::filesystem::path& out_prefix);

// Axes: control (on/off), perc (on/off), codec (toy_autoencoder /
// human_prior_adapter), concept (global_cls / grid_decoder).
struct AblationVariant {
    std::string label;
    RunConfig config;
};

std::vector<AblationVariant> ablation_matrix(const RunConfig& base, const std::vector<std::string>& axes);

struct AblateOptions {
    RunConfig base;
    std::vector<std::string> axes;
    std::filesystem::path out_dir;
    std::string split = "val";
    uint64_t seed = 0;
};

struct AblationRow {
    std::string label;
    std::string config_hash;
    std::optional<EvalReport> report;
    std::string unavailable;  // reason when the variant could not be built
};

struct AblateSummary {
    std::vector<AblationRow> rows;
    std::filesystem::path json;
    std::filesystem::path table;
};

AblateSummary cmd_ablate(const AblateOptions& options);

struct SynthOptions {
    std::filesystem::path root;
    int64_t subjects = 12;
    uint64_t seed = 0;
    int64_t size = 64;
    int64_t ego_frames = 10;
};

void cmd_synth(const SynthOptions& options);

}  // namespace ego2front
