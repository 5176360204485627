#pragma once

#include "ego2front/condition.hpp"
#include "ego2front/datapipe.hpp"
#include "ego2front/perceptual.hpp"
#include "ego2front/tensor.hpp"

#include <torch/torch.h>

#include <string>
#include <vector>

namespace ego2front {

inline constexpr double kPsnrCap = 99.0;

// Boolean (H, W) masks registered to the frontal frame.
struct RegionMasks {
    torch::Tensor full;
    torch::Tensor upper;
    torch::Tensor lower;

    void validate() const;
};

// Silhouette = pose mask > 0.5. Rows above top + hip_fraction * box height
// are upper body, the rest lower body.
RegionMasks split_regions(const PoseMask& pose_mask, double hip_fraction = 0.5);

// Masked PSNR in dB with the value range mapped to [0, 1]; zero error
// returns `cap`. Images are (C, H, W); mask is (H, W) or (1, H, W).
double psnr(const ImageTensor& pred, const ImageTensor& gt, const torch::Tensor& mask, double cap = kPsnrCap);

// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) over windows
// lying fully inside the image whose center falls in the mask, averaged over
// channels.
double ssim(const ImageTensor& pred, const ImageTensor& gt, const torch::Tensor& mask);

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;  // population
};

MetricStat summarize(const std::vector<double>& values);

struct RegionStats {
    MetricStat psnr;
    MetricStat ssim;
    MetricStat perceptual;
    int64_t count = 0;  // samples where the region was nonempty
};

struct EvalReport {
    static constexpr int kSchemaVersion = 1;

    std::string label;
    RegionStats full;
    RegionStats upper;
    RegionStats lower;
    int64_t sample_count = 0;
    std::string config_hash;

    std::string to_json() const;
};

// Perceptual distance for a region composites the prediction over the
// ground truth outside the region before scoring.
EvalReport region_eval(const std::vector<ImageTensor>& pred_set, const std::vector<ImageTensor>& gt_set,
                       const std::vector<RegionMasks>& masks, PerceptualMetric& metric, double psnr_cap = kPsnrCap);

// Rows laid out as Full / Upper / Lower x PSNR, SSIM, perceptual.
std::string format_eval_table(const std::vector<EvalReport>& rows);

struct ClothingAccuracy {
    int64_t samples = 0;
    int64_t lower_matches = 0;
    int64_t upper_matches = 0;
    int lower_percent = 0;
    int upper_percent = 0;

    // "79% / 87%"
    std::string formatted() const;
};

ClothingAccuracy clothing_accuracy(const std::vector<ClothingLabels>& predicted, const std::vector<ClothingLabels>& truth);
// Label strings are parsed against the closed vocabulary.
ClothingAccuracy clothing_accuracy(const std::vector<std::pair<std::string, std::string>>& predicted,
                                   const std::vector<std::pair<std::string, std::string>>& truth);

struct Ballot {
    std::string rater_id;
    std::vector<std::string> ranking;  // best first
};

struct MethodScore {
    std::string method;
    int64_t borda_score = 0;
    double mean_rank = 0.0;
};

struct RankAggregate {
    static constexpr int kSchemaVersion = 1;

    std::vector<MethodScore> methods;  // sorted by score, descending
    int64_t ballot_count = 0;
    int64_t method_count = 0;

    int64_t total_points() const;
    const MethodScore& at(const std::string& method) const;
    std::string to_json() const;
    std::string to_table() const;
};

RankAggregate borda_aggregate(const std::vector<Ballot>& ballots);

// One ballot per line: rater_id, then methods in rank order. Blank lines and
// lines starting with '#' are skipped.
std::vector<Ballot> parse_ballots(const std::string& text);
std::vector<Ballot> read_ballots(const std::filesystem::path& path);

}  // namespace ego2front
