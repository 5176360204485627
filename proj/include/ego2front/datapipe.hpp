#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ego2front {

enum class LowerGarment { Shorts, Pants };
enum class UpperGarment { TShirt, Sweater };

LowerGarment parse_lower(const std::string& s);
UpperGarment parse_upper(const std::string& s);
std::string to_string(LowerGarment g);
std::string to_string(UpperGarment g);

struct ClothingLabels {
    LowerGarment lower = LowerGarment::Pants;
    UpperGarment upper = UpperGarment::TShirt;
    bool operator==(const ClothingLabels&) const = default;
};

// One captured frame as listed in a directory's frame index.
struct FrameRecord {
    std::string id;
    std::string path;  // relative to the index directory
    double timestamp = 0.0;
    std::vector<double> pose;  // flattened 2D joints, neck and pelvis first
    std::string subject_id;
    std::string pose_mask_path;                 // frontal frames only
    std::optional<ClothingLabels> clothing;     // frontal frames only
};

struct PairedSample {
    std::string frontal_id;
    std::string frontal_path;
    std::string pose_mask_path;
    std::vector<std::string> ego_paths;
    double frontal_timestamp = 0.0;
    std::vector<double> ego_timestamps;
    std::string subject_id;
    std::optional<ClothingLabels> clothing;
    std::vector<double> pose_signature;
    std::string split;  // "train" or "val"
};

inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
    std::vector<PairedSample> entries;

    std::vector<const PairedSample*> split(const std::string& name) const;
    int64_t count(const std::string& split_name) const;
};

struct DropRecord {
    std::string frontal_id;
    std::string reason;
};

struct PairingResult {
    DatasetManifest manifest;
    std::vector<DropRecord> dropped;
};

// Torso-normalized joints: translated to the pelvis (joint 1) and scaled by
// the neck-pelvis distance. Empty when the signature is unusable.
std::vector<double> normalize_pose(std::span<const double> pose);

// Negative mean joint distance of normalized signatures; 0 when either side
// is unusable or the joint counts differ.
double pose_similarity(std::span<const double> a, std::span<const double> b);

// Split assignment keyed by a hash of the id, so it is independent of order.
std::string assign_split(const std::string& frontal_id, int64_t val_percent);

// Pairs each frontal frame with up to `per_frontal` ego frames whose
// timestamps lie within `window` seconds, ranked by pose similarity, then
// temporal distance, then timestamp. Frontal frames without candidates are
// dropped and reported. Streams must be sorted by timestamp.
PairingResult pair_samples(std::span<const FrameRecord> ego_stream, std::span<const FrameRecord> frontal_stream,
                           double window, int64_t per_frontal, int64_t val_percent = 15);

struct FrameIndex {
    std::vector<FrameRecord> records;
    std::vector<std::string> rejected;  // one message per unparseable record
};

// Reads `<dir>/frames.jsonl`.
FrameIndex read_frame_index(const std::filesystem::path& dir);
void write_frame_index(const std::filesystem::path& dir, std::span<const FrameRecord> records);

// Line-delimited manifest: a schema header, then one record per frontal id.
// Paths are written relative to the manifest's directory.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_drop_report(std::span<const DropRecord> dropped, const std::filesystem::path& path);

// Checks ego counts, split integrity and file existence relative to `base_dir`.
void validate_manifest(const DatasetManifest& manifest, const std::filesystem::path& base_dir, int64_t max_ego);

struct AugmentRanges {
    double zoom_max = 1.15;
    double shift_max = 0.05;
    double rotation_max_deg = 5.0;
    double ego_rotation_max_deg = 10.0;
};

// Zoom-in, shift (fraction of the frame) and rotation, applied about the
// image center.
struct FrontalTransform {
    double zoom = 1.0;
    double shift_x = 0.0;
    double shift_y = 0.0;
    double rotation_deg = 0.0;

    FrontalTransform clamped(const AugmentRanges& ranges) const;
};

// Resamples (C, H, W) with the transform: output pixel p reads the input at
// R(rotation) * p / zoom + 2 * shift in normalized [-1, 1] coordinates.
// Bilinear; `zero_fill` pads with zeros, otherwise with the border value.
torch::Tensor apply_frontal_transform(const torch::Tensor& image, const FrontalTransform& transform, bool zero_fill);

struct FrontalAugmentResult {
    torch::Tensor image;
    torch::Tensor mask;
    bool applied = false;
    FrontalTransform transform;
};

// With probability q, draws one transform and applies it to image and mask
// alike; otherwise returns the inputs untouched.
FrontalAugmentResult augment_frontal(const torch::Tensor& image, const torch::Tensor& mask, double q, uint64_t seed,
                                     const AugmentRanges& ranges = {});

struct EgoAugmentResult {
    torch::Tensor image;
    bool applied = false;
    double angle_deg = 0.0;
};

// With probability p, rotates the ego image by an angle drawn uniformly in
// [-max, max] degrees.
EgoAugmentResult augment_ego(const torch::Tensor& ego, double p, uint64_t seed, const AugmentRanges& ranges = {});

}  // namespace ego2front
