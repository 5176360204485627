#include "ego2front/datapipe.hpp"

#include "ego2front/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace ego2front {

using nlohmann::json;

LowerGarment parse_lower(const std::string& s) {
    if (s == "shorts") return LowerGarment::Shorts;
    if (s == "pants") return LowerGarment::Pants;
    throw UserError("unknown lower-body label '" + s + "' (expected shorts or pants)");
}

UpperGarment parse_upper(const std::string& s) {
    if (s == "tshirt") return UpperGarment::TShirt;
    if (s == "sweater") return UpperGarment::Sweater;
    throw UserError("unknown upper-body label '" + s + "' (expected tshirt or sweater)");
}

std::string to_string(LowerGarment g) { return g == LowerGarment::Shorts ? "shorts" : "pants"; }
std::string to_string(UpperGarment g) { return g == UpperGarment::TShirt ? "tshirt" : "sweater"; }

std::vector<const PairedSample*> DatasetManifest::split(const std::string& name) const {
    std::vector<const PairedSample*> out;
    for (const auto& e : entries) {
        if (e.split == name) out.push_back(&e);
    }
    return out;
}

int64_t DatasetManifest::count(const std::string& split_name) const {
    return static_cast<int64_t>(split(split_name).size());
}

std::vector<double> normalize_pose(std::span<const double> pose) {
    if (pose.size() < 4 || pose.size() % 2 != 0) return {};
    const double px = pose[2], py = pose[3];
    const double torso = std::hypot(pose[0] - px, pose[1] - py);
    if (!(torso > 1e-12)) return {};
    std::vector<double> out(pose.size());
    for (size_t i = 0; i < pose.size(); i += 2) {
        out[i] = (pose[i] - px) / torso;
        out[i + 1] = (pose[i + 1] - py) / torso;
    }
    return out;
}

double pose_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return 0.0;
    const auto na = normalize_pose(a);
    const auto nb = normalize_pose(b);
    if (na.empty() || nb.empty()) return 0.0;
    double sum = 0.0;
    for (size_t i = 0; i < na.size(); i += 2) sum += std::hypot(na[i] - nb[i], na[i + 1] - nb[i + 1]);
    return -sum / static_cast<double>(na.size() / 2);
}

std::string assign_split(const std::string& frontal_id, int64_t val_percent) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : frontal_id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return static_cast<int64_t>(h % 100) < val_percent ? "val" : "train";
}

namespace {

void require_monotone(std::span<const FrameRecord> stream, const char* what) {
    for (size_t i = 1; i < stream.size(); ++i) {
        if (stream[i].timestamp < stream[i - 1].timestamp) {
            throw UserError(std::string(what) + " stream is not sorted by timestamp at record '" + stream[i].id + "'");
        }
    }
}

}  // namespace

PairingResult pair_samples(std::span<const FrameRecord> ego_stream, std::span<const FrameRecord> frontal_stream,
                           double window, int64_t per_frontal, int64_t val_percent) {
    if (window < 0.0) throw UserError("pairing window must be >= 0");
    if (per_frontal < 1) throw UserError("per_frontal must be >= 1");
    require_monotone(ego_stream, "ego");
    require_monotone(frontal_stream, "frontal");

    PairingResult result;
    struct Candidate {
        const FrameRecord* frame;
        double similarity;
        double distance;
    };
    for (const auto& f : frontal_stream) {
        std::vector<Candidate> candidates;
        const auto lo = std::lower_bound(ego_stream.begin(), ego_stream.end(), f.timestamp - window,
                                         [](const FrameRecord& r, double t) { return r.timestamp < t; });
        for (auto it = lo; it != ego_stream.end() && it->timestamp <= f.timestamp + window; ++it) {
            candidates.push_back({&*it, pose_similarity(f.pose, it->pose), std::abs(it->timestamp - f.timestamp)});
        }
        if (candidates.empty()) {
            result.dropped.push_back({f.id, "no ego frame within " + std::to_string(window) + " s"});
            continue;
        }
        std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
            if (a.similarity != b.similarity) return a.similarity > b.similarity;
            if (a.distance != b.distance) return a.distance < b.distance;
            if (a.frame->timestamp != b.frame->timestamp) return a.frame->timestamp < b.frame->timestamp;
            return a.frame->id < b.frame->id;
        });
        if (static_cast<int64_t>(candidates.size()) > per_frontal) candidates.resize(static_cast<size_t>(per_frontal));

        PairedSample s;
        s.frontal_id = f.id;
        s.frontal_path = f.path;
        s.pose_mask_path = f.pose_mask_path;
        s.frontal_timestamp = f.timestamp;
        s.subject_id = f.subject_id;
        s.clothing = f.clothing;
        s.pose_signature = f.pose;
        s.split = assign_split(f.id, val_percent);
        for (const auto& c : candidates) {
            s.ego_paths.push_back(c.frame->path);
            s.ego_timestamps.push_back(c.frame->timestamp);
        }
        result.manifest.entries.push_back(std::move(s));
    }
    return result;
}

namespace {

std::optional<double> parse_timestamp(const json& v) {
    if (v.is_number()) {
        const double d = v.get<double>();
        return std::isfinite(d) ? std::optional<double>(d) : std::nullopt;
    }
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        try {
            size_t pos = 0;
            const double d = std::stod(s, &pos);
            if (pos == s.size() && std::isfinite(d)) return d;
        } catch (const std::exception&) {
        }
    }
    return std::nullopt;
}

}  // namespace

FrameIndex read_frame_index(const std::filesystem::path& dir) {
    const auto path = dir / "frames.jsonl";
    std::ifstream in(path);
    if (!in) throw UserError("cannot read frame index '" + path.string() + "'");
    FrameIndex index;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            index.rejected.push_back(where + ": not valid JSON");
            continue;
        }
        if (!j.is_object() || !j.contains("file") || !j["file"].is_string()) {
            index.rejected.push_back(where + ": missing 'file'");
            continue;
        }
        const auto ts = j.contains("timestamp") ? parse_timestamp(j["timestamp"]) : std::nullopt;
        if (!ts) {
            index.rejected.push_back(where + ": unparseable timestamp");
            continue;
        }
        FrameRecord r;
        r.path = j["file"].get<std::string>();
        r.id = j.value("id", std::filesystem::path(r.path).stem().string());
        r.timestamp = *ts;
        r.subject_id = j.value("subject", std::string());
        r.pose_mask_path = j.value("mask", std::string());
        if (j.contains("pose") && j["pose"].is_array()) r.pose = j["pose"].get<std::vector<double>>();
        try {
            if (j.contains("lower") && j.contains("upper")) {
                r.clothing = ClothingLabels{parse_lower(j["lower"].get<std::string>()),
                                            parse_upper(j["upper"].get<std::string>())};
            }
        } catch (const std::exception& e) {
            index.rejected.push_back(where + ": " + e.what());
            continue;
        }
        index.records.push_back(std::move(r));
    }
    std::stable_sort(index.records.begin(), index.records.end(),
                     [](const FrameRecord& a, const FrameRecord& b) { return a.timestamp < b.timestamp; });
    return index;
}

void write_frame_index(const std::filesystem::path& dir, std::span<const FrameRecord> records) {
    std::ofstream out(dir / "frames.jsonl");
    if (!out) throw UserError("cannot write frame index in '" + dir.string() + "'");
    for (const auto& r : records) {
        json j{{"id", r.id}, {"file", r.path}, {"timestamp", r.timestamp}};
        if (!r.pose.empty()) j["pose"] = r.pose;
        if (!r.subject_id.empty()) j["subject"] = r.subject_id;
        if (!r.pose_mask_path.empty()) j["mask"] = r.pose_mask_path;
        if (r.clothing) {
            j["lower"] = to_string(r.clothing->lower);
            j["upper"] = to_string(r.clothing->upper);
        }
        out << j.dump() << '\n';
    }
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UserError("cannot write manifest '" + path.string() + "'");
    json header{{"schema", "ego2front.manifest"},
                {"version", kManifestVersion},
                {"stats", {{"train", manifest.count("train")}, {"val", manifest.count("val")}}}};
    out << header.dump() << '\n';
    for (const auto& e : manifest.entries) {
        json j{{"frontal_id", e.frontal_id},
               {"frontal", e.frontal_path},
               {"pose_mask", e.pose_mask_path},
               {"ego", e.ego_paths},
               {"frontal_timestamp", e.frontal_timestamp},
               {"ego_timestamps", e.ego_timestamps},
               {"subject", e.subject_id},
               {"pose", e.pose_signature},
               {"split", e.split}};
        if (e.clothing) {
            j["lower"] = to_string(e.clothing->lower);
            j["upper"] = to_string(e.clothing->upper);
        }
        out << j.dump() << '\n';
    }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot read manifest '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw UserError("manifest '" + path.string() + "' is empty");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception&) {
        throw UserError("manifest header is not valid JSON");
    }
    if (header.value("schema", "") != "ego2front.manifest") throw UserError("not an ego2front manifest");
    if (header.value("version", -1) != kManifestVersion) {
        throw UserError("unsupported manifest version " + header.value("version", json(-1)).dump());
    }
    DatasetManifest m;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            PairedSample s;
            s.frontal_id = j.at("frontal_id").get<std::string>();
            s.frontal_path = j.at("frontal").get<std::string>();
            s.pose_mask_path = j.value("pose_mask", std::string());
            s.ego_paths = j.at("ego").get<std::vector<std::string>>();
            s.frontal_timestamp = j.value("frontal_timestamp", 0.0);
            s.ego_timestamps = j.value("ego_timestamps", std::vector<double>{});
            s.subject_id = j.value("subject", std::string());
            s.pose_signature = j.value("pose", std::vector<double>{});
            s.split = j.value("split", std::string("train"));
            if (j.contains("lower") && j.contains("upper")) {
                s.clothing = ClothingLabels{parse_lower(j["lower"].get<std::string>()),
                                            parse_upper(j["upper"].get<std::string>())};
            }
            m.entries.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw UserError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

void write_drop_report(std::span<const DropRecord> dropped, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UserError("cannot write drop report '" + path.string() + "'");
    out << json{{"schema", "ego2front.drop_report"}, {"version", 1}, {"dropped", dropped.size()}}.dump() << '\n';
    for (const auto& d : dropped) out << json{{"frontal_id", d.frontal_id}, {"reason", d.reason}}.dump() << '\n';
}

void validate_manifest(const DatasetManifest& manifest, const std::filesystem::path& base_dir, int64_t max_ego) {
    std::set<std::string> seen;
    for (const auto& e : manifest.entries) {
        const auto n = static_cast<int64_t>(e.ego_paths.size());
        if (n < 1 || n > max_ego) {
            throw UserError("manifest entry '" + e.frontal_id + "' references " + std::to_string(n) +
                            " ego frames (allowed 1.." + std::to_string(max_ego) + ")");
        }
        if (e.split != "train" && e.split != "val") {
            throw UserError("manifest entry '" + e.frontal_id + "' has unknown split '" + e.split + "'");
        }
        if (!seen.insert(e.frontal_id).second) {
            throw UserError("frontal id '" + e.frontal_id + "' appears more than once");
        }
        std::vector<std::string> files{e.frontal_path};
        if (!e.pose_mask_path.empty()) files.push_back(e.pose_mask_path);
        files.insert(files.end(), e.ego_paths.begin(), e.ego_paths.end());
        for (const auto& f : files) {
            if (!std::filesystem::exists(base_dir / f)) {
                throw UserError("manifest entry '" + e.frontal_id + "' references missing file '" + f + "'");
            }
        }
    }
}

FrontalTransform FrontalTransform::clamped(const AugmentRanges& r) const {
    FrontalTransform t;
    t.zoom = std::clamp(zoom, 1.0, r.zoom_max);
    t.shift_x = std::clamp(shift_x, -r.shift_max, r.shift_max);
    t.shift_y = std::clamp(shift_y, -r.shift_max, r.shift_max);
    t.rotation_deg = std::clamp(rotation_deg, -r.rotation_max_deg, r.rotation_max_deg);
    return t;
}

namespace {

torch::Tensor warp(const torch::Tensor& image, double zoom, double shift_x, double shift_y, double rotation_deg,
                   bool zero_fill) {
    namespace F = torch::nn::functional;
    const double a = rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a) / zoom;
    const double s = std::sin(a) / zoom;
    auto theta = torch::tensor({c, -s, 2.0 * shift_x, s, c, 2.0 * shift_y}, torch::kFloat64)
                     .reshape({1, 2, 3})
                     .to(image.scalar_type());
    auto x = image.unsqueeze(0);
    auto grid = F::affine_grid(theta, x.sizes(), false);
    auto out = F::grid_sample(x, grid,
                              F::GridSampleFuncOptions()
                                  .mode(torch::kBilinear)
                                  .padding_mode(zero_fill ? F::GridSampleFuncOptions::padding_mode_t(torch::kZeros)
                                                         : F::GridSampleFuncOptions::padding_mode_t(torch::kBorder))
                                  .align_corners(false));
    return out.squeeze(0);
}

// Uniform double in [0, 1) independent of the standard library's distributions.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

torch::Tensor apply_frontal_transform(const torch::Tensor& image, const FrontalTransform& t, bool zero_fill) {
    if (image.dim() != 3) throw ShapeError("frontal transform expects (C,H,W), got " + std::to_string(image.dim()) + "-d");
    return warp(image, t.zoom, t.shift_x, t.shift_y, t.rotation_deg, zero_fill);
}

FrontalAugmentResult augment_frontal(const torch::Tensor& image, const torch::Tensor& mask, double q, uint64_t seed,
                                     const AugmentRanges& ranges) {
    if (image.dim() != 3 || mask.dim() != 3 || image.size(1) != mask.size(1) || image.size(2) != mask.size(2)) {
        throw ShapeError("augment_frontal: image and mask must be registered (C,H,W) tensors");
    }
    std::mt19937_64 rng(seed);
    FrontalAugmentResult r{image, mask, false, {}};
    if (!(uniform01(rng) < std::clamp(q, 0.0, 1.0))) return r;
    FrontalTransform t;
    t.zoom = 1.0 + uniform01(rng) * (ranges.zoom_max - 1.0);
    t.shift_x = (2.0 * uniform01(rng) - 1.0) * ranges.shift_max;
    t.shift_y = (2.0 * uniform01(rng) - 1.0) * ranges.shift_max;
    t.rotation_deg = (2.0 * uniform01(rng) - 1.0) * ranges.rotation_max_deg;
    t = t.clamped(ranges);
    r.applied = true;
    r.transform = t;
    r.image = apply_frontal_transform(image, t, false);
    r.mask = apply_frontal_transform(mask, t, true);
    return r;
}

EgoAugmentResult augment_ego(const torch::Tensor& ego, double p, uint64_t seed, const AugmentRanges& ranges) {
    if (ego.dim() != 3) throw ShapeError("augment_ego expects (C,H,W)");
    std::mt19937_64 rng(seed);
    EgoAugmentResult r{ego, false, 0.0};
    if (!(uniform01(rng) < std::clamp(p, 0.0, 1.0))) return r;
    r.applied = true;
    r.angle_deg = (2.0 * uniform01(rng) - 1.0) * ranges.ego_rotation_max_deg;
    r.image = warp(ego, 1.0, 0.0, 0.0, r.angle_deg, false);
    return r;
}

}  // namespace ego2front
