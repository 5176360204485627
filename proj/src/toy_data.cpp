#include "ego2front/toy_data.hpp"

#include "ego2front/error.hpp"
#include "ego2front/image_io.hpp"
#include "ego2front/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace ego2front::toy {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

torch::Tensor color(double r, double g, double b) { return torch::tensor({r, g, b}, torch::kFloat32).view({3, 1, 1}); }

struct Canvas {
    torch::Tensor rgb;  // (3, S, S)
    torch::Tensor x, y; // (S, S) pixel centers in [0, 1]

    Canvas(int64_t size, const torch::Tensor& background) {
        auto coords = (torch::arange(size, torch::kFloat32) + 0.5) / static_cast<double>(size);
        auto grids = torch::meshgrid({coords, coords}, "ij");
        y = grids[0];
        x = grids[1];
        rgb = background.expand({3, size, size}).clone();
    }

    void paint(const torch::Tensor& region, const torch::Tensor& c) { rgb = torch::where(region.unsqueeze(0), c, rgb); }
};

torch::Tensor rect(const torch::Tensor& x, const torch::Tensor& y, double x0, double x1, double y0, double y1) {
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1);
}

torch::Tensor ellipse(const torch::Tensor& x, const torch::Tensor& y, double cx, double cy, double rx, double ry) {
    return ((x - cx) / rx).pow(2) + ((y - cy) / ry).pow(2) <= 1.0;
}

struct Look {
    torch::Tensor shirt, trousers, skin, shoes;
    ClothingLabels clothing;
};

}  // namespace

Subject make_subject(uint64_t seed, int64_t size, int64_t ego_frames) {
    std::mt19937_64 rng(mix_seed(seed, 0x70f));
    Subject s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "toy_%06llu", static_cast<unsigned long long>(seed));
    s.id = buf;

    Look look;
    look.shirt = color(uniform(rng, -0.9, 0.9), uniform(rng, -0.9, 0.9), uniform(rng, -0.9, 0.9));
    look.trousers = color(uniform(rng, -0.9, 0.9), uniform(rng, -0.9, 0.9), uniform(rng, -0.9, 0.9));
    look.skin = color(0.55, 0.1, -0.2);
    look.shoes = color(-0.8, -0.8, -0.75);
    look.clothing.lower = uniform(rng, 0, 1) < 0.5 ? LowerGarment::Shorts : LowerGarment::Pants;
    look.clothing.upper = uniform(rng, 0, 1) < 0.5 ? UpperGarment::TShirt : UpperGarment::Sweater;
    s.clothing = look.clothing;
    const bool shorts = look.clothing.lower == LowerGarment::Shorts;
    const bool tshirt = look.clothing.upper == UpperGarment::TShirt;

    // Frontal T-pose.
    const double sc = uniform(rng, 0.92, 1.08);
    const double cx = 0.5 + uniform(rng, -0.03, 0.03);
    const double top = 0.08 + uniform(rng, -0.02, 0.02);
    Canvas fr(size, color(0.7, 0.7, 0.68));
    const auto& X = fr.x;
    const auto& Y = fr.y;
    const double torso_l = cx - 0.1 * sc, torso_r = cx + 0.1 * sc;
    const double arm_y0 = top + 0.16 * sc, arm_y1 = top + 0.22 * sc;
    const double hip = top + 0.44 * sc, ankle = top + 0.84 * sc;
    const double sleeve = tshirt ? 0.08 * sc : 0.24 * sc;

    auto head = ellipse(X, Y, cx, top + 0.07 * sc, 0.065 * sc, 0.065 * sc);
    auto torso = rect(X, Y, torso_l, torso_r, top + 0.14 * sc, hip);
    auto arm_l = rect(X, Y, cx - 0.38 * sc, torso_l, arm_y0, arm_y1);
    auto arm_r = rect(X, Y, torso_r, cx + 0.38 * sc, arm_y0, arm_y1);
    auto leg_l = rect(X, Y, cx - 0.09 * sc, cx - 0.01 * sc, hip, ankle);
    auto leg_r = rect(X, Y, cx + 0.01 * sc, cx + 0.09 * sc, hip, ankle);
    auto legs = leg_l | leg_r;
    auto arms = arm_l | arm_r;

    fr.paint(head | arms | legs, look.skin);
    fr.paint(arms & ((X >= torso_l - sleeve) & (X <= torso_r + sleeve)), look.shirt);
    fr.paint(torso, look.shirt);
    fr.paint(legs & (Y <= (shorts ? hip + 0.12 * sc : ankle)), look.trousers);
    fr.paint(legs & (Y >= ankle - 0.03 * sc), look.shoes);
    s.frontal = fr.rgb.clamp(-1.0, 1.0);
    s.mask = (head | torso | arms | legs).to(torch::kFloat32).unsqueeze(0);
    s.pose = {cx, top + 0.14 * sc, cx, hip, cx - 0.38 * sc, arm_y0, cx + 0.38 * sc, arm_y0,
              cx - 0.05 * sc, ankle, cx + 0.05 * sc, ankle};

    // Top-down views looking down from the head.
    const auto floor = color(-0.3 + uniform(rng, -0.1, 0.1), -0.35, -0.4);
    for (int64_t j = 0; j < ego_frames; ++j) {
        const double angle = uniform(rng, -12.0, 12.0) * std::numbers::pi / 180.0;
        const double dx = uniform(rng, -0.04, 0.04), dy = uniform(rng, -0.04, 0.04);
        const double light = uniform(rng, 0.9, 1.1);
        Canvas eg(size, floor);
        auto u = (eg.x - 0.5 - dx) * std::cos(angle) + (eg.y - 0.5 - dy) * std::sin(angle) + 0.5;
        auto v = -(eg.x - 0.5 - dx) * std::sin(angle) + (eg.y - 0.5 - dy) * std::cos(angle) + 0.5;

        auto leg_a = ellipse(u, v, 0.41, 0.66, 0.075, 0.22);
        auto leg_b = ellipse(u, v, 0.59, 0.66, 0.075, 0.22);
        auto ego_legs = leg_a | leg_b;
        auto arm_a = ellipse(u, v, 0.17, 0.45, 0.06, 0.18);
        auto arm_b = ellipse(u, v, 0.83, 0.45, 0.06, 0.18);
        auto ego_arms = arm_a | arm_b;
        eg.paint(ego_legs, look.skin);
        eg.paint(ego_legs & (v <= (shorts ? 0.58 : 0.9)), look.trousers);
        eg.paint(ellipse(u, v, 0.41, 0.9, 0.05, 0.05) | ellipse(u, v, 0.59, 0.9, 0.05, 0.05), look.shoes);
        eg.paint(ego_arms, look.skin);
        eg.paint(ego_arms & (v <= (tshirt ? 0.4 : 0.6)), look.shirt);
        eg.paint(ellipse(u, v, 0.5, 0.28, 0.32, 0.16), look.shirt);
        s.ego.push_back((eg.rgb * light).clamp(-1.0, 1.0));

        std::vector<double> jittered = s.pose;
        for (auto& p : jittered) p += uniform(rng, -0.01, 0.01);
        s.ego_poses.push_back(std::move(jittered));
    }
    return s;
}

TrainingSet make_training_set(int64_t subjects, uint64_t seed, int64_t size, int64_t ego_frames) {
    if (subjects < 1) throw UserError("toy training set needs at least one subject");
    TrainingSet set;
    std::vector<torch::Tensor> frontal, masks;
    for (int64_t k = 0; k < subjects; ++k) {
        auto s = make_subject(mix_seed(seed, static_cast<uint64_t>(k)), size, ego_frames);
        frontal.push_back(s.frontal);
        masks.push_back(s.mask);
        set.ego.push_back(torch::stack(s.ego));
        set.ids.push_back(s.id);
        set.clothing.push_back(s.clothing);
    }
    set.frontal = torch::stack(frontal);
    set.masks = torch::stack(masks);
    return set;
}

void write_dataset(const std::filesystem::path& root, int64_t subjects, uint64_t seed, int64_t size,
                   int64_t ego_frames) {
    const auto ego_dir = root / "ego";
    const auto frontal_dir = root / "frontal";
    std::filesystem::create_directories(ego_dir);
    std::filesystem::create_directories(frontal_dir);
    std::vector<FrameRecord> ego_records, frontal_records;
    for (int64_t k = 0; k < subjects; ++k) {
        auto s = make_subject(mix_seed(seed, static_cast<uint64_t>(k)), size, ego_frames);
        char name[64];
        const double t_front = 100.0 * static_cast<double>(k) + 50.0;
        std::snprintf(name, sizeof(name), "front_%04lld", static_cast<long long>(k));
        FrameRecord f;
        f.id = name;
        f.path = f.id + ".png";
        f.pose_mask_path = "mask_" + f.id.substr(6) + ".png";
        f.timestamp = t_front;
        f.pose = s.pose;
        f.subject_id = s.id;
        f.clothing = s.clothing;
        write_rgb(frontal_dir / f.path, s.frontal);
        write_mask(frontal_dir / f.pose_mask_path, s.mask);
        frontal_records.push_back(f);
        for (int64_t j = 0; j < ego_frames; ++j) {
            std::snprintf(name, sizeof(name), "ego_%04lld_%02lld", static_cast<long long>(k), static_cast<long long>(j));
            FrameRecord e;
            e.id = name;
            e.path = e.id + ".png";
            e.timestamp = t_front + 0.6 * (static_cast<double>(j) - 0.5 * static_cast<double>(ego_frames - 1));
            e.pose = s.ego_poses[static_cast<size_t>(j)];
            e.subject_id = s.id;
            write_rgb(ego_dir / e.path, s.ego[static_cast<size_t>(j)]);
            ego_records.push_back(e);
        }
    }
    write_frame_index(ego_dir, ego_records);
    write_frame_index(frontal_dir, frontal_records);
}

}  // namespace ego2front::toy
