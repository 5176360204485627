#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ego2front/datapipe.hpp"
#include "ego2front/error.hpp"
#include "support.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

using namespace ego2front;

namespace {

const std::vector<double> kPose{0.5, 0.2, 0.5, 0.5, 0.3, 0.2, 0.7, 0.2};

FrameRecord frame(const std::string& id, double t, std::vector<double> pose = kPose) {
    FrameRecord r;
    r.id = id;
    r.path = id + ".png";
    r.timestamp = t;
    r.pose = std::move(pose);
    return r;
}

double iou(const torch::Tensor& a, const torch::Tensor& b) {
    auto ba = a > 0.5, bb = b > 0.5;
    return (ba & bb).sum().item<double>() / (ba | bb).sum().item<double>();
}

}  // namespace

TEST_CASE("pose normalization and similarity") {
    auto n = normalize_pose(kPose);
    REQUIRE(n.size() == kPose.size());
    CHECK(n[2] == doctest::Approx(0.0));
    CHECK(n[3] == doctest::Approx(0.0));
    CHECK(std::hypot(n[0], n[1]) == doctest::Approx(1.0));
    // Translation and scale invariance.
    std::vector<double> moved;
    for (size_t i = 0; i < kPose.size(); ++i) moved.push_back(kPose[i] * 2 + (i % 2 ? 0.1 : -0.3));
    CHECK(pose_similarity(kPose, moved) == doctest::Approx(0.0).epsilon(1e-12));
    std::vector<double> bent = kPose;
    bent[4] += 0.1;
    CHECK(pose_similarity(kPose, bent) < 0.0);
    CHECK(normalize_pose(std::vector<double>{0, 0, 0, 0}).empty());
}

TEST_CASE("window pairing selects the ten nearest in-window frames") {
    std::vector<FrameRecord> ego;
    for (int t = 0; t < 20; ++t) ego.push_back(frame("e" + std::to_string(t), t));
    std::vector<FrameRecord> front{frame("f", 10.0)};
    auto r = pair_samples(ego, front, 5.0, 10);
    REQUIRE(r.manifest.entries.size() == 1);
    auto ts = r.manifest.entries[0].ego_timestamps;
    std::sort(ts.begin(), ts.end());
    // tests/oracles/derive.py: brute-force nearest-neighbour selection
    CHECK(ts == std::vector<double>{5, 6, 7, 8, 9, 10, 11, 12, 13, 14});
    CHECK(r.dropped.empty());
}

TEST_CASE("pose similarity outranks temporal distance") {
    std::vector<double> off = kPose;
    off[4] += 0.2;
    std::vector<FrameRecord> ego{frame("near", 10.0, off), frame("far", 13.0)};
    std::vector<FrameRecord> front{frame("f", 10.0)};
    auto r = pair_samples(ego, front, 5.0, 1);
    REQUIRE(r.manifest.entries.size() == 1);
    CHECK(r.manifest.entries[0].ego_paths == std::vector<std::string>{"far.png"});
}

TEST_CASE("empty ego stream drops every frontal frame") {
    std::vector<FrameRecord> ego;
    std::vector<FrameRecord> front{frame("a", 1.0), frame("b", 2.0), frame("c", 3.0)};
    auto r = pair_samples(ego, front, 5.0, 10);
    CHECK(r.manifest.entries.empty());
    REQUIRE(r.dropped.size() == 3);
    CHECK(r.dropped[1].frontal_id == "b");
}

TEST_CASE("pairing input validation") {
    std::vector<FrameRecord> ego{frame("a", 2.0), frame("b", 1.0)};
    std::vector<FrameRecord> front{frame("f", 1.0)};
    CHECK_THROWS_AS(pair_samples(ego, front, 5.0, 10), UserError);
    std::sort(ego.begin(), ego.end(), [](auto& x, auto& y) { return x.timestamp < y.timestamp; });
    CHECK_THROWS_AS(pair_samples(ego, front, 5.0, 0), UserError);
    CHECK_THROWS_AS(pair_samples(ego, front, -1.0, 1), UserError);
}

TEST_CASE("split assignment is order independent and near the requested share") {
    CHECK(assign_split("front_0001", 15) == assign_split("front_0001", 15));
    int val = 0;
    for (int i = 0; i < 2000; ++i) val += assign_split("id" + std::to_string(i), 15) == "val";
    CHECK(val > 200);
    CHECK(val < 400);
    CHECK(assign_split("x", 0) == "train");
    CHECK(assign_split("x", 100) == "val");
}

TEST_CASE("frame index and manifest round trip") {
    testing::TempDir dir("index");
    std::vector<FrameRecord> recs{frame("a", 1.5), frame("b", 2.5)};
    recs[0].subject_id = "s1";
    recs[0].pose_mask_path = "mask_a.png";
    recs[0].clothing = ClothingLabels{LowerGarment::Shorts, UpperGarment::Sweater};
    write_frame_index(dir.path(), recs);
    {
        std::ofstream out(dir / "frames.jsonl", std::ios::app);
        out << "{\"file\": 3}\n";
        out << "{\"id\": \"c\", \"file\": \"c.png\", \"timestamp\": \"4.25\", \"pose\": []}\n";
    }
    auto idx = read_frame_index(dir.path());
    REQUIRE(idx.records.size() == 3);
    CHECK(idx.rejected.size() == 1);
    CHECK(idx.records[0].clothing == recs[0].clothing);
    CHECK(idx.records[0].pose == kPose);
    CHECK(idx.records[2].timestamp == 4.25);

    std::vector<FrameRecord> ego{frame("e1", 1.0), frame("e2", 2.0)};
    auto r = pair_samples(ego, recs, 5.0, 2, 50);
    write_manifest(r.manifest, dir / "m.jsonl");
    auto back = read_manifest(dir / "m.jsonl");
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].ego_paths == r.manifest.entries[0].ego_paths);
    CHECK(back.entries[0].clothing == recs[0].clothing);
    CHECK(back.entries[1].split == r.manifest.entries[1].split);
    CHECK(back.count("train") + back.count("val") == 2);
    // Files do not exist, so validation must fail.
    CHECK_THROWS_AS(validate_manifest(back, dir.path(), 12), UserError);
    CHECK_THROWS_AS(validate_manifest(back, dir.path(), 1), UserError);
}

TEST_CASE("garment vocabulary") {
    CHECK(parse_lower("shorts") == LowerGarment::Shorts);
    CHECK(parse_upper("tshirt") == UpperGarment::TShirt);
    CHECK(to_string(UpperGarment::Sweater) == "sweater");
    CHECK_THROWS_AS(parse_lower("skirt"), UserError);
}

TEST_CASE("probability-zero augmentation is the identity") {
    auto img = torch::rand({3, 32, 32}) * 2 - 1;
    auto mask = (torch::rand({1, 32, 32}) > 0.5).to(torch::kFloat);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto f = augment_frontal(img, mask, 0.0, seed);
        CHECK_FALSE(f.applied);
        CHECK(torch::equal(f.image, img));
        CHECK(torch::equal(f.mask, mask));
        auto e = augment_ego(img, 0.0, seed);
        CHECK_FALSE(e.applied);
        CHECK(torch::equal(e.image, img));
    }
}

TEST_CASE("joint frontal transform matches an independent warp of the mask") {
    auto s = toy::make_subject(3, 64, 1);
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto f = augment_frontal(s.frontal, s.mask, 1.0, seed);
        REQUIRE(f.applied);
        auto ref = testing::reference_warp(s.mask[0].contiguous(), f.transform);
        CHECK(iou(f.mask[0], ref) >= 0.99);
        CHECK(f.image.sizes() == s.frontal.sizes());
    }
}

TEST_CASE("transform parameters stay inside their ranges") {
    AugmentRanges ranges;
    FrontalTransform wild{3.0, 0.4, -0.4, 7.5};
    auto c = wild.clamped(ranges);
    CHECK(c.zoom == ranges.zoom_max);
    CHECK(c.shift_x == ranges.shift_max);
    CHECK(c.shift_y == -ranges.shift_max);
    CHECK(c.rotation_deg == ranges.rotation_max_deg);
    auto img = torch::rand({3, 16, 16});
    for (uint64_t seed = 0; seed < 200; ++seed) {
        auto t = augment_frontal(img, torch::ones({1, 16, 16}), 1.0, seed, ranges).transform;
        CHECK(std::abs(t.rotation_deg) <= ranges.rotation_max_deg);
        CHECK(t.zoom >= 1.0);
        CHECK(t.zoom <= ranges.zoom_max);
        CHECK(std::abs(t.shift_x) <= ranges.shift_max);
    }
}

TEST_CASE("ego rotation: determinism and application rate") {
    auto img = torch::rand({3, 16, 16}) * 2 - 1;
    auto a = augment_ego(img, 1.0, 77);
    auto b = augment_ego(img, 1.0, 77);
    CHECK(a.applied);
    CHECK(a.angle_deg == b.angle_deg);
    CHECK(torch::equal(a.image, b.image));
    CHECK(std::abs(a.angle_deg) <= 10.0);
    int applied = 0;
    for (uint64_t seed = 0; seed < 10000; ++seed) applied += augment_ego(img, 0.5, mix_seed(seed, 1)).applied;
    CHECK(applied / 10000.0 == doctest::Approx(0.5).epsilon(0.04));
}
