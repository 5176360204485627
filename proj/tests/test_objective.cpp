#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ego2front/error.hpp"
#include "ego2front/objective.hpp"
#include "support.hpp"

#include <cmath>

using namespace ego2front;

namespace {

// Knows the clean latent, so it can recover the exact noise from z_t.
class OracleModel : public DenoisingModel {
public:
    OracleModel(torch::Tensor z0, const NoiseSchedule& s) : z0_(std::move(z0)), s_(s) {}
    torch::Tensor encode_target(const torch::Tensor&) override { return z0_; }
    torch::Tensor predict_noise(const torch::Tensor& z_t, const torch::Tensor& t, const TrainingBatch&) override {
        auto ab = s_.alpha_bar_at(t, z_t.scalar_type()).view({-1, 1, 1, 1});
        return (z_t - ab.sqrt() * z0_) / (1 - ab).sqrt();
    }
    torch::Tensor decode_raw(const torch::Tensor& latent) override {
        return torch::zeros({latent.size(0), 3, 16, 16}, latent.options());
    }

private:
    torch::Tensor z0_;
    const NoiseSchedule& s_;
};

class ZeroMetric : public PerceptualMetric {
public:
    torch::Tensor distance(const torch::Tensor& a, const torch::Tensor&) override {
        return torch::zeros({a.size(0)}, a.options());
    }
    std::string name() const override { return "zero"; }
};

TrainingBatch dummy_batch(int64_t n) {
    TrainingBatch b;
    b.frontal = torch::zeros({n, 3, 16, 16}, torch::kDouble);
    b.ego = torch::zeros({n, 3, 16, 16}, torch::kDouble);
    b.mask = torch::ones({n, 1, 16, 16}, torch::kDouble);
    for (int64_t i = 0; i < n; ++i) b.ids.push_back("s" + std::to_string(i));
    return b;
}

}  // namespace

TEST_CASE("weights and combination") {
    LossWeights w;
    CHECK(w.lambda_diff == 1.0);
    CHECK(w.lambda_perc == 0.2);
    auto total = combine_loss(torch::tensor(0.5, torch::kDouble), torch::tensor(0.1, torch::kDouble), w);
    CHECK(total.item<double>() == doctest::Approx(0.52).epsilon(1e-15));
    CHECK_THROWS_AS((LossWeights{-1.0, 0.2}.validate()), UserError);
}

TEST_CASE("oracle model with a zero metric gives zero loss") {
    const auto s = build_linear_schedule();
    OracleModel model(torch::randn({4, 4, 2, 2}, torch::kDouble), s);
    ZeroMetric metric;
    auto loss = compound_loss(dummy_batch(4), model, metric, s, LossWeights{}, 17);
    CHECK(loss.total.item<double>() < 1e-18);
    CHECK(loss.diff.item<double>() < 1e-18);
    CHECK(loss.perc.item<double>() == 0.0);
}

TEST_CASE("lambda_perc = 0 leaves only the diffusion term") {
    auto cfg = testing::tiny_config();
    auto model = make_model(cfg, 1);
    FeatureDistanceMetric metric;
    const auto s = cfg.build_schedule();
    auto data = toy::make_training_set(2, 3, cfg.image_size, 1);
    TrainingBatch b{data.frontal, torch::stack({data.ego[0][0], data.ego[1][0]}), data.masks, data.ids, 0};
    auto loss = compound_loss(b, *model, metric, s, LossWeights{1.0, 0.0}, 9);
    CHECK(loss.total.item<double>() == loss.diff.item<double>());
    CHECK(loss.perc.item<double>() > 0.0);
    CHECK_FALSE(loss.perc.requires_grad());
    auto full = compound_loss(b, *model, metric, s, LossWeights{}, 9);
    CHECK(full.diff.item<double>() == loss.diff.item<double>());
    CHECK(full.total.item<double>() ==
          doctest::Approx(full.diff.item<double>() + 0.2 * full.perc.item<double>()).epsilon(1e-6));
}

TEST_CASE("perceptual distance") {
    FeatureDistanceMetric metric;
    auto gen = make_generator(4);
    auto a = ImageTensor::clamped(torch::rand({3, 32, 32}, gen) * 2 - 1);
    auto b = ImageTensor::clamped(torch::rand({3, 32, 32}, gen) * 2 - 1);
    CHECK(perceptual_distance(metric, a, a) == 0.0);
    CHECK(perceptual_distance(metric, a, b) > 0.0);
    CHECK(perceptual_distance(metric, a, b) == doctest::Approx(perceptual_distance(metric, b, a)).epsilon(1e-6));
    CHECK_THROWS_AS(perceptual_distance(metric, a, ImageTensor(torch::zeros({3, 16, 16}))), ShapeError);
    CHECK_THROWS_AS(perceptual_distance(metric, a, ImageTensor(torch::zeros({3, 32, 32}), kUnitRange)), RangeError);

    int monotone = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto base = torch::rand({3, 32, 32}, gen) * 1.6 - 0.8;
        auto noise = torch::randn({3, 32, 32}, gen);
        auto weak = ImageTensor::clamped(base + 0.05 * noise);
        auto strong = ImageTensor::clamped(base + 0.5 * noise);
        monotone += perceptual_distance(metric, ImageTensor(base), strong) >
                    perceptual_distance(metric, ImageTensor(base), weak);
    }
    CHECK(monotone == 20);
}

TEST_CASE("same seed, same losses; save/load resumes exactly") {
    auto cfg = testing::tiny_config();
    auto data = toy::make_training_set(4, 5, cfg.image_size, 3);
    testing::TempDir dir("objective");

    TrainingSession a(cfg);
    std::vector<StepRecord> straight;
    for (int i = 0; i < 8; ++i) {
        straight.push_back(a.train_step(data));
        if (i == 3) a.save(dir / "k4.pt");
    }

    TrainingSession b(cfg);
    for (int i = 0; i < 4; ++i) CHECK(b.train_step(data).total == straight[static_cast<size_t>(i)].total);

    TrainingSession c(cfg);
    c.load(dir / "k4.pt");
    CHECK(c.step() == 4);
    CHECK(c.codec_fitted());
    for (int i = 4; i < 8; ++i) CHECK(c.train_step(data).total == straight[static_cast<size_t>(i)].total);
    auto pa = a.model()->parameters();
    auto pc = c.model()->parameters();
    REQUIRE(pa.size() == pc.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i], pc[i]));

    const auto info = read_checkpoint_info(dir / "k4.pt");
    CHECK(info.step == 4);
    CHECK(info.format_version == kCheckpointFormatVersion);
    CHECK(info.config_hash == cfg.digest());
    CHECK_FALSE(info.group_tags.empty());
}

TEST_CASE("checkpoint mismatches are refused") {
    auto cfg = testing::tiny_config();
    auto data = toy::make_training_set(2, 6, cfg.image_size, 2);
    testing::TempDir dir("mismatch");
    TrainingSession a(cfg);
    a.train_step(data);
    a.save(dir / "a.pt");

    auto other = cfg;
    other.train.seed = 99;
    TrainingSession b(other);
    CHECK_THROWS_AS(b.load(dir / "a.pt"), UserError);
    CHECK_THROWS_AS(b.load(dir / "missing.pt"), UserError);

    torch::serialize::OutputArchive bad;
    bad.write("meta.format_version", c10::IValue(int64_t{99}));
    bad.save_to((dir / "v99.pt").string());
    CHECK_THROWS_AS(read_checkpoint_info(dir / "v99.pt"), UserError);
}

TEST_CASE("non-finite loss aborts without updating") {
    auto cfg = testing::tiny_config();
    auto data = toy::make_training_set(2, 8, cfg.image_size, 2);
    TrainingSession s(cfg);
    s.fit_codec(data);
    {
        torch::NoGradGuard g;
        s.model()->denoiser()->parameters().front().fill_(std::nan(""));
    }
    CHECK_THROWS_AS(s.train_step(data), TrainingDiverged);
    CHECK(s.step() == 0);
}

TEST_CASE("train loop writes checkpoints and metrics") {
    auto cfg = testing::tiny_config();
    auto data = toy::make_training_set(3, 9, cfg.image_size, 2);
    testing::TempDir dir("loop");
    TrainingSession s(cfg);
    TrainRunOptions opts;
    opts.run_dir = dir.path();
    const auto result = train(s, data, opts);
    CHECK(result.records.size() == static_cast<size_t>(cfg.train.steps));
    // step 0 plus every 4 steps up to 12
    CHECK(result.checkpoints.size() == 4);
    CHECK(latest_checkpoint(dir.path()) == checkpoint_path(dir.path(), 12));
    CHECK(std::filesystem::exists(dir / "metrics.jsonl"));
}
