#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ego2front/condition.hpp"
#include "ego2front/error.hpp"
#include "ego2front/objective.hpp"
#include "support.hpp"

using namespace ego2front;

namespace {

ConceptSpec concept_spec(ConceptVariant v) {
    ConceptSpec s;
    s.variant = v;
    s.embed_dim = 32;
    s.backbone_width = 32;
    return s;
}

ImageTensor random_image(int64_t n = 1) { return ImageTensor(torch::rand({n, 3, 64, 64}) * 2 - 1); }

}  // namespace

TEST_CASE("global concept embedding") {
    torch::manual_seed(0);
    ConceptEncoder enc(concept_spec(ConceptVariant::GlobalCls));
    auto x = random_image();
    auto a = encode_concept_global(enc, x);
    CHECK(a.tokens.sizes() == torch::IntArrayRef({1, 1, 32}));
    CHECK(torch::equal(a.tokens, encode_concept_global(enc, x).tokens));
    CHECK(enc->backbone_source() == "stand_in");
    {
        torch::NoGradGuard g;
        enc->projection()->weight.mul_(2.0);
    }
    auto b = encode_concept_global(enc, x);
    CHECK(b.tokens.sub(a.tokens * 2).abs().max().item<double>() < 1e-5);
    CHECK_THROWS_AS(encode_concept_grid(enc, x), UserError);
}

TEST_CASE("grid concept embedding") {
    torch::manual_seed(1);
    ConceptEncoder enc(concept_spec(ConceptVariant::GridDecoder));
    auto e = encode_concept_grid(enc, random_image(2));
    CHECK(e.tokens.sizes() == torch::IntArrayRef({2, 8, 32}));
    CHECK(e.token_count() == 8);
}

TEST_CASE("grid decoder is permutation invariant without positions") {
    torch::manual_seed(2);
    GridDecoder dec(4, 16, 24, 32);
    {
        torch::NoGradGuard g;
        dec->positions().zero_();
    }
    auto grid = torch::randn({2, 16, 24});
    auto perm = torch::randperm(16);
    auto a = dec->forward(grid);
    auto b = dec->forward(grid.index_select(1, perm));
    CHECK(a.sub(b).abs().max().item<double>() < 1e-5);

    // With positions the order matters.
    {
        torch::NoGradGuard g;
        dec->positions().normal_();
    }
    CHECK(dec->forward(grid).sub(dec->forward(grid.index_select(1, perm))).abs().max().item<double>() > 1e-4);
}

TEST_CASE("gradients reach the queries, not the frozen backbone") {
    torch::manual_seed(3);
    ConceptEncoder enc(concept_spec(ConceptVariant::GridDecoder));
    encode_concept_grid(enc, random_image()).tokens.pow(2).sum().backward();
    auto g = enc->grid_decoder()->queries().grad();
    REQUIRE(g.defined());
    CHECK(g.abs().sum().item<double>() > 0);
    for (const auto& item : enc->named_parameters()) {
        if (item.key().rfind("backbone.", 0) == 0) {
            CHECK_FALSE(item.value().requires_grad());
            CHECK_FALSE(item.value().grad().defined());
        }
    }
}

TEST_CASE("missing backbone: fallback only when allowed") {
    auto spec = concept_spec(ConceptVariant::GlobalCls);
    spec.backbone_available = false;
    ConceptEncoder fallback(spec);
    CHECK(fallback->backbone_source() == "fallback_summarizer");
    CHECK(encode_concept_global(fallback, random_image()).tokens.sizes() == torch::IntArrayRef({1, 1, 32}));
    spec.allow_fallback = false;
    CHECK_THROWS_AS(ConceptEncoder{spec}, AblationUnavailable);
}

TEST_CASE("fresh control branch outputs exact zeros at every site") {
    torch::manual_seed(4);
    DenoiserSpec spec;
    spec.base_channels = 16;
    spec.embed_dim = 32;
    ControlBranch branch(spec, 8, 64);
    CHECK(branch->sites() == spec.levels() + 1);
    PoseMask mask{(torch::rand({2, 1, 64, 64}) > 0.5).to(torch::kFloat)};
    LatentTensor z{torch::randn({2, 8, 8, 8}), 1.0};
    ConceptEmbedding ctx{torch::randn({2, 1, 32}), ConceptVariant::GlobalCls};
    auto res = encode_pose_control(branch, mask, z, 500, ctx);
    REQUIRE(res.size() == static_cast<size_t>(spec.levels() + 1));
    const auto shapes = spec.site_shapes(2, 8, 8);
    for (size_t i = 0; i < res.size(); ++i) {
        CHECK(res[i].sizes() == torch::IntArrayRef(shapes[i]));
        CHECK(res[i].abs().max().item<double>() == 0.0);
    }
}

TEST_CASE("control branch rejects incompatible grids") {
    DenoiserSpec spec;
    spec.base_channels = 16;
    spec.channel_multipliers = {1, 2, 4, 4, 4};
    CHECK_THROWS_AS(ControlBranch(spec, 8, 64), ShapeError);
    CHECK_THROWS_AS(ControlBranch(DenoiserSpec{}, 8, 60), ShapeError);
}

TEST_CASE("trained control branch separates different masks") {
    auto cfg = testing::tiny_config();
    cfg.train.steps = 100;
    auto data = toy::make_training_set(6, 21, cfg.image_size, 3);
    TrainingSession session(cfg);
    for (int i = 0; i < 100; ++i) session.train_step(data);

    auto& branch = session.model()->control();
    torch::NoGradGuard g;
    branch->eval();
    LatentTensor z{torch::randn({1, 8, 4, 4}), 1.0};
    ConceptEmbedding ctx{torch::randn({1, 1, cfg.denoiser.embed_dim}), ConceptVariant::GlobalCls};
    auto a = encode_pose_control(branch, PoseMask{data.masks[0]}, z, 300, ctx);
    auto b = encode_pose_control(branch, PoseMask{data.masks[3]}, z, 300, ctx);
    double diff = 0;
    for (size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]).pow(2).sum().item<double>();
    MESSAGE("residual L2^2 difference " << diff);
    CHECK(diff > 0.0);
}

TEST_CASE("ego latent fusion") {
    LatentTensor z{torch::randn({4, 8, 8}), 0.5};
    LatentTensor ego{torch::randn({4, 8, 8}), 0.5};
    auto f = fuse_ego_latent(z, ego);
    CHECK(f.data.sizes() == torch::IntArrayRef({8, 8, 8}));
    CHECK(torch::equal(f.data.slice(0, 0, 4), z.data));
    CHECK(torch::equal(f.data.slice(0, 4, 8), ego.data));
    auto zero = fuse_ego_latent(z, LatentTensor{torch::zeros({4, 8, 8}), 0.5});
    CHECK(zero.data.slice(0, 4, 8).abs().max().item<double>() == 0.0);
    CHECK_THROWS_AS(fuse_ego_latent(z, LatentTensor{torch::zeros({4, 4, 4}), 0.5}), ShapeError);
}

TEST_CASE("pose mask validation") {
    CHECK_THROWS_AS(PoseMask{torch::zeros({1, 8, 8})}.validate(), RangeError);
    CHECK_THROWS_AS(PoseMask{torch::ones({3, 8, 8})}.validate(), ShapeError);
    CHECK_THROWS_AS(PoseMask{torch::full({1, 8, 8}, 2.0)}.validate(), RangeError);
    CHECK_NOTHROW(PoseMask{torch::ones({1, 8, 8})}.validate());
}
