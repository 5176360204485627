#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ego2front/commands.hpp"
#include "ego2front/error.hpp"
#include "ego2front/image_io.hpp"

#include <json.hpp>
#include "support.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace ego2front;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(EGO2FRONT_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Toy dataset written to disk and paired into a manifest.
struct Fixture {
    testing::TempDir dir{"cli"};
    fs::path manifest;
    RunConfig config;

    explicit Fixture(int64_t subjects = 8, int64_t val_percent = 30) {
        config = testing::tiny_config();
        toy::write_dataset(dir / "data", subjects, 5, config.image_size, 4);
        manifest = dir / "data" / "manifest.jsonl";
        PrepOptions p{dir / "data" / "ego", dir / "data" / "frontal", manifest, 5.0, 10, 12, val_percent};
        cmd_prep(p);
        config.paths.manifest = manifest.string();
        config.paths.output_dir = (dir / "runs").string();
    }
};

}  // namespace

TEST_CASE("prep pairs the fixture deterministically") {
    testing::TempDir dir("prep");
    toy::write_dataset(dir / "d", 3, 1, 32, 10);
    PrepOptions p{dir / "d" / "ego", dir / "d" / "frontal", dir / "d" / "m.jsonl", 5.0, 10, 12, 15};
    auto s = cmd_prep(p);
    CHECK(s.entries == 3);
    CHECK(s.dropped == 0);
    CHECK_FALSE(s.partial());
    auto m = read_manifest(p.out_manifest);
    REQUIRE(m.entries.size() == 3);
    for (const auto& e : m.entries) {
        CHECK(e.ego_paths.size() <= 10);
        CHECK(!e.ego_paths.empty());
    }
    const auto first = slurp(p.out_manifest);
    cmd_prep(p);
    CHECK(slurp(p.out_manifest) == first);
    CHECK(fs::exists(s.drop_report));

    // Narrow window: no pairs, nothing written, nonzero exit from the tool.
    p.window = 0.1;
    p.out_manifest = dir / "d" / "none.jsonl";
    CHECK_THROWS_AS(cmd_prep(p), UserError);
    CHECK_FALSE(fs::exists(p.out_manifest));

    fs::create_directories(dir / "empty");
    std::ofstream(dir / "empty" / "frames.jsonl").close();
    const auto args = "prep --ego-dir " + (dir / "d" / "ego").string() + " --frontal-dir " + (dir / "empty").string() +
                      " -o " + (dir / "e.jsonl").string();
    CHECK(run_cli(args) == 1);
    CHECK(run_cli("prep --ego-dir " + (dir / "d" / "ego").string() + " --frontal-dir " +
                  (dir / "d" / "frontal").string() + " -o " + (dir / "cli.jsonl").string()) == 0);
}

TEST_CASE("train: run directory, refusal, resume") {
    Fixture fx;
    TrainOptions opts{fx.config, false, std::nullopt, nullptr};
    auto a = cmd_train(opts);
    CHECK(a.run_dir == run_directory(fx.config));
    CHECK(a.run_dir.filename().string() == "run-" + fx.config.short_digest());
    CHECK(a.records.size() == 12);
    CHECK(fs::exists(a.run_dir / "config.resolved"));
    CHECK(fs::exists(a.run_dir / "run.json"));
    CHECK_FALSE(fs::exists(a.run_dir / ".lock"));
    CHECK_THROWS_AS(cmd_train(opts), UserError);

    auto longer = fx.config;
    longer.train.steps = 16;
    TrainOptions resume{longer, true, std::nullopt, nullptr};
    auto b = cmd_train(resume);
    CHECK(b.resumed_from_step == 12);
    CHECK(b.records.size() == 4);
    CHECK(b.records.front().step == 13);

    auto other = fx.config;
    other.lambda_perc = 0.0;
    TrainOptions mismatch{other, false, checkpoint_path(a.run_dir, 12), nullptr};
    CHECK_THROWS_AS(cmd_train(mismatch), UserError);
}

TEST_CASE("directory lock and output root") {
    testing::TempDir dir("lock");
    {
        DirectoryLock first(dir.path());
        CHECK_THROWS_AS(DirectoryLock{dir.path()}, UserError);
    }
    CHECK_NOTHROW(DirectoryLock{dir.path()});

    RunConfig c;
    c.paths.output_dir = "runs";
    setenv("EGO2FRONT_OUTPUT_ROOT", dir.path().c_str(), 1);
    CHECK(output_root(c) == dir.path() / "runs");
    unsetenv("EGO2FRONT_OUTPUT_ROOT");
    CHECK(output_root(c) == fs::path("runs"));
}

TEST_CASE("infer and eval") {
    Fixture fx;
    auto run = cmd_train(TrainOptions{fx.config, false, std::nullopt, nullptr});
    const auto ckpt = run.checkpoints.back();
    const auto data = fx.dir / "data";

    InferOptions io{ckpt, data / "ego" / "ego_0001_00.png", data / "frontal" / "mask_0001.png", fx.dir / "o1.png"};
    io.seed = 3;
    auto s1 = cmd_infer(io);
    io.out_image = fx.dir / "o2.png";
    auto s2 = cmd_infer(io);
    CHECK(slurp(s1.image) == slurp(s2.image));
    CHECK(fs::exists(s1.grid));
    auto img = read_rgb(s1.image);
    CHECK(img.sizes() == torch::IntArrayRef({3, fx.config.image_size, fx.config.image_size}));
    CHECK(read_rgb(s1.grid).size(2) == 3 * fx.config.image_size);

    io.steps = 1;
    io.out_image = fx.dir / "single.png";
    CHECK_NOTHROW(cmd_infer(io));

    write_rgb(fx.dir / "big.png", torch::zeros({3, 64, 64}));
    io.ego_image = fx.dir / "big.png";
    CHECK_THROWS_AS(cmd_infer(io), ShapeError);

    // Stub model: predictions are the ground truth.
    const auto manifest = read_manifest(fx.manifest);
    fs::create_directories(fx.dir / "preds");
    for (const auto* e : manifest.split("val")) fs::copy_file(data / e->frontal_path, fx.dir / "preds" / (e->frontal_id + ".png"));
    EvalOptions eo;
    eo.manifest = fx.manifest;
    eo.predictions = fx.dir / "preds";
    eo.report = fx.dir / "stub.json";
    auto stub = cmd_eval(eo);
    CHECK(stub.report.full.psnr.mean == 99.0);
    CHECK(stub.report.full.ssim.mean == 1.0);
    CHECK(stub.report.lower.ssim.mean == 1.0);
    CHECK(fs::exists(fx.dir / "stub.txt"));

    eo.predictions.reset();
    eo.checkpoint = ckpt;
    eo.report = fx.dir / "model.json";
    auto model = cmd_eval(eo);
    CHECK(model.report.config_hash == fx.config.digest());
    CHECK(model.report.full.psnr.mean < 99.0);
    const auto first = slurp(eo.report);
    cmd_eval(eo);
    CHECK(slurp(eo.report) == first);
}

TEST_CASE("eval: empty split and clothing labels") {
    Fixture fx(4, 0);
    EvalOptions eo;
    eo.manifest = fx.manifest;
    eo.split = "val";
    eo.predictions = fx.dir.path();
    eo.report = fx.dir / "r.json";
    CHECK_THROWS_AS(cmd_eval(eo), UserError);

    const auto manifest = read_manifest(fx.manifest);
    fs::create_directories(fx.dir / "preds");
    std::ofstream labels(fx.dir / "labels.jsonl");
    for (const auto& e : manifest.entries) {
        fs::copy_file(fx.dir / "data" / e.frontal_path, fx.dir / "preds" / (e.frontal_id + ".png"));
        labels << "{\"id\": \"" << e.frontal_id << "\", \"lower\": \"" << to_string(e.clothing->lower)
               << "\", \"upper\": \"" << to_string(e.clothing->upper) << "\"}\n";
    }
    labels.close();
    eo.split = "train";
    eo.predictions = fx.dir / "preds";
    eo.predicted_labels = fx.dir / "labels.jsonl";
    auto s = cmd_eval(eo);
    REQUIRE(s.clothing);
    CHECK(s.clothing->formatted() == "100% / 100%");
}

TEST_CASE("rank reproduces the user-study totals") {
    testing::TempDir dir("rank");
    {
        std::ofstream b(dir / "ballots.csv");
        b << "# rater, best .. worst\n";
        auto add = [&](int n, const std::string& order) {
            for (int i = 0; i < n; ++i) b << "p" << i << "," << order << "\n";
        };
        add(23, "UniAnimate,StableAnimator,ExAvatar,MimicMotion");
        add(6, "StableAnimator,UniAnimate,ExAvatar,MimicMotion");
        add(10, "UniAnimate,StableAnimator,MimicMotion,ExAvatar");
        add(2, "UniAnimate,ExAvatar,StableAnimator,MimicMotion");
    }
    auto s = cmd_rank(dir / "ballots.csv", dir / "study");
    CHECK(s.aggregate.total_points() == 246);
    CHECK(s.aggregate.at("UniAnimate").borda_score == 117);
    CHECK(fs::exists(dir / "study.json"));
    CHECK(fs::exists(dir / "study.txt"));
    CHECK(run_cli("rank " + (dir / "ballots.csv").string() + " -o " + (dir / "cli").string()) == 0);
    CHECK(run_cli("rank " + (dir / "missing.csv").string() + " -o " + (dir / "cli").string()) == 1);
}

TEST_CASE("ablation matrix") {
    auto base = testing::tiny_config();
    auto variants = ablation_matrix(base, {"control", "perc"});
    REQUIRE(variants.size() == 4);
    CHECK(variants[0].label == "control=on,perc=on");
    CHECK(variants[3].label == "control=off,perc=off");
    std::set<std::string> digests;
    for (const auto& v : variants) digests.insert(v.config.digest());
    CHECK(digests.size() == 4);
    CHECK(ablation_matrix(base, {"codec", "concept"}).size() == 4);
    CHECK_THROWS_AS(ablation_matrix(base, {"lora"}), UserError);
    CHECK_THROWS_AS(ablation_matrix(base, {"perc", "perc"}), UserError);

    Fixture fx;
    auto cfg = fx.config;
    cfg.train.steps = 2;
    cfg.train.codec_steps = 5;
    cfg.sample.steps = 2;
    AblateOptions ao{cfg, {"control", "perc"}, fx.dir / "ablate", "val", 0};
    auto s = cmd_ablate(ao);
    REQUIRE(s.rows.size() == 4);
    for (const auto& row : s.rows) {
        CHECK(row.report.has_value());
        CHECK(row.report->config_hash == row.config_hash);
        CHECK(row.config_hash.size() == 64);
    }
    const auto table = slurp(s.table);
    CHECK(table.find("control=off,perc=off") != std::string::npos);
    auto js = nlohmann::json::parse(slurp(s.json));
    CHECK(js["rows"].size() == 4);
}

TEST_CASE("tool exit codes") {
    testing::TempDir dir("exit");
    {
        std::ofstream c(dir / "bad.cfg");
        c << "train.steps = 5\nmodel.depth = 3\ntrain.lr = 1\n";
    }
    CHECK(run_cli("train -c " + (dir / "bad.cfg").string()) == 1);
    CHECK(run_cli("train -s denoiser.base_channels=abc") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("synth -o " + (dir / "toy").string() + " --subjects 2 --size 32 --ego-frames 2") == 0);
    CHECK(fs::exists(dir / "toy" / "frontal" / "frames.jsonl"));
}
