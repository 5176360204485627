#include "ego2front/commands.hpp"
#include "ego2front/error.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace ego2front;

namespace {

RunConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig config = path.empty() ? RunConfig{} : load_config(path);
    apply_overrides(config, overrides);
    config.finalize();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frontal view synthesis from egocentric images"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "key = value configuration file");
        sub->add_option("-s,--set", overrides, "key=value override (repeatable)");
    };

    PrepOptions prep;
    auto* prep_cmd = app.add_subcommand("prep", "pair ego and frontal frames into a manifest");
    prep_cmd->add_option("--ego-dir", prep.ego_dir)->required();
    prep_cmd->add_option("--frontal-dir", prep.frontal_dir)->required();
    prep_cmd->add_option("-o,--out", prep.out_manifest)->required();
    prep_cmd->add_option("--window", prep.window, "seconds")->capture_default_str();
    prep_cmd->add_option("--per-frontal", prep.per_frontal)->capture_default_str();
    prep_cmd->add_option("--max-ego", prep.max_ego)->capture_default_str();
    prep_cmd->add_option("--val-percent", prep.val_percent)->capture_default_str();

    bool resume = false;
    std::string resume_from;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_config(train_cmd);
    train_cmd->add_flag("--resume", resume, "continue from the latest checkpoint of this config");
    train_cmd->add_option("--resume-from", resume_from, "continue from a specific checkpoint");

    InferOptions infer;
    int64_t infer_steps = 0;
    std::string infer_sampler;
    auto* infer_cmd = app.add_subcommand("infer", "generate a frontal image");
    infer_cmd->add_option("--checkpoint", infer.checkpoint)->required();
    infer_cmd->add_option("--ego", infer.ego_image)->required();
    infer_cmd->add_option("--mask", infer.pose_mask)->required();
    infer_cmd->add_option("-o,--out", infer.out_image)->required();
    infer_cmd->add_option("--steps", infer_steps, "sampling steps (default from the checkpoint config)");
    infer_cmd->add_option("--sampler", infer_sampler, "ancestral or strided");
    infer_cmd->add_option("--seed", infer.seed)->capture_default_str();

    EvalOptions eval;
    std::string eval_ckpt, eval_preds, eval_labels;
    int64_t eval_steps = 0;
    auto* eval_cmd = app.add_subcommand("eval", "region metrics on a manifest split");
    eval_cmd->add_option("--checkpoint", eval_ckpt);
    eval_cmd->add_option("--manifest", eval.manifest)->required();
    eval_cmd->add_option("--split", eval.split)->capture_default_str();
    eval_cmd->add_option("-o,--report", eval.report)->required();
    eval_cmd->add_option("--predictions", eval_preds, "directory of <id>.png used instead of sampling");
    eval_cmd->add_option("--labels", eval_labels, "JSON lines of clothing labels judged on the predictions");
    eval_cmd->add_option("--steps", eval_steps);
    eval_cmd->add_option("--seed", eval.seed)->capture_default_str();
    eval_cmd->add_option("--label", eval.label)->capture_default_str();

    std::string ballots, rank_out;
    auto* rank_cmd = app.add_subcommand("rank", "Borda aggregation of ranking ballots");
    rank_cmd->add_option("ballots", ballots)->required();
    rank_cmd->add_option("-o,--out", rank_out, "output prefix")->required();

    AblateOptions ablate;
    auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate a matrix of variants");
    add_config(ablate_cmd);
    ablate_cmd->add_option("--axis", ablate.axes, "control, perc, codec or concept (repeatable)")->required();
    ablate_cmd->add_option("-o,--out", ablate.out_dir)->required();
    ablate_cmd->add_option("--split", ablate.split)->capture_default_str();
    ablate_cmd->add_option("--seed", ablate.seed)->capture_default_str();

    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "write the procedural toy dataset");
    synth_cmd->add_option("-o,--out", synth.root)->required();
    synth_cmd->add_option("--subjects", synth.subjects)->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
    synth_cmd->add_option("--size", synth.size)->capture_default_str();
    synth_cmd->add_option("--ego-frames", synth.ego_frames)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*prep_cmd) {
            const auto s = cmd_prep(prep);
            std::cout << "manifest " << prep.out_manifest.string() << ": " << s.describe() << "\n";
            if (s.partial()) {
                std::cerr << "partial failure: see " << s.drop_report.string() << "\n";
                return 1;
            }
        } else if (*train_cmd) {
            TrainOptions opts{config_from(config_path, overrides), resume, std::nullopt, nullptr};
            if (!resume_from.empty()) opts.resume_from = resume_from;
            opts.on_step = [](const StepRecord& r) {
                if (r.step % 10 == 0) {
                    std::cout << "step " << r.step << " loss " << r.total << " (diff " << r.l_diff << ", perc "
                              << r.l_perc << ")\n";
                }
                return true;
            };
            const auto s = cmd_train(opts);
            std::cout << "run " << s.run_dir.string() << ": " << s.records.size() << " steps, "
                      << s.checkpoints.size() << " checkpoints\n";
        } else if (*infer_cmd) {
            if (infer_steps > 0) infer.steps = infer_steps;
            if (!infer_sampler.empty()) infer.sampler = parse_sampler_kind(infer_sampler);
            const auto s = cmd_infer(infer);
            std::cout << "wrote " << s.image.string() << " and " << s.grid.string() << "\n";
        } else if (*eval_cmd) {
            if (!eval_ckpt.empty()) eval.checkpoint = eval_ckpt;
            if (!eval_preds.empty()) eval.predictions = eval_preds;
            if (!eval_labels.empty()) eval.predicted_labels = eval_labels;
            if (eval_steps > 0) eval.steps = eval_steps;
            const auto s = cmd_eval(eval);
            std::cout << format_eval_table({s.report});
            if (s.clothing) std::cout << "Clothing accuracy (lower / upper): " << s.clothing->formatted() << "\n";
        } else if (*rank_cmd) {
            const auto s = cmd_rank(ballots, rank_out);
            std::cout << s.aggregate.to_table();
        } else if (*ablate_cmd) {
            ablate.base = config_from(config_path, overrides);
            const auto s = cmd_ablate(ablate);
            std::ifstream table(s.table);
            std::cout << table.rdbuf();
        } else if (*synth_cmd) {
            cmd_synth(synth);
            std::cout << "wrote " << synth.subjects << " subjects to " << synth.root.string() << "\n";
        }
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
