#include "ego2front/commands.hpp"

#include "ego2front/error.hpp"
#include "ego2front/image_io.hpp"
#include "ego2front/toy_data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace ego2front {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw UserError("cannot write '" + path.string() + "'");
        out << text;
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path with_suffix(const fs::path& path, const std::string& suffix) {
    auto p = path;
    p.replace_extension(suffix);
    return p;
}

}  // namespace

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
        throw UserError("output directory '" + dir.string() + "' is in use by another run (remove " + path_.string() +
                        " if that run is gone)");
    }
    std::fclose(f);
}

DirectoryLock::~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

fs::path output_root(const RunConfig& config) {
    fs::path out = config.paths.output_dir;
    if (const char* root = std::getenv("EGO2FRONT_OUTPUT_ROOT"); root && *root && out.is_relative()) {
        out = fs::path(root) / out;
    }
    return out;
}

fs::path run_directory(const RunConfig& config) { return output_root(config) / ("run-" + config.short_digest()); }

// ---------------------------------------------------------------- prep

std::string PrepSummary::describe() const {
    std::ostringstream o;
    o << entries << " entries (" << train << " train, " << val << " val), " << dropped << " frontal frames dropped, "
      << rejected_records << " index records rejected";
    return o.str();
}

PrepSummary cmd_prep(const PrepOptions& options) {
    auto ego = read_frame_index(options.ego_dir);
    auto frontal = read_frame_index(options.frontal_dir);
    if (frontal.records.empty()) {
        throw UserError("no frontal frames in '" + options.frontal_dir.string() + "'");
    }
    if (ego.records.empty()) throw UserError("no ego frames in '" + options.ego_dir.string() + "'");

    const auto manifest_dir = fs::absolute(options.out_manifest).parent_path();
    auto rebase = [&](const fs::path& dir, std::string& p) {
        if (p.empty()) return;
        p = fs::absolute(dir / p).lexically_normal().lexically_relative(manifest_dir).generic_string();
    };
    for (auto& r : ego.records) rebase(options.ego_dir, r.path);
    for (auto& r : frontal.records) {
        rebase(options.frontal_dir, r.path);
        rebase(options.frontal_dir, r.pose_mask_path);
    }
    auto by_time = [](const FrameRecord& a, const FrameRecord& b) {
        return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
    };
    std::stable_sort(ego.records.begin(), ego.records.end(), by_time);
    std::stable_sort(frontal.records.begin(), frontal.records.end(), by_time);

    auto result = pair_samples(ego.records, frontal.records, options.window, options.per_frontal, options.val_percent);
    if (result.manifest.entries.empty()) {
        throw UserError("no frontal frame has an ego frame within " + std::to_string(options.window) +
                        " s; refusing to write an empty manifest");
    }
    validate_manifest(result.manifest, manifest_dir, options.max_ego);
    fs::create_directories(manifest_dir);
    write_manifest(result.manifest, options.out_manifest);

    PrepSummary s;
    s.entries = static_cast<int64_t>(result.manifest.entries.size());
    s.train = result.manifest.count("train");
    s.val = result.manifest.count("val");
    s.dropped = static_cast<int64_t>(result.dropped.size());
    s.rejected_records = static_cast<int64_t>(ego.rejected.size() + frontal.rejected.size());
    s.drop_report = with_suffix(options.out_manifest, ".drops.jsonl");
    std::vector<DropRecord> drops = result.dropped;
    for (const auto& msg : frontal.rejected) drops.push_back({"", "frontal index: " + msg});
    for (const auto& msg : ego.rejected) drops.push_back({"", "ego index: " + msg});
    write_drop_report(drops, s.drop_report);
    return s;
}

// ---------------------------------------------------------------- train

namespace {

TrainingSet load_split(const RunConfig& config, const std::string& split) {
    if (config.paths.manifest.empty()) throw UserError("paths.manifest is not set");
    const fs::path manifest_path = config.paths.manifest;
    const auto manifest = read_manifest(manifest_path);
    return load_training_set(manifest, fs::absolute(manifest_path).parent_path(), split);
}

void truncate_metrics(const fs::path& file, int64_t last_step) {
    if (!fs::exists(file)) return;
    std::ifstream in(file);
    std::ostringstream kept;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.value("step", int64_t{0}) <= last_step) kept << line << '\n';
    }
    in.close();
    write_text(file, kept.str());
}

}  // namespace

TrainSummary cmd_train(const TrainOptions& options) {
    RunConfig config = options.config;
    config.finalize();
    TrainSummary summary;
    summary.run_dir = run_directory(config);
    DirectoryLock lock(summary.run_dir);

    const auto data = load_split(config, "train");
    TrainingSession session(config);

    const auto existing = latest_checkpoint(summary.run_dir);
    if (options.resume_from) {
        session.load(*options.resume_from);
    } else if (options.resume) {
        if (existing) session.load(*existing);
    } else if (existing) {
        throw UserError("run directory '" + summary.run_dir.string() +
                        "' already holds checkpoints; pass --resume to continue it");
    }
    summary.resumed_from_step = session.step();
    const auto metrics = summary.run_dir / "metrics.jsonl";
    if (session.step() > 0) {
        truncate_metrics(metrics, session.step());
    } else if (fs::exists(metrics)) {
        fs::remove(metrics);
    }

    write_text(summary.run_dir / "config.resolved", config.resolved_text());
    write_text(summary.run_dir / "run.json", json{{"command", "train"},
                                                  {"config_hash", config.digest()},
                                                  {"seed", config.train.seed},
                                                  {"steps", config.train.steps},
                                                  {"manifest", config.paths.manifest}}
                                                     .dump(2) +
                                                 "\n");

    TrainRunOptions run;
    run.run_dir = summary.run_dir;
    run.on_step = options.on_step;
    auto result = train(session, data, run);
    summary.records = std::move(result.records);
    summary.checkpoints = std::move(result.checkpoints);
    return summary;
}

std::unique_ptr<TrainingSession> load_session(const fs::path& checkpoint) {
    const auto info = read_checkpoint_info(checkpoint);
    auto config = parse_config(info.config_text);
    config.finalize();
    auto session = std::make_unique<TrainingSession>(config);
    session->load(checkpoint);
    return session;
}

// ---------------------------------------------------------------- infer / eval

EvalSettings eval_settings(const RunConfig& config, uint64_t seed) {
    EvalSettings s;
    s.sampler.kind = config.sample.sampler;
    s.sampler.steps = config.sample.steps;
    s.sampler.seed = seed;
    s.guidance_scale = config.sample.guidance_scale;
    s.hip_fraction = config.eval.hip_fraction;
    s.psnr_cap = config.eval.psnr_cap;
    s.batch_size = config.train.batch_size;
    return s;
}

namespace {

void require_resolution(const torch::Tensor& image, const RunConfig& config, const std::string& what) {
    if (image.size(-1) != config.image_size || image.size(-2) != config.image_size) {
        throw ShapeError(what + " is " + std::to_string(image.size(-2)) + "x" + std::to_string(image.size(-1)) +
                         " but the checkpoint's codec expects " + std::to_string(config.image_size) + "x" +
                         std::to_string(config.image_size));
    }
}

}  // namespace

InferSummary cmd_infer(const InferOptions& options) {
    auto session = load_session(options.checkpoint);
    const auto& config = session->config();
    auto ego = read_rgb(options.ego_image);
    auto mask = read_mask(options.pose_mask);
    require_resolution(ego, config, "ego image");
    require_resolution(mask, config, "pose mask");
    PoseMask{mask}.validate();

    auto settings = eval_settings(config, options.seed);
    if (options.steps) settings.sampler.steps = *options.steps;
    if (options.sampler) settings.sampler.kind = *options.sampler;

    TrainingBatch batch;
    batch.ego = ego.unsqueeze(0);
    batch.mask = mask.unsqueeze(0);
    batch.ids = {options.ego_image.stem().string()};
    batch.seed = options.seed;
    auto out = session->model()->generate(batch, session->schedule(), settings.sampler, settings.guidance_scale)[0];

    InferSummary s;
    s.image = options.out_image;
    if (s.image.has_parent_path()) fs::create_directories(s.image.parent_path());
    write_rgb(s.image, out);
    s.grid = s.image.parent_path() / (s.image.stem().string() + "_grid.png");
    write_rgb(s.grid, side_by_side({ego, mask, out}));
    s.sidecar = with_suffix(s.image, ".json");
    write_text(s.sidecar, json{{"config_hash", session->config().digest()},
                               {"checkpoint_step", session->step()},
                               {"sampler", to_string(settings.sampler.kind)},
                               {"steps", settings.sampler.steps},
                               {"seed", options.seed}}
                                  .dump(2) +
                              "\n");
    return s;
}

torch::Tensor generate_predictions(TrainingSession& session, const TrainingSet& data, const EvalSettings& settings) {
    data.validate();
    std::vector<torch::Tensor> out;
    const auto m = data.size();
    const auto bs = std::max<int64_t>(1, settings.batch_size);
    for (int64_t start = 0; start < m; start += bs) {
        const auto end = std::min(m, start + bs);
        TrainingBatch batch;
        std::vector<torch::Tensor> ego;
        for (int64_t i = start; i < end; ++i) {
            ego.push_back(data.ego[static_cast<size_t>(i)][0]);
            batch.ids.push_back(data.ids[static_cast<size_t>(i)]);
        }
        batch.ego = torch::stack(ego);
        batch.mask = data.masks.slice(0, start, end);
        auto opts = settings.sampler;
        opts.seed = mix_seed(settings.sampler.seed, static_cast<uint64_t>(start));
        out.push_back(session.model()->generate(batch, session.schedule(), opts, settings.guidance_scale));
    }
    return torch::cat(out);
}

EvalReport evaluate_predictions(const torch::Tensor& predictions, const TrainingSet& data, PerceptualMetric& metric,
                                const EvalSettings& settings) {
    if (predictions.size(0) != data.size()) {
        throw ShapeError(std::to_string(predictions.size(0)) + " predictions for " + std::to_string(data.size()) +
                         " samples");
    }
    std::vector<ImageTensor> pred, gt;
    std::vector<RegionMasks> regions;
    for (int64_t i = 0; i < data.size(); ++i) {
        pred.push_back(ImageTensor::clamped(predictions[i]));
        gt.push_back(ImageTensor(data.frontal[i]));
        regions.push_back(split_regions(PoseMask{data.masks[i]}, settings.hip_fraction));
    }
    return region_eval(pred, gt, regions, metric, settings.psnr_cap);
}

namespace {

std::map<std::string, ClothingLabels> read_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot read labels '" + path.string() + "'");
    std::map<std::string, ClothingLabels> out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("id") || !j.contains("lower") || !j.contains("upper")) {
            throw UserError(path.string() + ":" + std::to_string(n) + ": expected {\"id\", \"lower\", \"upper\"}");
        }
        out[j["id"].get<std::string>()] = {parse_lower(j["lower"].get<std::string>()),
                                           parse_upper(j["upper"].get<std::string>())};
    }
    return out;
}

}  // namespace

EvalSummary cmd_eval(const EvalOptions& options) {
    if (!options.checkpoint && !options.predictions) {
        throw UserError("eval needs a checkpoint or a predictions directory");
    }
    const auto manifest = read_manifest(options.manifest);
    if (manifest.count(options.split) == 0) {
        throw UserError("split '" + options.split + "' of '" + options.manifest.string() + "' is empty");
    }
    const auto data = load_training_set(manifest, fs::absolute(options.manifest).parent_path(), options.split);

    std::unique_ptr<TrainingSession> session;
    RunConfig defaults;
    defaults.finalize();
    EvalSettings settings = eval_settings(defaults, options.seed);
    std::string config_hash = "none";
    if (options.checkpoint) {
        session = load_session(*options.checkpoint);
        settings = eval_settings(session->config(), options.seed);
        config_hash = session->config().digest();
    }
    if (options.steps) settings.sampler.steps = *options.steps;

    torch::Tensor predictions;
    if (options.predictions) {
        std::vector<torch::Tensor> images;
        for (const auto& id : data.ids) {
            auto img = read_rgb(*options.predictions / (id + ".png"));
            if (!img.sizes().equals(data.frontal[0].sizes())) {
                throw ShapeError("prediction for '" + id + "' is " + shape_string(img) + ", expected " +
                                 shape_string(data.frontal[0]));
            }
            images.push_back(img);
        }
        predictions = torch::stack(images);
    } else {
        predictions = generate_predictions(*session, data, settings);
    }

    FeatureDistanceMetric metric;
    EvalSummary s;
    s.report = evaluate_predictions(predictions, data, metric, settings);
    s.report.label = options.label;
    s.report.config_hash = config_hash;

    json extra = json::object();
    if (options.predicted_labels) {
        const auto labels = read_labels(*options.predicted_labels);
        std::vector<ClothingLabels> pred, truth;
        for (size_t i = 0; i < data.ids.size(); ++i) {
            const auto& id = data.ids[i];
            if (!data.clothing[i]) throw UserError("manifest entry '" + id + "' has no clothing labels");
            const auto it = labels.find(id);
            if (it == labels.end()) throw UserError("no predicted labels for '" + id + "'");
            pred.push_back(it->second);
            truth.push_back(*data.clothing[i]);
        }
        s.clothing = clothing_accuracy(pred, truth);
    }

    s.json = options.report;
    auto report_json = json::parse(s.report.to_json());
    if (s.clothing) {
        report_json["clothing_accuracy"] = {{"lower_percent", s.clothing->lower_percent},
                                            {"upper_percent", s.clothing->upper_percent},
                                            {"samples", s.clothing->samples},
                                            {"formatted", s.clothing->formatted()}};
    }
    write_text(s.json, report_json.dump(2) + "\n");
    s.table = with_suffix(options.report, ".txt");
    auto table = format_eval_table({s.report});
    if (s.clothing) table += "Clothing accuracy (lower / upper): " + s.clothing->formatted() + "\n";
    write_text(s.table, table);
    return s;
}

// ---------------------------------------------------------------- rank

RankSummary cmd_rank(const fs::path& ballots, const fs::path& out_prefix) {
    RankSummary s;
    s.aggregate = borda_aggregate(read_ballots(ballots));
    s.json = out_prefix.string() + ".json";
    s.table = out_prefix.string() + ".txt";
    write_text(s.json, s.aggregate.to_json());
    write_text(s.table, s.aggregate.to_table());
    return s;
}

// ---------------------------------------------------------------- ablate

std::vector<AblationVariant> ablation_matrix(const RunConfig& base, const std::vector<std::string>& axes) {
    struct Level {
        std::string tag;
        std::function<void(RunConfig&)> apply;
    };
    auto axis_levels = [](const std::string& axis) -> std::vector<Level> {
        if (axis == "control") {
            return {{"control=on", [](RunConfig& c) { c.control = true; }},
                    {"control=off", [](RunConfig& c) { c.control = false; }}};
        }
        if (axis == "perc") {
            return {{"perc=on", [](RunConfig& c) { c.lambda_perc = c.lambda_perc > 0 ? c.lambda_perc : 0.2; }},
                    {"perc=off", [](RunConfig& c) { c.lambda_perc = 0.0; }}};
        }
        if (axis == "codec") {
            return {{"codec=toy_autoencoder", [](RunConfig& c) { c.codec.kind = CodecKind::ToyAutoencoder; }},
                    {"codec=human_prior_adapter", [](RunConfig& c) { c.codec.kind = CodecKind::HumanPriorAdapter; }}};
        }
        if (axis == "concept") {
            return {{"concept=global_cls", [](RunConfig& c) { c.concept_spec.variant = ConceptVariant::GlobalCls; }},
                    {"concept=grid_decoder", [](RunConfig& c) { c.concept_spec.variant = ConceptVariant::GridDecoder; }}};
        }
        throw UserError("unknown ablation axis '" + axis + "' (expected control, perc, codec or concept)");
    };

    std::vector<AblationVariant> variants{{"", base}};
    std::vector<std::string> seen;
    for (const auto& axis : axes) {
        if (std::find(seen.begin(), seen.end(), axis) != seen.end()) throw UserError("axis '" + axis + "' repeated");
        seen.push_back(axis);
        std::vector<AblationVariant> next;
        for (const auto& v : variants) {
            for (const auto& level : axis_levels(axis)) {
                AblationVariant n{v.label.empty() ? level.tag : v.label + "," + level.tag, v.config};
                level.apply(n.config);
                next.push_back(std::move(n));
            }
        }
        variants = std::move(next);
    }
    if (variants.size() == 1 && variants[0].label.empty()) variants[0].label = "base";
    for (auto& v : variants) v.config.finalize();
    return variants;
}

AblateSummary cmd_ablate(const AblateOptions& options) {
    auto base = options.base;
    base.finalize();
    const auto variants = ablation_matrix(base, options.axes);
    DirectoryLock lock(options.out_dir);

    const fs::path manifest_path = base.paths.manifest;
    if (manifest_path.empty()) throw UserError("paths.manifest is not set");
    const auto manifest = read_manifest(manifest_path);
    if (manifest.count(options.split) == 0) {
        throw UserError("split '" + options.split + "' of '" + manifest_path.string() + "' is empty");
    }
    const auto base_dir = fs::absolute(manifest_path).parent_path();
    const auto train_set = load_training_set(manifest, base_dir, "train");
    const auto eval_set = load_training_set(manifest, base_dir, options.split);
    FeatureDistanceMetric metric;

    AblateSummary s;
    json rows = json::array();
    for (const auto& v : variants) {
        AblationRow row{v.label, v.config.digest(), std::nullopt, ""};
        try {
            auto cfg = v.config;
            cfg.paths.output_dir = (options.out_dir / "runs").string();
            TrainingSession session(cfg);
            const auto run_dir = options.out_dir / "runs" / ("run-" + cfg.short_digest());
            fs::remove_all(run_dir);
            TrainRunOptions run;
            run.run_dir = run_dir;
            train(session, train_set, run);
            const auto settings = eval_settings(cfg, options.seed);
            auto report = evaluate_predictions(generate_predictions(session, eval_set, settings), eval_set, metric, settings);
            report.label = v.label;
            report.config_hash = row.config_hash;
            row.report = report;
        } catch (const AblationUnavailable& e) {
            row.unavailable = e.what();
        }
        json r{{"label", row.label}, {"config_hash", row.config_hash}};
        if (row.report) {
            r["report"] = json::parse(row.report->to_json());
        } else {
            r["unavailable"] = row.unavailable;
        }
        rows.push_back(r);
        s.rows.push_back(std::move(row));
    }

    std::vector<EvalReport> reports;
    std::string missing;
    for (const auto& row : s.rows) {
        if (row.report) {
            reports.push_back(*row.report);
        } else {
            missing += row.label + " (" + row.config_hash.substr(0, 12) + "): unavailable: " + row.unavailable + "\n";
        }
    }
    s.json = options.out_dir / "ablation.json";
    s.table = options.out_dir / "ablation.txt";
    write_text(s.json, json{{"schema", "ego2front.ablation"},
                            {"version", 1},
                            {"base_config_hash", base.digest()},
                            {"axes", options.axes},
                            {"rows", rows}}
                               .dump(2) +
                           "\n");
    write_text(s.table, format_eval_table(reports) + missing);
    return s;
}

void cmd_synth(const SynthOptions& options) {
    toy::write_dataset(options.root, options.subjects, options.seed, options.size, options.ego_frames);
}

}  // namespace ego2front
