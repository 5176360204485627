#include "ego2front/objective.hpp"

#include "ego2front/error.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <regex>
#include <sstream>

namespace ego2front {

void LossWeights::validate() const {
    if (!(lambda_diff >= 0.0) || !(lambda_perc >= 0.0)) throw UserError("loss weights must be >= 0");
}

torch::Tensor combine_loss(const torch::Tensor& diff, const torch::Tensor& perc, const LossWeights& weights) {
    return weights.lambda_diff * diff + weights.lambda_perc * perc;
}

LossComponents compound_loss(const TrainingBatch& batch, DenoisingModel& model, PerceptualMetric& metric,
                             const NoiseSchedule& schedule, const LossWeights& weights, uint64_t seed) {
    weights.validate();
    batch.validate();
    auto gen = make_generator(seed);
    const auto n = batch.size();
    auto z0 = model.encode_target(batch.frontal);
    auto t = torch::randint(1, schedule.steps() + 1, {n}, gen, torch::TensorOptions().dtype(torch::kLong));
    auto eps = torch::randn(z0.sizes(), gen, z0.options());
    auto z_t = forward_noise(z0, t, eps, schedule);
    auto eps_hat = model.predict_noise(z_t, t, batch);
    if (!eps_hat.sizes().equals(eps.sizes())) {
        throw ShapeError("model predicted " + shape_string(eps_hat) + " for noise " + shape_string(eps));
    }

    LossComponents out;
    out.diff = (eps_hat - eps).pow(2).mean();
    auto perceptual = [&] {
        auto x0 = predict_x0_from_eps(z_t, eps_hat, t, schedule);
        return metric.distance(model.decode_raw(x0), batch.frontal.to(x0.scalar_type())).mean();
    };
    if (weights.lambda_perc > 0.0) {
        out.perc = perceptual();
        out.total = combine_loss(out.diff, out.perc, weights);
    } else {
        {
            torch::NoGradGuard no_grad;
            out.perc = perceptual();
        }
        out.total = weights.lambda_diff * out.diff;
    }
    return out;
}

TrainingSession::TrainingSession(RunConfig config)
    : config_(std::move(config)),
      schedule_((config_.finalize(), config_.build_schedule())),
      model_(make_model(config_, config_.train.seed)),
      metric_(mix_seed(config_.train.seed, 0x9e7c)) {
    rebuild_optimizer();
}

void TrainingSession::rebuild_optimizer() {
    optimizer_ = std::make_unique<torch::optim::Adam>(model_->trainable_parameters(),
                                                      torch::optim::AdamOptions(config_.train.learning_rate));
}

double TrainingSession::fit_codec(const TrainingSet& data) {
    if (codec_fitted_ || config_.codec.kind == CodecKind::PretrainedVaeAdapter) {
        codec_fitted_ = true;
        return 0.0;
    }
    data.validate();
    CodecFitOptions opts;
    opts.steps = config_.train.codec_steps;
    opts.batch_size = config_.train.batch_size;
    opts.learning_rate = config_.train.codec_learning_rate;
    opts.seed = mix_seed(config_.train.seed, 0xc0dec);
    auto result = fit_toy_autoencoder(model_->codec(), data.all_images(), opts);
    codec_fitted_ = true;
    return result.final_mse;
}

namespace {

uint64_t draw(std::mt19937_64& rng, uint64_t n) { return rng() % n; }

}  // namespace

TrainingBatch TrainingSession::draw_batch(const TrainingSet& data, int64_t step) const {
    std::mt19937_64 rng(mix_seed(config_.train.seed, static_cast<uint64_t>(step), 0xba7c4));
    const AugmentRanges ranges{config_.augment.zoom_max, config_.augment.shift_max, config_.augment.rotation_max_deg,
                               config_.augment.ego_rotation_max_deg};
    std::vector<torch::Tensor> frontal, ego, mask;
    TrainingBatch batch;
    for (int64_t b = 0; b < config_.train.batch_size; ++b) {
        const auto i = static_cast<int64_t>(draw(rng, static_cast<uint64_t>(data.size())));
        const auto& frames = data.ego[static_cast<size_t>(i)];
        const auto j = static_cast<int64_t>(draw(rng, static_cast<uint64_t>(frames.size(0))));
        auto fr = augment_frontal(data.frontal[i], data.masks[i], config_.augment.q, rng(), ranges);
        auto eg = augment_ego(frames[j], config_.augment.p, rng(), ranges);
        frontal.push_back(fr.image);
        mask.push_back(fr.mask);
        ego.push_back(eg.image);
        batch.ids.push_back(data.ids[static_cast<size_t>(i)]);
    }
    batch.frontal = torch::stack(frontal);
    batch.ego = torch::stack(ego);
    batch.mask = torch::stack(mask);
    batch.seed = rng();
    return batch;
}

StepRecord TrainingSession::train_step(const TrainingSet& data) {
    if (!codec_fitted_) fit_codec(data);
    model_->train();
    const auto batch = draw_batch(data, step_);
    optimizer_->zero_grad();
    const LossWeights weights{config_.lambda_diff, config_.lambda_perc};
    auto loss = compound_loss(batch, *model_, metric_, schedule_, weights,
                              mix_seed(config_.train.seed, static_cast<uint64_t>(step_), 0x1055));
    StepRecord r;
    r.step = step_ + 1;
    r.l_diff = loss.diff.item<double>();
    r.l_perc = loss.perc.item<double>();
    r.total = loss.total.item<double>();
    if (!std::isfinite(r.total)) {
        throw TrainingDiverged("non-finite loss at step " + std::to_string(r.step));
    }
    loss.total.backward();
    optimizer_->step();
    ++step_;
    return r;
}

namespace {

c10::List<std::string> group_tags(Ego2FrontModel& model) {
    c10::List<std::string> tags;
    for (const auto& g : model->census().groups) tags.push_back(g.name + (g.trainable ? ":trainable" : ":frozen"));
    return tags;
}

}  // namespace

void TrainingSession::save(const std::filesystem::path& path) const {
    auto& self = const_cast<TrainingSession&>(*this);
    torch::serialize::OutputArchive archive;
    archive.write("meta.format_version", c10::IValue(kCheckpointFormatVersion));
    archive.write("meta.config_hash", c10::IValue(config_.digest()));
    archive.write("meta.config_text", c10::IValue(config_.resolved_text()));
    archive.write("meta.step", c10::IValue(step_));
    archive.write("meta.codec_scale", c10::IValue(self.model_->codec()->spec().scale));
    archive.write("meta.codec_fitted", c10::IValue(codec_fitted_));
    archive.write("meta.schedule", c10::IValue(c10::List<double>(
                                       {static_cast<double>(schedule_.steps()), schedule_.beta_start(), schedule_.beta_end()})));
    archive.write("meta.group_tags", c10::IValue(group_tags(self.model_)));

    torch::serialize::OutputArchive model_archive, optim_archive, metric_archive;
    model_->save(model_archive);
    optimizer_->save(optim_archive);
    self.metric_.network()->save(metric_archive);
    archive.write("model", model_archive);
    archive.write("optimizer", optim_archive);
    archive.write("perceptual", metric_archive);

    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const auto tmp = path.string() + ".tmp";
    archive.save_to(tmp);
    std::filesystem::rename(tmp, path);
}

namespace {

CheckpointInfo read_info(torch::serialize::InputArchive& archive) {
    CheckpointInfo info;
    c10::IValue v;
    if (!archive.try_read("meta.format_version", v)) throw UserError("not an ego2front checkpoint");
    info.format_version = v.toInt();
    if (info.format_version != kCheckpointFormatVersion) {
        throw UserError("checkpoint format version " + std::to_string(info.format_version) + " unsupported (expected " +
                        std::to_string(kCheckpointFormatVersion) + ")");
    }
    archive.read("meta.config_hash", v);
    info.config_hash = v.toStringRef();
    archive.read("meta.config_text", v);
    info.config_text = v.toStringRef();
    archive.read("meta.step", v);
    info.step = v.toInt();
    archive.read("meta.codec_scale", v);
    info.codec_scale = v.toDouble();
    archive.read("meta.group_tags", v);
    for (const auto& s : v.toList()) info.group_tags.push_back(static_cast<c10::IValue>(s).toStringRef());
    return info;
}

torch::serialize::InputArchive open_archive(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw UserError("checkpoint '" + path.string() + "' not found");
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw UserError("cannot read checkpoint '" + path.string() + "': " + e.what_without_backtrace());
    }
    return archive;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
    auto archive = open_archive(path);
    return read_info(archive);
}

void TrainingSession::load(const std::filesystem::path& path) {
    auto archive = open_archive(path);
    const auto info = read_info(archive);
    if (info.config_hash != config_.digest()) {
        throw UserError("checkpoint config hash " + info.config_hash.substr(0, 16) + " does not match run config " +
                        config_.short_digest());
    }
    torch::serialize::InputArchive model_archive, optim_archive, metric_archive;
    archive.read("model", model_archive);
    archive.read("optimizer", optim_archive);
    archive.read("perceptual", metric_archive);
    model_->load(model_archive);
    model_->codec()->set_scale(info.codec_scale);
    metric_.network()->load(metric_archive);
    optimizer_->load(optim_archive);
    c10::IValue fitted;
    archive.read("meta.codec_fitted", fitted);
    codec_fitted_ = fitted.toBool();
    step_ = info.step;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int64_t step) {
    std::ostringstream name;
    name << "ckpt_" << std::setw(7) << std::setfill('0') << step << ".pt";
    return run_dir / name.str();
}

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir) {
    if (!std::filesystem::exists(run_dir)) return std::nullopt;
    std::optional<std::filesystem::path> best;
    static const std::regex pattern(R"(ckpt_(\d+)\.pt)");
    int64_t best_step = -1;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
        std::smatch m;
        const auto name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) {
            const auto step = std::stoll(m[1].str());
            if (step > best_step) {
                best_step = step;
                best = entry.path();
            }
        }
    }
    return best;
}

TrainRunResult train(TrainingSession& session, const TrainingSet& data, const TrainRunOptions& options) {
    data.validate();
    TrainRunResult result;
    std::filesystem::create_directories(options.run_dir);
    if (options.resume) {
        if (auto last = latest_checkpoint(options.run_dir)) session.load(*last);
    }
    session.fit_codec(data);
    const auto& cfg = session.config();
    if (session.step() == 0) {
        const auto p = checkpoint_path(options.run_dir, 0);
        session.save(p);
        result.checkpoints.push_back(p);
    }
    std::ofstream log(options.run_dir / "metrics.jsonl", std::ios::app);
    const auto start = std::chrono::steady_clock::now();
    while (session.step() < cfg.train.steps) {
        auto r = session.train_step(data);
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log << nlohmann::json{{"step", r.step}, {"l_diff", r.l_diff}, {"l_perc", r.l_perc}, {"total", r.total},
                              {"wall_time", r.wall_time}}
                   .dump()
            << '\n';
        log.flush();
        result.records.push_back(r);
        if (r.step % cfg.train.checkpoint_every == 0 || r.step == cfg.train.steps) {
            const auto p = checkpoint_path(options.run_dir, r.step);
            session.save(p);
            result.checkpoints.push_back(p);
        }
        if (options.on_step && !options.on_step(r)) break;
    }
    return result;
}

}  // namespace ego2front
