#include "ego2front/config.hpp"

#include "ego2front/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace ego2front {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw UserError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t to_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end) {
        throw UserError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw UserError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<int64_t> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_int(key, item));
    }
    return out;
}

std::string from_int_list(const std::vector<int64_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
    bool identity = true;  // part of the digest
};

#define E2F_DOUBLE(name, member)                                                                       \
    {name, Field{[](const RunConfig& c) { return fmt_double(c.member); },                              \
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }}}
#define E2F_INT(name, member)                                                                          \
    {name, Field{[](const RunConfig& c) { return std::to_string(c.member); },                          \
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_int(k, v); }}}
#define E2F_BOOL(name, member)                                                                         \
    {name, Field{[](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },          \
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }}}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t{
            E2F_INT("image.size", image_size),
            E2F_INT("schedule.steps", schedule.steps),
            E2F_DOUBLE("schedule.beta_start", schedule.beta_start),
            E2F_DOUBLE("schedule.beta_end", schedule.beta_end),
            {"codec.kind", Field{[](const RunConfig& c) { return to_string(c.codec.kind); },
                                 [](RunConfig& c, const std::string&, const std::string& v) {
                                     c.codec.kind = parse_codec_kind(v);
                                 }}},
            E2F_INT("codec.downsample", codec.downsample_factor),
            E2F_INT("codec.latent_channels", codec.latent_channels),
            E2F_INT("codec.hidden_channels", codec.hidden_channels),
            {"codec.weights", Field{[](const RunConfig& c) { return c.codec.weights_path; },
                                    [](RunConfig& c, const std::string&, const std::string& v) { c.codec.weights_path = v; }}},
            E2F_INT("denoiser.base_channels", denoiser.base_channels),
            {"denoiser.multipliers", Field{[](const RunConfig& c) { return from_int_list(c.denoiser.channel_multipliers); },
                                           [](RunConfig& c, const std::string& k, const std::string& v) {
                                               c.denoiser.channel_multipliers = to_int_list(k, v);
                                           }}},
            {"denoiser.attention_levels", Field{[](const RunConfig& c) { return from_int_list(c.denoiser.attention_levels); },
                                                [](RunConfig& c, const std::string& k, const std::string& v) {
                                                    c.denoiser.attention_levels = to_int_list(k, v);
                                                }}},
            E2F_INT("denoiser.embed_dim", denoiser.embed_dim),
            E2F_INT("denoiser.head_dim", denoiser.head_dim),
            E2F_BOOL("denoiser.control", control),
            E2F_BOOL("denoiser.train_only_attention", train_only_attention),
            E2F_DOUBLE("denoiser.concept_dropout", concept_dropout),
            {"concept.variant", Field{[](const RunConfig& c) { return to_string(c.concept_spec.variant); },
                                      [](RunConfig& c, const std::string&, const std::string& v) {
                                          c.concept_spec.variant = parse_concept_variant(v);
                                      }}},
            E2F_INT("concept.queries", concept_spec.queries),
            E2F_INT("concept.backbone_width", concept_spec.backbone_width),
            E2F_INT("concept.patch", concept_spec.patch),
            E2F_BOOL("concept.backbone_available", concept_spec.backbone_available),
            E2F_BOOL("concept.allow_fallback", concept_spec.allow_fallback),
            E2F_DOUBLE("loss.lambda_diff", lambda_diff),
            E2F_DOUBLE("loss.lambda_perc", lambda_perc),
            E2F_DOUBLE("augment.p", augment.p),
            E2F_DOUBLE("augment.q", augment.q),
            E2F_DOUBLE("augment.zoom_max", augment.zoom_max),
            E2F_DOUBLE("augment.shift_max", augment.shift_max),
            E2F_DOUBLE("augment.rotation_max_deg", augment.rotation_max_deg),
            E2F_DOUBLE("augment.ego_rotation_max_deg", augment.ego_rotation_max_deg),
            E2F_INT("train.steps", train.steps),
            E2F_INT("train.batch_size", train.batch_size),
            E2F_DOUBLE("train.learning_rate", train.learning_rate),
            {"train.seed", Field{[](const RunConfig& c) { return std::to_string(c.train.seed); },
                                 [](RunConfig& c, const std::string& k, const std::string& v) {
                                     const auto s = to_int(k, v);
                                     if (s < 0) throw UserError("config key 'train.seed' must be >= 0");
                                     c.train.seed = static_cast<uint64_t>(s);
                                 }}},
            E2F_INT("train.checkpoint_every", train.checkpoint_every),
            E2F_INT("train.codec_steps", train.codec_steps),
            E2F_DOUBLE("train.codec_learning_rate", train.codec_learning_rate),
            E2F_INT("sample.steps", sample.steps),
            {"sample.sampler", Field{[](const RunConfig& c) { return to_string(c.sample.sampler); },
                                     [](RunConfig& c, const std::string&, const std::string& v) {
                                         c.sample.sampler = parse_sampler_kind(v);
                                     }}},
            E2F_DOUBLE("sample.guidance_scale", sample.guidance_scale),
            E2F_DOUBLE("eval.hip_fraction", eval.hip_fraction),
            E2F_DOUBLE("eval.psnr_cap", eval.psnr_cap),
            E2F_DOUBLE("data.window", data.window),
            E2F_INT("data.per_frontal", data.per_frontal),
            E2F_INT("data.max_ego", data.max_ego),
            E2F_INT("data.val_percent", data.val_percent),
            {"paths.manifest", Field{[](const RunConfig& c) { return c.paths.manifest; },
                                     [](RunConfig& c, const std::string&, const std::string& v) { c.paths.manifest = v; }}},
            {"paths.output_dir", Field{[](const RunConfig& c) { return c.paths.output_dir; },
                                       [](RunConfig& c, const std::string&, const std::string& v) { c.paths.output_dir = v; }}},
        };
        for (const char* k : {"train.steps", "train.checkpoint_every", "paths.output_dir", "sample.steps",
                              "sample.sampler", "sample.guidance_scale", "eval.hip_fraction", "eval.psnr_cap"}) {
            t.at(k).identity = false;
        }
        return t;
    }();
    return table;
}

#undef E2F_DOUBLE
#undef E2F_INT
#undef E2F_BOOL

void require_probability(const char* key, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw UserError(std::string("config key '") + key + "' must lie in [0, 1]");
}

}  // namespace

void RunConfig::finalize() {
    if (image_size < 1) throw UserError("image.size must be positive");
    codec.validate();
    if (image_size % codec.downsample_factor != 0) {
        throw UserError("image.size must be divisible by codec.downsample");
    }
    denoiser.in_channels = codec.latent_channels * 2;
    denoiser.out_channels = codec.latent_channels;
    denoiser.validate();
    const auto latent = image_size / codec.downsample_factor;
    if (latent % (int64_t{1} << (denoiser.levels() - 1)) != 0) {
        throw UserError("latent size " + std::to_string(latent) + " cannot carry " +
                        std::to_string(denoiser.levels()) + " denoiser levels");
    }
    concept_spec.embed_dim = denoiser.embed_dim;
    concept_spec.image_size = image_size;
    concept_spec.image_channels = codec.image_channels;
    concept_spec.validate();
    if (lambda_diff < 0.0 || lambda_perc < 0.0) throw UserError("loss weights must be >= 0");
    require_probability("augment.p", augment.p);
    require_probability("augment.q", augment.q);
    require_probability("denoiser.concept_dropout", concept_dropout);
    if (train.batch_size < 1 || train.steps < 0 || train.checkpoint_every < 1) {
        throw UserError("train.batch_size and train.checkpoint_every must be positive");
    }
    if (sample.steps < 1 || sample.steps > schedule.steps) throw UserError("sample.steps must lie in [1, schedule.steps]");
    if (eval.hip_fraction < 0.0 || eval.hip_fraction > 1.0) throw UserError("eval.hip_fraction must lie in [0, 1]");
    if (data.per_frontal < 1 || data.max_ego < data.per_frontal) {
        throw UserError("data.per_frontal must lie in [1, data.max_ego]");
    }
    if (data.val_percent < 0 || data.val_percent > 100) throw UserError("data.val_percent must lie in [0, 100]");
    build_schedule();
}

NoiseSchedule RunConfig::build_schedule() const {
    return NoiseSchedule::linear(schedule.steps, schedule.beta_start, schedule.beta_end);
}

std::string RunConfig::resolved_text() const {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
    return out;
}

std::string RunConfig::digest() const {
    std::string text;
    for (const auto& [key, field] : fields()) {
        if (field.identity) text += key + " = " + field.get(*this) + "\n";
    }
    return sha256_hex(text);
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw UserError("unknown config key: " + key);
    it->second.set(*this, key, value);
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const auto& item : fields()) out.push_back(item.first);
    return out;
}

RunConfig parse_config(const std::string& text) {
    RunConfig config;
    std::vector<std::string> unknown;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UserError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!fields().contains(key)) {
            unknown.push_back(key);
            continue;
        }
        config.set(key, value);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw UserError(msg);
    }
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UserError("cannot read config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
    std::vector<std::string> unknown;
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw UserError("override '" + item + "' is not key=value");
        const auto key = trim(item.substr(0, eq));
        if (!fields().contains(key)) {
            unknown.push_back(key);
            continue;
        }
        config.set(key, trim(item.substr(eq + 1)));
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw UserError(msg);
    }
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

}  // namespace ego2front
