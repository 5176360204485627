#pragma once

#include "ego2front/config.hpp"
#include "ego2front/datapipe.hpp"
#include "ego2front/toy_data.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

namespace testing {

// Small enough for unit tests to train in seconds.
inline ego2front::RunConfig tiny_config() {
    ego2front::RunConfig c;
    ego2front::apply_overrides(c, {"image.size=32", "denoiser.base_channels=8", "denoiser.multipliers=1,2",
                                   "denoiser.attention_levels=1", "denoiser.embed_dim=16", "denoiser.head_dim=8",
                                   "codec.hidden_channels=8", "concept.backbone_width=16", "train.batch_size=4",
                                   "train.steps=12", "train.codec_steps=20", "train.checkpoint_every=4",
                                   "sample.steps=4"});
    c.finalize();
    return c;
}

// Under 10^4 trainable parameters.
inline ego2front::RunConfig micro_config() {
    ego2front::RunConfig c;
    ego2front::apply_overrides(c, {"image.size=16", "codec.downsample=4", "codec.hidden_channels=4",
                                   "denoiser.base_channels=4", "denoiser.multipliers=1", "denoiser.attention_levels=",
                                   "denoiser.embed_dim=8", "denoiser.head_dim=4", "concept.backbone_width=8",
                                   "train.batch_size=2"});
    c.finalize();
    return c;
}

// Independent bilinear resampler for the recorded transform (zero padding).
inline torch::Tensor reference_warp(const torch::Tensor& plane, const ego2front::FrontalTransform& tf) {
    const auto h = plane.size(0), w = plane.size(1);
    auto src = plane.accessor<float, 2>();
    auto out = torch::zeros_like(plane);
    auto dst = out.accessor<float, 2>();
    const double th = tf.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    auto sample = [&](int64_t y, int64_t x) -> double {
        return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : src[y][x];
    };
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            const double xn = (2.0 * j + 1.0) / w - 1.0, yn = (2.0 * i + 1.0) / h - 1.0;
            const double xs = (c * xn - s * yn) / tf.zoom + 2 * tf.shift_x;
            const double ys = (s * xn + c * yn) / tf.zoom + 2 * tf.shift_y;
            const double px = ((xs + 1.0) * w - 1.0) / 2.0, py = ((ys + 1.0) * h - 1.0) / 2.0;
            const auto x0 = static_cast<int64_t>(std::floor(px)), y0 = static_cast<int64_t>(std::floor(py));
            const double fx = px - x0, fy = py - y0;
            dst[i][j] = static_cast<float>((1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                                           fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1)));
        }
    }
    return out;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("ego2front_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

}  // namespace testing
