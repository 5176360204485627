#include "ego2front/schedule.hpp"

#include "ego2front/error.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <numbers>
#include <sstream>

namespace ego2front {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (!a.sizes().equals(b.sizes())) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
    }
}

// Broadcasts a per-sample coefficient vector over the trailing dims of x.
torch::Tensor per_sample(const torch::Tensor& coeff, const torch::Tensor& x) {
    std::vector<int64_t> shape(static_cast<size_t>(x.dim()), 1);
    shape[0] = coeff.size(0);
    return coeff.view(shape);
}

torch::Tensor checked_steps(const torch::Tensor& t, const torch::Tensor& x,
                            const NoiseSchedule& schedule) {
    if (t.dim() != 1 || t.size(0) != x.size(0)) {
        throw ShapeError("timestep vector must have one entry per batch row, got " +
                         shape_string(t) + " for batch " + shape_string(x));
    }
    auto tl = t.to(torch::kLong);
    if (tl.numel() > 0) {
        const auto lo = tl.min().item<int64_t>();
        const auto hi = tl.max().item<int64_t>();
        schedule.checked(lo);
        schedule.checked(hi);
    }
    return tl;
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    alpha_bars_.reserve(betas_.size());
    double running = 1.0;
    for (double b : betas_) {
        running *= (1.0 - b);
        alpha_bars_.push_back(running);
    }
}

NoiseSchedule NoiseSchedule::linear(int64_t steps, double beta_start, double beta_end) {
    if (steps < 1) throw RangeError("schedule: step count must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        std::ostringstream os;
        os << "schedule: require 0 < beta_start <= beta_end < 1, got " << beta_start << ", "
           << beta_end;
        throw RangeError(os.str());
    }
    std::vector<double> betas(static_cast<size_t>(steps));
    for (int64_t i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas[static_cast<size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    NoiseSchedule s(std::move(betas));
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    return s;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw RangeError("schedule: step count must be >= 1");
    for (double b : betas) {
        if (!(b >= 0.0 && b < 1.0)) throw RangeError("schedule: betas must lie in [0, 1)");
    }
    return NoiseSchedule(std::move(betas));
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    if (t == 0) return 1.0;
    return alpha_bars_.at(static_cast<size_t>(checked(t) - 1));
}

int64_t NoiseSchedule::checked(int64_t t) const {
    if (t < 1 || t > steps()) {
        throw RangeError("timestep " + std::to_string(t) + " outside [1, " +
                         std::to_string(steps()) + "]");
    }
    return t;
}

torch::Tensor NoiseSchedule::alpha_bar_at(const torch::Tensor& t, torch::ScalarType dtype) const {
    auto table = torch::tensor(std::vector<double>(alpha_bars_.begin(), alpha_bars_.end()),
                               torch::kFloat64);
    return table.index_select(0, t.to(torch::kLong) - 1).to(dtype);
}

NoiseSchedule build_linear_schedule(int64_t steps, double beta_start, double beta_end) {
    return NoiseSchedule::linear(steps, beta_start, beta_end);
}

torch::Tensor forward_noise(const torch::Tensor& z0, int64_t t, const torch::Tensor& eps,
                            const NoiseSchedule& schedule) {
    require_same_shape(z0, eps, "forward_noise");
    const double ab = schedule.alpha_bar(schedule.checked(t));
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor forward_noise(const torch::Tensor& z0, const torch::Tensor& t,
                            const torch::Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(z0, eps, "forward_noise");
    const auto steps = checked_steps(t, z0, schedule);
    const auto ab = per_sample(schedule.alpha_bar_at(steps, torch::kFloat64), z0);
    return (ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps).to(z0.scalar_type());
}

LatentTensor forward_noise(const LatentTensor& z0, int64_t t, const LatentTensor& eps,
                           const NoiseSchedule& schedule) {
    return {forward_noise(z0.data, t, eps.data, schedule), z0.scale};
}

torch::Tensor predict_x0_from_eps(const torch::Tensor& z_t, const torch::Tensor& eps_hat,
                                  int64_t t, const NoiseSchedule& schedule) {
    require_same_shape(z_t, eps_hat, "predict_x0_from_eps");
    const double ab = schedule.alpha_bar(schedule.checked(t));
    return (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

torch::Tensor predict_x0_from_eps(const torch::Tensor& z_t, const torch::Tensor& eps_hat,
                                  const torch::Tensor& t, const NoiseSchedule& schedule) {
    require_same_shape(z_t, eps_hat, "predict_x0_from_eps");
    const auto steps = checked_steps(t, z_t, schedule);
    const auto ab = per_sample(schedule.alpha_bar_at(steps, z_t.scalar_type()), z_t);
    return (z_t - (1.0 - ab).sqrt() * eps_hat) / ab.sqrt();
}

LatentTensor predict_x0_from_eps(const LatentTensor& z_t, const LatentTensor& eps_hat,
                                 int64_t t, const NoiseSchedule& schedule) {
    return {predict_x0_from_eps(z_t.data, eps_hat.data, t, schedule), z_t.scale};
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, double max_period) {
    const int64_t half = dim / 2;
    auto freqs = torch::exp(-std::log(max_period) *
                            torch::arange(half, torch::kFloat32) / static_cast<double>(half));
    auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::cos(args), torch::sin(args)}, 1);
    if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1})}, 1);
    return emb;
}

SamplerKind parse_sampler_kind(const std::string& name) {
    if (name == "ancestral") return SamplerKind::Ancestral;
    if (name == "strided") return SamplerKind::Strided;
    throw UserError("unknown sampler '" + name + "' (expected ancestral or strided)");
}

std::string to_string(SamplerKind kind) {
    return kind == SamplerKind::Ancestral ? "ancestral" : "strided";
}

std::vector<int64_t> sampling_timesteps(int64_t total_steps, int64_t steps) {
    if (steps < 1 || steps > total_steps) {
        throw RangeError("sampling steps must lie in [1, " + std::to_string(total_steps) +
                         "], got " + std::to_string(steps));
    }
    std::vector<int64_t> ts;
    ts.reserve(static_cast<size_t>(steps));
    if (steps == 1) {
        ts.push_back(total_steps);
        return ts;
    }
    for (int64_t k = 0; k < steps; ++k) {
        // Integer rounding of an evenly spaced grid; distinct because steps <= T.
        const int64_t offset = (k * (total_steps - 1) * 2 + (steps - 1)) / (2 * (steps - 1));
        ts.push_back(total_steps - offset);
    }
    return ts;
}

torch::Tensor denoise_from(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                           torch::Tensor z_start, std::span<const int64_t> timesteps,
                           SamplerKind kind, uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = make_generator(seed);
    auto z = std::move(z_start);
    for (size_t i = 0; i < timesteps.size(); ++i) {
        const int64_t t = schedule.checked(timesteps[i]);
        const int64_t t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
        if (t_prev >= t) throw RangeError("sampling timesteps must be strictly decreasing");

        auto eps_hat = predictor(z, t);
        if (!eps_hat.defined() || !eps_hat.sizes().equals(z.sizes())) {
            throw ShapeError("denoiser returned " +
                             (eps_hat.defined() ? shape_string(eps_hat) : std::string("nothing")) +
                             " for latent " + shape_string(z) + " at t=" + std::to_string(t));
        }
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = schedule.alpha_bar(t_prev);
        auto x0 = predict_x0_from_eps(z, eps_hat, t, schedule);

        if (kind == SamplerKind::Strided) {
            z = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps_hat;
            continue;
        }
        // Posterior q(z_prev | z_t, x0) for a possibly strided pair of steps.
        const double step_alpha = ab / ab_prev;
        const double step_beta = 1.0 - step_alpha;
        const double coef_x0 = std::sqrt(ab_prev) * step_beta / (1.0 - ab);
        const double coef_zt = std::sqrt(step_alpha) * (1.0 - ab_prev) / (1.0 - ab);
        z = coef_x0 * x0 + coef_zt * z;
        if (t_prev > 0) {
            const double var = step_beta * (1.0 - ab_prev) / (1.0 - ab);
            z = z + std::sqrt(var) * torch::randn(z.sizes(), gen, z.options());
        }
    }
    return z;
}

torch::Tensor sample(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                     torch::IntArrayRef shape, const SamplerOptions& options,
                     torch::ScalarType dtype) {
    const auto ts = sampling_timesteps(schedule.steps(), options.steps);
    auto gen = make_generator(options.seed);
    auto z = torch::randn(shape, gen, torch::TensorOptions().dtype(dtype));
    return denoise_from(predictor, schedule, std::move(z), ts, options.kind,
                        mix_seed(options.seed, 0x5eed));
}

at::Generator make_generator(uint64_t seed) {
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

}  // namespace ego2front
