#pragma once

#include "ego2front/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace ego2front {

// Per-step variances of the forward process. Steps are 1-indexed:
// beta(1) .. beta(T). alpha_bar(0) is defined as 1.
class NoiseSchedule {
public:
    // Linear interpolation beta_start -> beta_end over T steps.
    static NoiseSchedule linear(int64_t steps, double beta_start, double beta_end);

    // Arbitrary betas in [0, 1). Zero entries give a degenerate noise-free
    // schedule, useful for testing.
    static NoiseSchedule from_betas(std::vector<double> betas);

    int64_t steps() const { return static_cast<int64_t>(betas_.size()); }
    double beta(int64_t t) const { return betas_.at(checked(t) - 1); }
    double alpha(int64_t t) const { return 1.0 - beta(t); }
    double alpha_bar(int64_t t) const;

    std::span<const double> betas() const { return betas_; }
    std::span<const double> alpha_bars() const { return alpha_bars_; }

    // Linear endpoints when built by linear(); zero otherwise.
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    // alpha_bar gathered for a tensor of 1-indexed steps, in `dtype`.
    torch::Tensor alpha_bar_at(const torch::Tensor& t, torch::ScalarType dtype) const;

    // Throws RangeError unless 1 <= t <= T.
    int64_t checked(int64_t t) const;

private:
    explicit NoiseSchedule(std::vector<double> betas);

    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
};

NoiseSchedule build_linear_schedule(int64_t steps = 1000, double beta_start = 1e-4,
                                    double beta_end = 0.02);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
torch::Tensor forward_noise(const torch::Tensor& z0, int64_t t, const torch::Tensor& eps,
                            const NoiseSchedule& schedule);
// Per-sample steps: `t` is an int64 vector with one entry per batch row.
torch::Tensor forward_noise(const torch::Tensor& z0, const torch::Tensor& t,
                            const torch::Tensor& eps, const NoiseSchedule& schedule);
LatentTensor forward_noise(const LatentTensor& z0, int64_t t, const LatentTensor& eps,
                           const NoiseSchedule& schedule);

// Algebraic inverse of forward_noise given a noise estimate.
torch::Tensor predict_x0_from_eps(const torch::Tensor& z_t, const torch::Tensor& eps_hat,
                                  int64_t t, const NoiseSchedule& schedule);
torch::Tensor predict_x0_from_eps(const torch::Tensor& z_t, const torch::Tensor& eps_hat,
                                  const torch::Tensor& t, const NoiseSchedule& schedule);
LatentTensor predict_x0_from_eps(const LatentTensor& z_t, const LatentTensor& eps_hat,
                                 int64_t t, const NoiseSchedule& schedule);

// Sinusoidal features of the (1-indexed) step, shape (N, dim).
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, double max_period = 10000.0);

// Maps (z_t, t) to a noise estimate of identical shape. Conditioning is bound
// by the caller.
using NoisePredictor = std::function<torch::Tensor(const torch::Tensor& z_t, int64_t t)>;

enum class SamplerKind {
    Ancestral,  // DDPM posterior sampling, stochastic between steps
    Strided,    // deterministic (eta = 0) stepping over a subsequence
};

SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(SamplerKind kind);

struct SamplerOptions {
    SamplerKind kind = SamplerKind::Ancestral;
    int64_t steps = 50;
    uint64_t seed = 0;
};

// Strictly decreasing subsequence of {T..1}: starts at T and ends at 1 when
// steps >= 2; {T} for a single step.
std::vector<int64_t> sampling_timesteps(int64_t total_steps, int64_t steps);

// Runs the reverse process from `z_start`, assumed to be at timesteps[0].
torch::Tensor denoise_from(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                           torch::Tensor z_start, std::span<const int64_t> timesteps,
                           SamplerKind kind, uint64_t seed);

// Draws pure Gaussian noise of `shape` from `seed` and denoises it.
torch::Tensor sample(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                     torch::IntArrayRef shape, const SamplerOptions& options,
                     torch::ScalarType dtype = torch::kFloat32);

// Seeded CPU generator; all randomness in the library goes through these.
at::Generator make_generator(uint64_t seed);

// Mixes several values into one 64-bit seed (splitmix64 chain).
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c);

}  // namespace ego2front
