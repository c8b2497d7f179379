#pragma once

#include <map>
#include <vector>

#include "maskfuse/backend.hpp"

namespace maskfuse {

// Linear β schedule with cumulative-product ᾱ. Level −1 denotes the clean
// signal (ᾱ = 1): the final sampler transition and the inversion start both
// use it, keeping forward and reverse recurrences exact mirrors.
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alpha_bar;
    int t_train = 0;

    double alpha_bar_at(int t) const {
        if (t == -1) return 1.0;
        if (t < 0 || t >= t_train)
            throw ContractViolation("schedule: timestep " + std::to_string(t) + " out of range");
        return alpha_bar[t];
    }
};

NoiseSchedule make_schedule(int t_train = 1000, double beta_start = 0.00085,
                            double beta_end = 0.012);

struct SamplerConfig {
    int num_steps = 200;
    double guidance_scale = 7.5;
    int inversion_steps = 1000;
    uint64_t seed = 0;
};

// Descending sampler levels: uniform stride over [0, t_train), highest first;
// num_steps must divide t_train. The last entry is always level 0.
std::vector<int> timestep_grid(int num_steps, int t_train = 1000);

// Deterministic DDIM update (η = 0): x₀-prediction then renoising to t_prev.
LatentGrid ddim_step(const LatentGrid& z_t, const LatentGrid& noise_estimate, int t, int t_prev,
                     const NoiseSchedule& schedule);

// Exact algebraic inverse of ddim_step with the same ε (moves to the noisier
// level). Inversion uses it with ε evaluated at the transition's target level.
LatentGrid ddim_invert_step(const LatentGrid& z_prev, const LatentGrid& noise_estimate, int t,
                            int t_prev, const NoiseSchedule& schedule);

LatentGrid cfg_combine(const LatentGrid& noise_uncond, const LatentGrid& noise_cond,
                       double scale);

struct InversionResult {
    std::vector<int> levels;          // ascending; starts at −1 (the clean input)
    std::vector<LatentGrid> latents;  // latents[i] is z at levels[i]
    std::map<int, AttentionRecord> records;  // per visited noise level
};

// Reversed DDIM recurrence from a clean latent, guidance fixed to 1, with the
// requested attention layers recorded at every visited level.
InversionResult ddim_invert(Backend& backend, const LatentGrid& z0, const TextEncoding& text,
                            int steps, const std::set<std::string>& record_spec,
                            const NoiseSchedule& schedule);

// Plain single-prompt DDIM sampling over a descending grid, ending at the
// clean level. guidance != 1 adds an unconditional (empty-prompt) pass per
// step, combined per cfg_combine.
LatentGrid ddim_sample(Backend& backend, const LatentGrid& z_start, const TextEncoding& text,
                       const std::vector<int>& grid, const NoiseSchedule& schedule,
                       double guidance);

void save_inversion(const InversionResult& inv, const std::string& path,
                    const std::map<std::string, std::string>& meta = {});
InversionResult load_inversion(const std::string& path);

// z_T: seeded standard normal in latent space.
LatentGrid draw_initial_latent(int channels, int height, int width, uint64_t seed);

}  // namespace maskfuse
