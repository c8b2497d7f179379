#pragma once

#include "maskfuse/branches.hpp"
#include "maskfuse/schedule.hpp"

namespace maskfuse {

// Self-attention keys of the designated layer from the reference inversion,
// exposed at the sampler's grid points inside the active window.
struct ReferenceFeatures {
    std::map<int, Mat> by_timestep;  // train-timestep -> F_ref
    std::string source_id;           // reference image content hash
};

struct LayoutConfig {
    bool enabled = true;
    double alpha = 1.0;
    double lambda_step = 10.0;
    int window_begin = 0;  // sampler-step indices, inclusive
    int window_end = 60;
    std::string feature_layer = "dec0.self";
    int repeats_per_step = 1;

    bool in_window(int sampler_step) const {
        return sampler_step >= window_begin && sampler_step <= window_end;
    }
};

// Slice an inversion's records down to the sampler grid points inside the
// window. The inversion must have recorded config.feature_layer at every
// visited t.
ReferenceFeatures reference_features_from_inversion(const InversionResult& inversion,
                                                    const LayoutConfig& config,
                                                    const std::vector<int>& sampler_grid);

// Convenience composition: encode + invert + slice in one call. The pipeline
// uses the parts directly so it can cache the inversion.
ReferenceFeatures extract_reference_features(Backend& backend, const Image& reference,
                                             const TextEncoding& text, const LayoutConfig& config,
                                             const SamplerConfig& sampler,
                                             const NoiseSchedule& schedule);

// ‖F_base − F_ref‖₂ + alpha · (1/N) Σ_i ‖F_Vi − F_ref‖₂ (Frobenius norms);
// the custom term is 0 when N = 0.
double layout_loss(const Mat& f_base, const std::vector<Mat>& f_customs, const Mat& f_ref,
                   double alpha);

struct AlignResult {
    LatentGrid z;
    bool applied = false;                // false outside window / capability missing
    std::vector<double> losses;          // loss before each applied update
    std::string skip_reason;
};

// One (or repeats_per_step) gradient-descent corrections of z_t against the
// reference features; identity outside the window; degrades to identity with
// a warning when the backend cannot produce gradients.
AlignResult align_latents(Backend& backend, const LatentGrid& z, int t,
                          const BranchSet& branches, const Mat& f_ref,
                          const LayoutConfig& config, int sampler_step);

}  // namespace maskfuse
