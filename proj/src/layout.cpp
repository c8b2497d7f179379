#include "maskfuse/layout.hpp"

#include "maskfuse/log.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

ReferenceFeatures reference_features_from_inversion(const InversionResult& inversion,
                                                    const LayoutConfig& config,
                                                    const std::vector<int>& sampler_grid) {
    ReferenceFeatures ref;
    for (int s = config.window_begin; s <= config.window_end; ++s) {
        if (s < 0 || s >= static_cast<int>(sampler_grid.size()))
            throw ConfigError("layout window exceeds the sampler grid");
        const int t = sampler_grid[s];
        auto rec = inversion.records.find(t);
        if (rec == inversion.records.end())
            throw ContractViolation("reference inversion has no record at t=" +
                                    std::to_string(t));
        auto layer = rec->second.layers.find(config.feature_layer);
        if (layer == rec->second.layers.end())
            throw ContractViolation("reference inversion did not record layer '" +
                                    config.feature_layer + "' at t=" + std::to_string(t));
        ref.by_timestep[t] = layer->second.keys;
    }
    return ref;
}

ReferenceFeatures extract_reference_features(Backend& backend, const Image& reference,
                                             const TextEncoding& text, const LayoutConfig& config,
                                             const SamplerConfig& sampler,
                                             const NoiseSchedule& schedule) {
    const LatentGrid z0 = backend.encode_image(reference);
    InversionResult inv = ddim_invert(backend, z0, text, sampler.inversion_steps,
                                      {config.feature_layer}, schedule);
    ReferenceFeatures ref = reference_features_from_inversion(
        inv, config, timestep_grid(sampler.num_steps, schedule.t_train));
    ref.source_id = hash_hex(latent_hash(z0));
    return ref;
}

double layout_loss(const Mat& f_base, const std::vector<Mat>& f_customs, const Mat& f_ref,
                   double alpha) {
    if (f_base.rows() != f_ref.rows() || f_base.cols() != f_ref.cols())
        throw ContractViolation("layout_loss: base/reference feature shape mismatch");
    double loss = frobenius_dist(f_base, f_ref);
    if (!f_customs.empty()) {
        double sum = 0.0;
        for (const Mat& f : f_customs) {
            if (f.rows() != f_ref.rows() || f.cols() != f_ref.cols())
                throw ContractViolation("layout_loss: custom/reference feature shape mismatch");
            sum += frobenius_dist(f, f_ref);
        }
        loss += alpha * sum / static_cast<double>(f_customs.size());
    }
    return loss;
}

AlignResult align_latents(Backend& backend, const LatentGrid& z, int t,
                          const BranchSet& branches, const Mat& f_ref,
                          const LayoutConfig& config, int sampler_step) {
    AlignResult result{z, false, {}, {}};
    if (!config.in_window(sampler_step)) {
        result.skip_reason = "outside window";
        return result;
    }
    if (!backend.supports_loss_gradient()) {
        MF_LOG_WARN("layout alignment disabled: backend does not support loss gradients");
        result.skip_reason = "no gradient capability";
        return result;
    }
    const std::vector<BranchInput> inputs = branch_inputs(branches);
    const LayoutLossSpec spec{config.feature_layer, f_ref, config.alpha, 1.0};
    for (int r = 0; r < config.repeats_per_step; ++r) {
        LossGradResult lg = backend.loss_gradient(result.z, t, inputs, spec);
        result.losses.push_back(lg.loss);
        for (size_t i = 0; i < result.z.data.size(); ++i)
            result.z.data[i] -= config.lambda_step * lg.grad.data[i];
    }
    result.applied = true;
    return result;
}

}  // namespace maskfuse
