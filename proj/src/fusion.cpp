#include "maskfuse/fusion.hpp"

#include <algorithm>

namespace maskfuse {

std::vector<std::string> fusion_layers(const Backend& backend, const FusionConfig& config) {
    std::vector<std::string> out;
    if (!config.feature_mode()) return out;
    for (const std::string& id : backend.layer_ids()) {
        if (id.rfind("dec", 0) != 0) continue;  // decoder only
        const bool is_cross = id.size() >= 6 && id.compare(id.size() - 6, 6, ".cross") == 0;
        if (is_cross ? config.fuse_cross : config.fuse_self) out.push_back(id);
    }
    return out;
}

Mat fuse_features(const Mat& h_base, const std::vector<const Mat*>& h_customs,
                  const std::vector<const MaskGrid*>& masks) {
    if (h_customs.size() != masks.size())
        throw ContractViolation("fuse_features: one mask per custom branch required");
    const int p = h_base.rows();
    for (size_t i = 0; i < h_customs.size(); ++i) {
        if (h_customs[i]->rows() != p || h_customs[i]->cols() != h_base.cols())
            throw ContractViolation("fuse_features: branch feature shape mismatch");
        if (static_cast<int>(masks[i]->cells.size()) != p)
            throw ContractViolation("fuse_features: mask resolution does not match the layer");
    }
    Mat out = h_base;
    for (size_t i = 0; i < h_customs.size(); ++i)
        for (int row = 0; row < p; ++row)
            if (masks[i]->cells[row])
                for (int j = 0; j < out.cols(); ++j) out(row, j) = (*h_customs[i])(row, j);
    return out;
}

LatentGrid fuse_noise(const LatentGrid& eps_base, const std::vector<const LatentGrid*>& eps_customs,
                      const ConceptMasks& masks) {
    if (eps_customs.size() != masks.order.size())
        throw ContractViolation("fuse_noise: one noise latent per concept required");
    if (masks.h != eps_base.height || masks.w != eps_base.width)
        throw ContractViolation("fuse_noise: mask resolution does not match the latent");
    for (const LatentGrid* e : eps_customs)
        if (!e->same_shape(eps_base)) throw ContractViolation("fuse_noise: latent shape mismatch");

    LatentGrid out = eps_base;
    for (size_t i = 0; i < eps_customs.size(); ++i) {
        const MaskGrid& m = masks.of(masks.order[i]);
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                if (m.at(y, x))
                    for (int c = 0; c < out.channels; ++c)
                        out.at(c, y, x) = eps_customs[i]->at(c, y, x);
    }
    return out;
}

StepOutcome fused_step(Backend& backend, const LatentGrid& z, int t, int t_prev,
                       const BranchSet& branches, const ConceptMasks& masks,
                       const FusionConfig& fusion, const RefineConfig& refine, int sampler_step,
                       double guidance, const NoiseSchedule& schedule,
                       const std::set<std::string>& extra_record) {
    const int n = branches.n();
    const bool do_refine = n > 0 && refine.refine_at(sampler_step);
    const std::vector<std::string> flayers =
        n > 0 ? fusion_layers(backend, fusion) : std::vector<std::string>{};

    std::set<std::string> custom_spec = extra_record;
    custom_spec.insert(flayers.begin(), flayers.end());
    if (do_refine) custom_spec.insert(refine.cluster_layer);

    StepOutcome out;
    std::vector<PredictResult> customs =
        n > 0 ? run_custom_branches(backend, z, t, branches, custom_spec)
              : std::vector<PredictResult>{};

    out.masks = masks;
    if (do_refine) {
        const auto [ch, cw] = backend.layer_grid(refine.cluster_layer, z.height, z.width);
        if (masks.h != ch || masks.w != cw)
            throw ContractViolation("fused_step: masks are not on the clustering grid");
        PredictOptions probe_opt;
        probe_opt.record_spec = {refine.cluster_layer};
        PredictResult probe = backend.predict_noise(z, t, branches.base_text, probe_opt);
        std::vector<Mat> probs;
        for (int i = 0; i < n; ++i)
            probs.push_back(customs[i].record.layers.at(refine.cluster_layer).probs);
        RefineOutcome ro =
            refine_masks(probe.record.layers.at(refine.cluster_layer).probs, probs, masks, refine);
        out.masks = std::move(ro.masks);
        out.refine_warnings = std::move(ro.warnings);
        out.refined = true;
    }

    // per-layer custom features and masks, resampled once per distinct grid
    std::map<std::pair<int, int>, ConceptMasks> grid_masks;
    std::map<std::string, std::vector<const Mat*>> feats;
    std::map<std::string, std::vector<const MaskGrid*>> layer_masks;
    if (!flayers.empty()) {
        for (const std::string& layer : flayers) {
            const std::pair<int, int> g = backend.layer_grid(layer, z.height, z.width);
            if (!grid_masks.count(g)) grid_masks[g] = rescale_concept_masks(out.masks, g.first, g.second);
        }
        for (const std::string& layer : flayers) {
            const std::pair<int, int> g = backend.layer_grid(layer, z.height, z.width);
            const ConceptMasks& scaled = grid_masks.at(g);
            for (int i = 0; i < n; ++i) {
                feats[layer].push_back(&customs[i].record.layers.at(layer).output);
                layer_masks[layer].push_back(&scaled.of(scaled.order[i]));
            }
        }
    }
    const LayerHook hook = [&](const std::string& id, const Mat& h) -> Mat {
        auto it = feats.find(id);
        if (it == feats.end()) return h;
        return fuse_features(h, it->second, layer_masks.at(id));
    };

    PredictOptions cond_opt;
    cond_opt.record_spec = extra_record;
    if (!feats.empty()) cond_opt.hook = &hook;
    PredictResult cond = backend.predict_noise(z, t, branches.base_text, cond_opt);

    LatentGrid eps = cond.noise;
    if (fusion.enabled && fusion.noise_baseline && n > 0) {
        const ConceptMasks latent_masks = rescale_concept_masks(out.masks, z.height, z.width);
        std::vector<const LatentGrid*> eps_customs;
        for (int i = 0; i < n; ++i) eps_customs.push_back(&customs[i].noise);
        eps = fuse_noise(cond.noise, eps_customs, latent_masks);
    }
    if (guidance != 1.0) {
        const TextEncoding uncond_text = backend.encode_text("");
        PredictOptions un_opt;
        if (!feats.empty()) un_opt.hook = &hook;
        PredictResult un = backend.predict_noise(z, t, uncond_text, un_opt);
        eps = cfg_combine(un.noise, eps, guidance);
    }
    out.z_next = ddim_step(z, eps, t, t_prev, schedule);

    out.branch_noise_hashes.push_back(latent_hash(cond.noise));
    for (const PredictResult& c : customs) out.branch_noise_hashes.push_back(latent_hash(c.noise));
    out.fused_noise_hash = latent_hash(eps);
    if (!extra_record.empty()) {
        out.base_record = std::move(cond.record);
        for (PredictResult& c : customs) out.custom_records.push_back(std::move(c.record));
    }
    return out;
}

}  // namespace maskfuse
