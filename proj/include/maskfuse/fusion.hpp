#pragma once

#include "maskfuse/branches.hpp"
#include "maskfuse/masks.hpp"
#include "maskfuse/schedule.hpp"

namespace maskfuse {

struct FusionConfig {
    bool enabled = true;
    bool fuse_self = true;
    bool fuse_cross = true;
    bool noise_baseline = false;  // blend noise predictions instead of features

    bool feature_mode() const { return enabled && !noise_baseline; }
};

// Decoder attention layers the hook rewrites (the mid block is left alone).
std::vector<std::string> fusion_layers(const Backend& backend, const FusionConfig& config);

// Row select per Eq-style masking: position rows covered by a concept's mask
// come from that concept's branch, everything else stays the base row. Masks
// must be disjoint and already at the layer's grid; no arithmetic touches the
// copied rows, so all-zero masks return the base matrix bit-identically.
Mat fuse_features(const Mat& h_base, const std::vector<const Mat*>& h_customs,
                  const std::vector<const MaskGrid*>& masks);

// Same select on noise latents (the fusion baseline):per-position channel rows
// swapped under the concept masks, base keeps the complement.
LatentGrid fuse_noise(const LatentGrid& eps_base, const std::vector<const LatentGrid*>& eps_customs,
                      const ConceptMasks& masks);

struct StepOutcome {
    LatentGrid z_next;
    ConceptMasks masks;  // refined on cadence steps, otherwise the input set
    bool refined = false;
    std::vector<std::string> refine_warnings;
    // base followed by customs in declaration order; the base entry is the
    // conditional prediction actually used (hooked in feature mode)
    std::vector<uint64_t> branch_noise_hashes;
    uint64_t fused_noise_hash = 0;
    AttentionRecord base_record;                 // filled when extra_record asks
    std::vector<AttentionRecord> custom_records;
};

// One full sampler transition: custom passes, cadence mask refinement (plain
// base probe supplies the base attention), mask-guided injection into the
// conditional and unconditional base passes, CFG, DDIM update. With no
// concepts, zero masks, or fusion disabled the trajectory is bit-identical to
// plain CFG-DDIM sampling.
StepOutcome fused_step(Backend& backend, const LatentGrid& z, int t, int t_prev,
                       const BranchSet& branches, const ConceptMasks& masks,
                       const FusionConfig& fusion, const RefineConfig& refine, int sampler_step,
                       double guidance, const NoiseSchedule& schedule,
                       const std::set<std::string>& extra_record = {});

}  // namespace maskfuse
