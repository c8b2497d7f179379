#pragma once

#include "maskfuse/config.hpp"
#include "maskfuse/fusion.hpp"
#include "maskfuse/layout.hpp"
#include "maskfuse/manifest.hpp"
#include "maskfuse/toy_backend.hpp"

namespace maskfuse {

// Everything run_generation needs, built once per config: backend, resolved
// branches, schedule, reference features (when alignment is on), masks at
// t = T, and the manifest skeleton with the preparation events.
struct PreparedRun {
    RunConfig config;
    ToyBackend backend;
    TokenRegistry registry;
    std::vector<ConceptSpec> concepts;
    BranchSet branches;
    NoiseSchedule schedule;
    std::vector<int> grid;   // descending sampler levels
    int latent_h = 0, latent_w = 0;
    int mask_h = 0, mask_w = 0;  // clustering-layer grid
    ReferenceFeatures ref_features;  // empty when alignment is off
    ConceptMasks init_masks;
    RunManifest base_manifest;
};

// Resolves adapters (naming the concept on failure), runs or cache-loads the
// reference inversion when alignment or reference masks need it, initializes
// masks, and seeds the manifest with content hashes.
PreparedRun prepare_run(const RunConfig& config);

struct GenerationResult {
    ImageU8 image;
    LatentGrid final_latent;
    RunManifest manifest;
    std::string image_path;
    std::string manifest_path;
};

// One seeded sampling loop: align -> (refine) -> inject per step, decode,
// write image + manifest under config.output.dir. A module error aborts the
// run with the manifest flushed for diagnosis, then rethrows.
GenerationResult run_generation(PreparedRun& ctx, uint64_t seed);

struct AblationResult {
    // run tag ("full", "wo_LA", ..., "eq3") -> one result per seed
    std::vector<std::pair<std::string, std::vector<GenerationResult>>> runs;
    std::string table_path;
};

// Full method plus one run per requested variant (subset of
// {LA, SA, CA, MR, Eq3}, each named switch turned off — or, for Eq3, the
// noise baseline turned on), all sharing the config's seed list; emits an
// aligned comparison table under config.output.dir.
AblationResult run_ablation_suite(const RunConfig& config,
                                  const std::vector<std::string>& variants);

}  // namespace maskfuse
