#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskfuse/errors.hpp"

namespace maskfuse {

// One record per (step, module); scalar summaries only. Preparation events
// carry step = -1.
struct ManifestEvent {
    int step = -1;       // sampler step index
    int t = -1;          // train timestep
    std::string module;  // inversion, init_masks, align, refine, fuse, noise_fuse, inject
    std::string layer;   // per-layer fusion events only
    std::string note;
    std::map<std::string, double> values;
};

struct RunManifest {
    nlohmann::ordered_json config;  // resolved snapshot
    uint64_t seed = 0;
    std::string backend_weights_hash;
    std::map<std::string, std::string> adapter_hashes;  // concept id -> hash
    std::string reference_features_hash;                // empty: alignment off
    std::vector<ManifestEvent> events;
    std::string output_image_hash;
    std::string output_latent_hash;
    std::string image_path;
    std::string status = "incomplete";  // complete | aborted: <reason>

    std::vector<const ManifestEvent*> events_of(const std::string& module) const;
    const ManifestEvent* event_at(const std::string& module, int step) const;  // first match

    nlohmann::ordered_json to_json() const;
    static RunManifest from_json(const nlohmann::ordered_json& j);
    void save(const std::string& path) const;
    static RunManifest load(const std::string& path);
};

}  // namespace maskfuse
