#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "maskfuse/eval.hpp"
#include "maskfuse/fusion.hpp"
#include "maskfuse/layout.hpp"
#include "maskfuse/masks.hpp"
#include "maskfuse/schedule.hpp"
#include "maskfuse/service_clients.hpp"
#include "maskfuse/toy_backend.hpp"

namespace maskfuse {

// Where a concept's adapter weights come from: "seed:<n>" synthesizes a
// deterministic adapter, anything else is a weight-archive path.
struct AdapterSource {
    bool synthesize = false;
    uint64_t seed = 0;
    std::string path;
};

AdapterSource parse_adapter_source(const std::string& spec);

struct ConceptConfig {
    std::string id;
    std::vector<std::string> tokens;  // learned-form, e.g. ["<v1>"]
    std::string class_word;
    std::vector<std::string> similar_tokens;
    std::string adapter;  // "seed:<n>" or path
    std::vector<std::string> reference_images;
    std::vector<int> seed_region;        // [x0, y0, x1, y1) on the clustering grid
    std::string mask_source = "reference";  // reference | external | zero
    std::string external_mask;           // PNG path when mask_source == external
};

struct AdapterBuildConfig {
    double merge = 0.7;
    int rank = 2;
};

struct OutputConfig {
    std::string dir = "out";
    int width = 64;  // pixel dimensions; must match the reference image if any
    int height = 64;
    std::vector<int> dump_attention_steps;  // attention archives for viz
    bool dump_masks = true;                 // mask PNGs at every refinement event
};

struct EvalConfig {
    std::string client = "mock";  // mock | http
    std::vector<ColorRule> rules;
    std::vector<std::string> category_prompts;  // default: concept class words
    int expected_total = 0;                     // 0 = number of concepts
    int embed_dim = 3;
    ServiceConfig service;
};

struct RunConfig {
    std::string prompt;
    std::vector<ConceptConfig> concepts;
    std::string reference_image;
    SamplerConfig sampler;
    LayoutConfig layout;
    RefineConfig refine;
    FusionConfig fusion;
    AdapterBuildConfig adapters;
    std::string backend_kind = "toy";
    ToyConfig backend;
    OutputConfig output;
    EvalConfig eval;
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7};
    std::string cache_dir;  // empty: $MASKFUSE_CACHE_DIR, then ".maskfuse-cache"
};

// Strict schema: unknown keys anywhere are ConfigErrors naming the dotted
// path, as are type mismatches and cross-field contradictions.
RunConfig parse_run_config(const nlohmann::json& j);

// Every resolved field in a fixed order; parse(serialize(c)) == c.
nlohmann::ordered_json serialize_run_config(const RunConfig& c);

// "section.key=value" applied to the raw config document before parsing, so
// overrides get the same unknown-key and type checks as the file. Values are
// JSON literals; anything unparseable stands for itself as a string. Array
// elements are addressed by index and must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

std::string resolve_cache_dir(const RunConfig& c);

}  // namespace maskfuse
