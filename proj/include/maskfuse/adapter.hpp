#pragma once

#include <map>
#include <string>
#include <vector>

#include "maskfuse/mat.hpp"

namespace maskfuse {

// Low-rank delta for one projection weight. Weights use the x·W row
// convention ([d_in × d_out]); the delta applied there is (up·down)ᵀ.
struct LowRankDelta {
    Mat down;  // [r × d_in]
    Mat up;    // [d_out × r]
};

// Single-concept customization: low-rank deltas on attention projections plus
// layer-wise learned embeddings for the concept's tokens.
struct AdapterSet {
    std::string concept_id;
    int rank = 0;
    double merge_coefficient = 0.7;
    std::vector<std::string> tokens;  // learned tokens, e.g. {"<cat-a>", "<cat-b>"}
    std::map<std::string, LowRankDelta> deltas;  // weight name -> delta
    // token -> cross layer id -> embedding row [1 × D]
    std::map<std::string, std::map<std::string, Mat>> embeddings;

    void validate() const;
    uint64_t content_hash() const;
};

// W + coefficient·(up·down), expressed in the row convention of W.
Mat apply_delta(const Mat& w, const LowRankDelta& d, double coefficient);

void save_adapter(const AdapterSet& a, const std::string& path);
AdapterSet load_adapter(const std::string& path);

// Deterministic synthetic adapter covering the given projection weights and
// cross layers; float32-quantized draws.
AdapterSet synthesize_adapter(const std::string& concept_id,
                              const std::vector<std::string>& tokens, uint64_t seed,
                              const std::map<std::string, std::pair<int, int>>& weight_shapes,
                              const std::vector<std::string>& cross_layers, int ctx_dim,
                              int rank = 2, double merge_coefficient = 0.7);

}  // namespace maskfuse
