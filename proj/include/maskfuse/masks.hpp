#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maskfuse/backend.hpp"
#include "maskfuse/prompts.hpp"

namespace maskfuse {

// Binary mask on an attention grid, row-major, values 0/1.
struct MaskGrid {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> cells;

    MaskGrid() = default;
    MaskGrid(int height, int width)
        : h(height), w(width), cells(static_cast<size_t>(height) * width, 0) {}
    uint8_t& at(int y, int x) { return cells[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return cells[static_cast<size_t>(y) * w + x]; }
    size_t count() const;  // number of 1 cells
    bool empty_mask() const { return count() == 0; }
};

// Per-concept masks at one timestep, all on the clustering layer's grid.
struct ConceptMasks {
    int h = 0;
    int w = 0;
    std::vector<std::string> order;  // concept ids, declaration order
    std::map<std::string, MaskGrid> by_concept;

    const MaskGrid& of(const std::string& id) const;
};

struct SegmentationMap {
    int h = 0;
    int w = 0;
    int k = 0;                // effective cluster count (may be below the request)
    std::vector<int> labels;  // h*w, values in [0, k)

    MaskGrid cluster_mask(int label) const;
};

struct RefineConfig {
    bool enabled = true;
    int window_begin = 50;  // sampler steps, inclusive
    int window_end = 80;
    int cadence = 5;
    std::string cluster_layer = "dec5.self";
    uint64_t kmeans_seed = 13;
    int kmeans_max_iter = 100;
    double kmeans_tol = 1e-6;
    int cluster_min_mult = 1;  // k sweeps [min_mult*N, max_mult*N]
    int cluster_max_mult = 2;

    bool refine_at(int sampler_step) const {
        return enabled && sampler_step >= window_begin && sampler_step <= window_end &&
               (sampler_step - window_begin) % cadence == 0;
    }
};

// K-Means over the rows of `points` (k-means++ seeding, Lloyd iterations).
// Empty clusters are dropped and labels compacted in first-occurrence order,
// so the effective k may come out lower than requested.
SegmentationMap kmeans_rows(const Mat& points, int k, int h, int w, uint64_t seed,
                            int max_iter, double tol);

// Rows of the head-averaged self-attention probability matrix are the
// position features.
SegmentationMap cluster_self_attention(const Mat& probs, int k, int h, int w,
                                       const RefineConfig& config);

// IoU; 0 when both masks are empty.
double matching_degree(const MaskGrid& segment, const MaskGrid& prev_mask);

// Every cluster of every clustering with k in
// [cluster_min_mult*n_concepts, cluster_max_mult*n_concepts]
// (k = 1 contributes the whole grid as one candidate).
std::vector<MaskGrid> candidate_segments(const Mat& probs, int n_concepts, int h, int w,
                                         const RefineConfig& config);

struct RefineOutcome {
    ConceptMasks masks;
    std::vector<std::string> warnings;  // per-concept degenerate fallbacks
};

// Algorithm: per concept, best-IoU candidate from its custom branch and from
// the base branch (both matched against the previous mask), unioned; overlap
// cells between concepts' unions are handed back to the previous owner. A
// concept whose candidates all score IoU 0 keeps its previous mask.
RefineOutcome refine_masks(const Mat& probs_base, const std::vector<Mat>& probs_customs,
                           const ConceptMasks& prev, const RefineConfig& config);

// Area-average resample to a power-of-two-related resolution, thresholded at
// 0.5 with ties rounding up.
MaskGrid rescale_mask(const MaskGrid& mask, int target_h, int target_w);

// Joint resample of a disjoint mask set. Downscaling awards each coarse cell
// to the concept with the largest block coverage (declaration order breaks
// ties) provided it meets the 0.5 threshold, so the result stays disjoint;
// upscaling replicates per concept.
ConceptMasks rescale_concept_masks(const ConceptMasks& masks, int target_h, int target_w);

// Initial masks at t = T from the reference inversion's clustering-layer
// record: per concept, the best-IoU candidate against its seed region; the
// overlap rule runs with seed regions standing in for previous masks.
// InitializationError names any concept whose best IoU is 0.
ConceptMasks init_masks_from_inversion(const Mat& ref_probs, int h, int w,
                                       const std::vector<ConceptSpec>& concepts,
                                       const std::map<std::string, MaskGrid>& seed_regions,
                                       const RefineConfig& config);

// Pixel- or attention-space masks supplied externally: rescale, binarize,
// clustering skipped.
ConceptMasks masks_from_external(const std::vector<ConceptSpec>& concepts,
                                 const std::map<std::string, MaskGrid>& supplied, int h, int w);

// All-zero masks (fusion becomes a no-op).
ConceptMasks zero_masks(const std::vector<ConceptSpec>& concepts, int h, int w);

bool masks_disjoint(const ConceptMasks& masks);

// 0/255 single-channel export, e.g. mask_<concept>_<t>.png.
void write_mask_png(const MaskGrid& mask, const std::string& path);
MaskGrid read_mask_png(const std::string& path);

}  // namespace maskfuse
