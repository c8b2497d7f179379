#pragma once

#include <string>
#include <vector>

#include "maskfuse/image.hpp"
#include "maskfuse/masks.hpp"

namespace maskfuse {

// Static figure exports from a finished run directory (manifest + attention
// dumps + mask PNGs). Everything is recomputed deterministically from the
// artifacts, so re-rendering the same run gives byte-identical files.
struct VizResult {
    std::vector<std::string> files;  // written figure paths
};

// Cluster-colored self-attention map: positions clustered (seeded k-means over
// the probability rows), each cell painted its cluster's palette color.
ImageU8 render_cluster_map(const Mat& probs, int grid_h, int grid_w, int k,
                           const RefineConfig& config, int cell_px);

// Head-averaged foreground cross-attention heatmap: per position, the mean
// probability mass on the concept's token columns, max-normalized onto a
// two-stop gradient.
ImageU8 render_cross_heatmap(const Mat& probs, const std::vector<int>& slots, int grid_h,
                             int grid_w, int cell_px);

// Horizontal strip of one concept's mask across the refinement cadence steps.
ImageU8 render_mask_strip(const std::vector<MaskGrid>& masks, int cell_px, int gap_px);

// Renders every figure for one seed of a run: per dumped step a self-attention
// panel per branch and a cross-attention heatmap per concept, plus one mask
// strip per concept covering the refinement steps. Throws ConfigError with
// guidance when the run was produced without the needed dumps.
VizResult render_run_viz(const std::string& run_dir, uint64_t seed,
                         const std::string& out_dir = "");

}  // namespace maskfuse
