#pragma once

#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "maskfuse/adapter.hpp"
#include "maskfuse/image.hpp"
#include "maskfuse/latent.hpp"
#include "maskfuse/text.hpp"

namespace maskfuse {

// What one attention layer contributed to a pass: projected keys F (heads side
// by side), head-averaged probabilities A (row-stochastic), and the layer's
// effective output h (the override, where one was applied). Records are
// written once and never mutated.
struct LayerRecord {
    Mat keys;    // [P_ctx × d_model]
    Mat probs;   // [P × P_ctx]
    Mat output;  // [P × d_model]
};

struct AttentionRecord {
    std::map<std::string, LayerRecord> layers;  // "dec0.self" etc.
};

// Static replacement of a layer's output feature map.
using OverrideMap = std::map<std::string, Mat>;

// Dynamic replacement: called with each attention layer's freshly computed
// output (after any static override); the returned matrix is what downstream
// computation sees. Used to fuse features into the base pass layer by layer.
using LayerHook = std::function<Mat(const std::string& layer_id, const Mat& h_out)>;

struct PredictOptions {
    std::set<std::string> record_spec;
    const OverrideMap* overrides = nullptr;
    const LayerHook* hook = nullptr;
};

struct PredictResult {
    LatentGrid noise;
    AttentionRecord record;
};

// One denoiser pass input for a gradient evaluation: prompt encoding plus the
// adapter merged for that branch (null for the base branch).
struct BranchInput {
    const TextEncoding* text = nullptr;
    const AdapterSet* adapter = nullptr;
};

// ‖F_base − ref‖₂ + alpha · (1/N) Σ_i ‖F_Vi − ref‖₂, over the keys recorded at
// layer_id, all times loss_scale.
struct LayoutLossSpec {
    std::string layer_id;
    Mat reference;
    double alpha = 1.0;
    double loss_scale = 1.0;
};

struct LossGradResult {
    double loss = 0.0;
    LatentGrid grad;
};

// Denoiser contract. Implementations must be deterministic: identical inputs,
// weights, and seed give bit-identical outputs and records. Adapter install /
// remove is a reversible overlay on a single weight store (branches swap
// adapters in and out sequentially rather than holding N merged copies).
class Backend {
public:
    virtual ~Backend() = default;

    virtual int latent_channels() const = 0;
    virtual int ctx_dim() const = 0;
    virtual int downsample_factor() const = 0;

    virtual TextEncoding encode_text(const std::string& prompt) const = 0;
    virtual TextEncoding encode_tokens(const std::vector<std::string>& tokens) const = 0;

    // All attention layer ids, forward order; cross layers only.
    virtual std::vector<std::string> layer_ids() const = 0;
    virtual std::vector<std::string> cross_layer_ids() const = 0;
    // Spatial grid (h, w) a layer operates on for a given latent size.
    virtual std::pair<int, int> layer_grid(const std::string& layer_id, int height,
                                           int width) const = 0;

    virtual PredictResult predict_noise(const LatentGrid& z, int t, const TextEncoding& text,
                                        const PredictOptions& opt = {}) = 0;

    virtual void install_adapter(const AdapterSet& adapter) = 0;
    virtual void remove_adapter() = 0;
    virtual bool adapter_installed() const = 0;

    // Gradient support is optional; callers must degrade (disable layout
    // alignment) when absent.
    virtual bool supports_loss_gradient() const { return false; }
    virtual LossGradResult loss_gradient(const LatentGrid& z, int t,
                                         const std::vector<BranchInput>& branches,
                                         const LayoutLossSpec& spec) {
        (void)z; (void)t; (void)branches; (void)spec;
        throw CapabilityError("backend does not support loss gradients");
    }

    virtual LatentGrid encode_image(const Image& pixels) const = 0;
    // Unclamped linear decode; clamp to [0,1] only at final export.
    virtual Image decode_latent(const LatentGrid& z) const = 0;

    virtual uint64_t weights_hash() const = 0;
};

}  // namespace maskfuse
