#pragma once

#include <memory>

#include "maskfuse/backend.hpp"
#include "maskfuse/codec.hpp"

namespace maskfuse {

struct ToyConfig {
    int channels = 4;
    int d_model = 8;
    int n_heads = 2;
    int ffn_hidden = 16;
    int ctx_dim = 8;
    int max_tokens = 16;
    int factor = 8;       // pixel-per-latent downsample factor
    uint64_t seed = 77;   // weight seed; fixed so fixtures reproduce everywhere
    // weight scales: small enough that the denoiser stays smooth (DDIM
    // inversion must round-trip), large enough that features and ablation
    // effects survive 8-bit image export
    double sigma_w = 0.10;
    double sigma_out = 0.08;
    double sigma_emb = 0.5;
};

// Merge low-rank deltas into a copy of the weight store: W + c·(up·down) per
// adapted weight, expressed in the x·W row convention. Coefficient 0 returns
// the store bitwise unchanged.
std::map<std::string, Mat> merge_adapter(const std::map<std::string, Mat>& base,
                                         const AdapterSet& adapter, double coefficient);

// Deterministic micro attention U-Net: one pooled encoder stage, a mid
// transformer block, and six decoder blocks (0–2 at half resolution, 3–5 at
// full), each block self-attention + cross-attention + tanh FFN with residual
// adds. Attention layer ids: "mid.self", "mid.cross", "dec0.self", ...,
// "dec5.cross". Weights are seeded float32-quantized draws held as doubles;
// all math runs in double.
class ToyBackend : public Backend {
public:
    explicit ToyBackend(ToyConfig cfg = {});

    int latent_channels() const override { return cfg_.channels; }
    int ctx_dim() const override { return cfg_.ctx_dim; }
    int downsample_factor() const override { return cfg_.factor; }
    const ToyConfig& config() const { return cfg_; }

    TextEncoding encode_text(const std::string& prompt) const override;
    TextEncoding encode_tokens(const std::vector<std::string>& tokens) const override;

    std::vector<std::string> layer_ids() const override;
    std::vector<std::string> cross_layer_ids() const override;
    std::pair<int, int> layer_grid(const std::string& layer_id, int height,
                                   int width) const override;

    PredictResult predict_noise(const LatentGrid& z, int t, const TextEncoding& text,
                                const PredictOptions& opt = {}) override;

    void install_adapter(const AdapterSet& adapter) override;
    void remove_adapter() override;
    bool adapter_installed() const override { return adapter_active_; }

    bool supports_loss_gradient() const override { return true; }
    LossGradResult loss_gradient(const LatentGrid& z, int t,
                                 const std::vector<BranchInput>& branches,
                                 const LayoutLossSpec& spec) override;

    LatentGrid encode_image(const Image& pixels) const override;
    Image decode_latent(const LatentGrid& z) const override;

    uint64_t weights_hash() const override;
    void save_weights(const std::string& path) const;
    static ToyBackend from_archive(const std::string& path);

    // Shapes of every adaptable projection weight, for adapter synthesis.
    std::map<std::string, std::pair<int, int>> adapter_weight_shapes() const;

    const Mat& weight(const std::string& name) const;

private:
    struct Pass;  // one forward evaluation on a graph

    void init_weights();
    Mat positional_embedding(int positions, int height, int width) const;
    Mat context_for_layer(const TextEncoding& text, const std::string& cross_layer) const;
    void validate_layer_ids(const PredictOptions& opt) const;

    ToyConfig cfg_;
    ToyCodec codec_;
    std::map<std::string, Mat> weights_;
    // reversible overlay state
    bool adapter_active_ = false;
    std::map<std::string, Mat> saved_;  // originals of overlaid weights
    std::map<std::string, std::map<std::string, Mat>> learned_;  // token -> layer -> row
};

}  // namespace maskfuse
