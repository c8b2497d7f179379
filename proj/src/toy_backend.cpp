#include "maskfuse/toy_backend.hpp"

#include <algorithm>
#include <cmath>

#include "maskfuse/archive.hpp"
#include "maskfuse/attention.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

namespace {

const char* kBlocks[] = {"mid", "dec0", "dec1", "dec2", "dec3", "dec4", "dec5"};

bool is_lo_res_block(const std::string& block) {
    return block == "mid" || block == "dec0" || block == "dec1" || block == "dec2";
}

std::string block_of(const std::string& layer_id) {
    const size_t dot = layer_id.find('.');
    return dot == std::string::npos ? layer_id : layer_id.substr(0, dot);
}

double f32_quantized(double v) { return static_cast<double>(static_cast<float>(v)); }

Mat seeded_f32_mat(uint64_t seed, const std::string& label, int rows, int cols, double sigma) {
    DeterministicRng rng(seed, label);
    Mat m(rows, cols);
    for (double& v : m.raw()) v = f32_quantized(sigma * rng.normal());
    return m;
}

Mat time_embedding(int t, int dim) {
    Mat m(1, dim);
    for (int k = 0; k < dim / 2; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / dim);
        m(0, 2 * k) = std::sin(t * freq);
        m(0, 2 * k + 1) = std::cos(t * freq);
    }
    return m;
}

// 2×2 average pool over positions, as a [P/4 × P] matrix.
Mat pool_matrix(int h, int w) {
    const int hl = h / 2, wl = w / 2;
    Mat m(hl * wl, h * w);
    for (int y = 0; y < hl; ++y)
        for (int x = 0; x < wl; ++x)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    m(y * wl + x, (2 * y + dy) * w + (2 * x + dx)) = 0.25;
    return m;
}

// Nearest-neighbour 2× upsample over positions, as a [P × P/4] matrix.
Mat upsample_matrix(int h, int w) {
    const int hl = h / 2, wl = w / 2;
    Mat m(h * w, hl * wl);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) m(y * w + x, (y / 2) * wl + (x / 2)) = 1.0;
    return m;
}

}  // namespace

std::map<std::string, Mat> merge_adapter(const std::map<std::string, Mat>& base,
                                         const AdapterSet& adapter, double coefficient) {
    if (coefficient < 0.0 || coefficient > 1.0)
        throw ContractViolation("merge_adapter: coefficient outside [0, 1]");
    std::map<std::string, Mat> out = base;
    if (coefficient == 0.0) return out;
    for (const auto& [name, delta] : adapter.deltas) {
        auto it = out.find(name);
        if (it == out.end())
            throw ContractViolation("merge_adapter: no weight named '" + name + "'");
        it->second = apply_delta(it->second, delta, coefficient);
    }
    return out;
}

ToyBackend::ToyBackend(ToyConfig cfg)
    : cfg_(cfg), codec_(cfg.channels, cfg.factor, cfg.seed) {
    if (cfg_.d_model % cfg_.n_heads != 0)
        throw ConfigError("toy backend: n_heads must divide d_model");
    init_weights();
}

void ToyBackend::init_weights() {
    const uint64_t s = cfg_.seed;
    const int d = cfg_.d_model;
    const double sw = cfg_.sigma_w;
    weights_["in_proj"] = seeded_f32_mat(s, "w:in_proj", cfg_.channels, d, sw);
    weights_["te_proj"] = seeded_f32_mat(s, "w:te_proj", d, d, sw);
    weights_["out_proj"] = seeded_f32_mat(s, "w:out_proj", d, cfg_.channels, cfg_.sigma_out);
    for (const char* b : kBlocks) {
        const std::string p(b);
        weights_[p + ".self.wq"] = seeded_f32_mat(s, "w:" + p + ".self.wq", d, d, sw);
        weights_[p + ".self.wk"] = seeded_f32_mat(s, "w:" + p + ".self.wk", d, d, sw);
        weights_[p + ".self.wv"] = seeded_f32_mat(s, "w:" + p + ".self.wv", d, d, sw);
        weights_[p + ".cross.wq"] = seeded_f32_mat(s, "w:" + p + ".cross.wq", d, d, sw);
        weights_[p + ".cross.wk"] =
            seeded_f32_mat(s, "w:" + p + ".cross.wk", cfg_.ctx_dim, d, sw);
        weights_[p + ".cross.wv"] =
            seeded_f32_mat(s, "w:" + p + ".cross.wv", cfg_.ctx_dim, d, sw);
        weights_[p + ".ffn.w1"] = seeded_f32_mat(s, "w:" + p + ".ffn.w1", d, cfg_.ffn_hidden, sw);
        weights_[p + ".ffn.w2"] = seeded_f32_mat(s, "w:" + p + ".ffn.w2", cfg_.ffn_hidden, d, sw);
    }
}

Mat ToyBackend::positional_embedding(int positions, int height, int width) const {
    return seeded_f32_mat(cfg_.seed,
                          "pos:" + std::to_string(height) + "x" + std::to_string(width),
                          positions, cfg_.d_model, cfg_.sigma_emb);
}

TextEncoding ToyBackend::encode_text(const std::string& prompt) const {
    return encode_tokens(tokenize(prompt));
}

TextEncoding ToyBackend::encode_tokens(const std::vector<std::string>& tokens) const {
    TextEncoding te;
    te.tokens = tokens.empty() ? std::vector<std::string>{""} : tokens;
    if (static_cast<int>(te.tokens.size()) > cfg_.max_tokens)
        throw ContractViolation("text: prompt exceeds the " + std::to_string(cfg_.max_tokens) +
                                "-token toy limit");
    const int L = static_cast<int>(te.tokens.size());
    te.embeddings = Mat(L, cfg_.ctx_dim);
    for (int i = 0; i < L; ++i) {
        te.token_ids.push_back(token_id(te.tokens[i]));
        const Mat tok = seeded_f32_mat(cfg_.seed, "temb:" + te.tokens[i], 1, cfg_.ctx_dim, cfg_.sigma_emb);
        const Mat pos = seeded_f32_mat(cfg_.seed, "tpos:" + std::to_string(i), 1, cfg_.ctx_dim, cfg_.sigma_emb);
        for (int j = 0; j < cfg_.ctx_dim; ++j) te.embeddings(i, j) = tok(0, j) + pos(0, j);
    }
    return te;
}

std::vector<std::string> ToyBackend::layer_ids() const {
    std::vector<std::string> out;
    for (const char* b : kBlocks) {
        out.push_back(std::string(b) + ".self");
        out.push_back(std::string(b) + ".cross");
    }
    return out;
}

std::vector<std::string> ToyBackend::cross_layer_ids() const {
    std::vector<std::string> out;
    for (const char* b : kBlocks) out.push_back(std::string(b) + ".cross");
    return out;
}

std::pair<int, int> ToyBackend::layer_grid(const std::string& layer_id, int height,
                                           int width) const {
    const auto ids = layer_ids();
    if (std::find(ids.begin(), ids.end(), layer_id) == ids.end())
        throw ConfigError("toy backend: unknown layer id '" + layer_id + "'");
    if (is_lo_res_block(block_of(layer_id))) return {height / 2, width / 2};
    return {height, width};
}

void ToyBackend::validate_layer_ids(const PredictOptions& opt) const {
    const auto ids = layer_ids();
    auto known = [&](const std::string& id) {
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    };
    for (const auto& id : opt.record_spec)
        if (!known(id)) throw ConfigError("toy backend: unknown layer id '" + id + "' in record spec");
    if (opt.overrides)
        for (const auto& [id, _] : *opt.overrides) {
            if (!known(id)) throw ConfigError("toy backend: unknown layer id '" + id + "' in overrides");
            if (block_of(id) == "mid")
                throw ConfigError("toy backend: overrides apply to decoder layers only, got '" +
                                  id + "'");
        }
}

Mat ToyBackend::context_for_layer(const TextEncoding& text, const std::string& cross_layer) const {
    Mat ctx = text.embeddings;
    for (size_t i = 0; i < text.tokens.size(); ++i) {
        auto tok_it = learned_.find(text.tokens[i]);
        if (tok_it == learned_.end()) continue;
        auto layer_it = tok_it->second.find(cross_layer);
        if (layer_it == tok_it->second.end()) continue;
        const Mat& row = layer_it->second;
        if (row.cols() != ctx.cols())
            throw ContractViolation("adapter: learned embedding width mismatch for '" +
                                    text.tokens[i] + "'");
        for (int j = 0; j < ctx.cols(); ++j) ctx(static_cast<int>(i), j) = row(0, j);
    }
    return ctx;
}

// One forward evaluation: builds the graph, captures records, and exposes the
// key Vars of recorded layers for gradient composition.
struct ToyBackend::Pass {
    const ToyBackend& be;
    Graph& g;
    const PredictOptions& opt;
    const TextEncoding& text;
    int height, width;

    AttentionRecord record;
    std::map<std::string, Var> key_vars;

    Var weight_var(const std::string& name) const { return g.input(be.weights_.at(name)); }

    Var apply_output_stage(const std::string& layer_id, const AttnResult& r) {
        Var out = r.h_out;
        if (opt.overrides) {
            auto it = opt.overrides->find(layer_id);
            if (it != opt.overrides->end()) {
                if (it->second.rows() != out->value.rows() ||
                    it->second.cols() != out->value.cols())
                    throw ContractViolation("override: shape mismatch at layer '" + layer_id +
                                            "'");
                out = g.input(it->second);
            }
        }
        if (opt.hook) {
            Mat replaced = (*opt.hook)(layer_id, out->value);
            if (!bit_equal(replaced, out->value)) {
                if (!replaced.same_shape(out->value))
                    throw ContractViolation("hook: shape change at layer '" + layer_id + "'");
                out = g.input(std::move(replaced));
            }
        }
        if (opt.record_spec.count(layer_id)) {
            record.layers[layer_id] = {r.keys->value, r.probs_avg, out->value};
            key_vars[layer_id] = r.keys;
        }
        return out;
    }

    Var block(Var h, const std::string& name) {
        AttnWeightVars ws{weight_var(name + ".self.wq"), weight_var(name + ".self.wk"),
                          weight_var(name + ".self.wv"), be.cfg_.n_heads};
        h = vadd(h, apply_output_stage(name + ".self", attention_core(h, h, ws)));

        AttnWeightVars wc{weight_var(name + ".cross.wq"), weight_var(name + ".cross.wk"),
                          weight_var(name + ".cross.wv"), be.cfg_.n_heads};
        const Var ctx = g.input(be.context_for_layer(text, name + ".cross"));
        h = vadd(h, apply_output_stage(name + ".cross", attention_core(h, ctx, wc)));

        h = vadd(h, vmatmul(vtanh(vmatmul(h, weight_var(name + ".ffn.w1"))),
                            weight_var(name + ".ffn.w2")));
        return h;
    }

    Var run(const Var& z_rows, int t) {
        Var x = vmatmul(z_rows, weight_var("in_proj"));
        x = vadd(x, g.input(be.positional_embedding(height * width, height, width)));
        x = vadd_row(x, g.input(matmul(time_embedding(t, be.cfg_.d_model),
                                       be.weights_.at("te_proj"))));

        const Var enc = vmatmul(g.input(pool_matrix(height, width)), x);
        Var h = block(enc, "mid");
        h = vadd(h, enc);  // skip connection into the decoder
        h = block(h, "dec0");
        h = block(h, "dec1");
        h = block(h, "dec2");
        h = vmatmul(g.input(upsample_matrix(height, width)), h);
        h = block(h, "dec3");
        h = block(h, "dec4");
        h = block(h, "dec5");
        return vmatmul(h, weight_var("out_proj"));
    }
};

PredictResult ToyBackend::predict_noise(const LatentGrid& z, int t, const TextEncoding& text,
                                        const PredictOptions& opt) {
    check_latent(z);
    if (z.channels != cfg_.channels)
        throw ContractViolation("toy backend: latent channel count mismatch");
    if (t < 0) throw ContractViolation("toy backend: negative timestep");
    if (text.embeddings.cols() != cfg_.ctx_dim)
        throw ContractViolation("toy backend: context width mismatch");
    validate_layer_ids(opt);

    Graph g;
    Pass pass{*this, g, opt, text, z.height, z.width, {}, {}};
    const Var noise = pass.run(g.input(z.as_rows()), t);

    PredictResult out;
    out.noise = LatentGrid::from_rows(noise->value, cfg_.channels, z.height, z.width);
    out.noise.timestep_hint = t;
    out.record = std::move(pass.record);
    return out;
}

void ToyBackend::install_adapter(const AdapterSet& adapter) {
    if (adapter_active_)
        throw ContractViolation("toy backend: an adapter is already installed");
    adapter.validate();
    // Merge as a reversible overlay: originals saved, deltas applied in place.
    std::map<std::string, Mat> updated;
    for (const auto& [name, delta] : adapter.deltas) {
        auto it = weights_.find(name);
        if (it == weights_.end())
            throw ContractViolation("adapter '" + adapter.concept_id + "': no weight named '" +
                                    name + "'");
        updated[name] = apply_delta(it->second, delta, adapter.merge_coefficient);
    }
    for (auto& [name, w] : updated) {
        saved_[name] = weights_[name];
        weights_[name] = std::move(w);
    }
    learned_ = adapter.embeddings;
    adapter_active_ = true;
}

void ToyBackend::remove_adapter() {
    for (auto& [name, w] : saved_) weights_[name] = std::move(w);
    saved_.clear();
    learned_.clear();
    adapter_active_ = false;
}

LossGradResult ToyBackend::loss_gradient(const LatentGrid& z, int t,
                                         const std::vector<BranchInput>& branches,
                                         const LayoutLossSpec& spec) {
    check_latent(z);
    if (branches.empty()) throw ContractViolation("loss_gradient: no branches");
    if (adapter_active_)
        throw ContractViolation("loss_gradient: remove the installed adapter first");
    const auto ids = layer_ids();
    if (std::find(ids.begin(), ids.end(), spec.layer_id) == ids.end())
        throw ConfigError("loss_gradient: unknown layer id '" + spec.layer_id + "'");

    PredictOptions opt;
    opt.record_spec = {spec.layer_id};

    Graph g;
    const Var z_rows = g.input(z.as_rows(), /*requires_grad=*/true);
    const Var ref = g.input(spec.reference);

    std::vector<Var> terms;
    for (size_t i = 0; i < branches.size(); ++i) {
        const BranchInput& b = branches[i];
        if (!b.text) throw ContractViolation("loss_gradient: branch without text encoding");
        if (b.adapter) install_adapter(*b.adapter);
        Pass pass{*this, g, opt, *b.text, z.height, z.width, {}, {}};
        Var keys;
        try {
            pass.run(z_rows, t);
            keys = pass.key_vars.at(spec.layer_id);
        } catch (...) {
            if (b.adapter) remove_adapter();
            throw;
        }
        if (b.adapter) remove_adapter();
        if (!keys->value.same_shape(spec.reference))
            throw ContractViolation("loss_gradient: reference shape does not match layer '" +
                                    spec.layer_id + "'");
        terms.push_back(vsqrt(vfrob_sq(vsub(keys, ref))));
    }

    // ‖F_base − ref‖ + alpha/N Σ ‖F_Vi − ref‖; branch 0 is the base.
    Var loss = terms[0];
    if (terms.size() > 1) {
        Var custom = terms[1];
        for (size_t i = 2; i < terms.size(); ++i) custom = vadd(custom, terms[i]);
        loss = vadd(loss, vscale(custom, spec.alpha / static_cast<double>(terms.size() - 1)));
    }
    loss = vscale(loss, spec.loss_scale);
    g.backward(loss);

    LossGradResult out;
    out.loss = loss->value(0, 0);
    out.grad = z_rows->has_grad
                   ? LatentGrid::from_rows(z_rows->grad, cfg_.channels, z.height, z.width)
                   : LatentGrid(cfg_.channels, z.height, z.width);
    return out;
}

LatentGrid ToyBackend::encode_image(const Image& pixels) const { return codec_.encode(pixels); }

Image ToyBackend::decode_latent(const LatentGrid& z) const { return codec_.decode(z); }

uint64_t ToyBackend::weights_hash() const {
    Archive ar;
    ar.set_meta("kind", "toy-weights");
    ar.set_meta("seed", std::to_string(cfg_.seed));
    ar.set_meta("channels", std::to_string(cfg_.channels));
    ar.set_meta("d_model", std::to_string(cfg_.d_model));
    ar.set_meta("n_heads", std::to_string(cfg_.n_heads));
    ar.set_meta("ffn_hidden", std::to_string(cfg_.ffn_hidden));
    ar.set_meta("ctx_dim", std::to_string(cfg_.ctx_dim));
    ar.set_meta("max_tokens", std::to_string(cfg_.max_tokens));
    ar.set_meta("factor", std::to_string(cfg_.factor));
    for (const auto& [name, w] : weights_) ar.put_mat(name, w, "f4");
    return ar.content_hash();
}

void ToyBackend::save_weights(const std::string& path) const {
    Archive ar;
    ar.set_meta("kind", "toy-weights");
    ar.set_meta("seed", std::to_string(cfg_.seed));
    ar.set_meta("channels", std::to_string(cfg_.channels));
    ar.set_meta("d_model", std::to_string(cfg_.d_model));
    ar.set_meta("n_heads", std::to_string(cfg_.n_heads));
    ar.set_meta("ffn_hidden", std::to_string(cfg_.ffn_hidden));
    ar.set_meta("ctx_dim", std::to_string(cfg_.ctx_dim));
    ar.set_meta("max_tokens", std::to_string(cfg_.max_tokens));
    ar.set_meta("factor", std::to_string(cfg_.factor));
    for (const auto& [name, w] : weights_) ar.put_mat(name, w, "f4");
    ar.save(path);
}

ToyBackend ToyBackend::from_archive(const std::string& path) {
    const Archive ar = Archive::load(path);
    if (!ar.has_meta("kind") || ar.get_meta("kind") != "toy-weights")
        throw IoError("toy backend: '" + path + "' is not a weights archive");
    ToyConfig cfg;
    cfg.seed = std::stoull(ar.get_meta("seed"));
    cfg.channels = std::stoi(ar.get_meta("channels"));
    cfg.d_model = std::stoi(ar.get_meta("d_model"));
    cfg.n_heads = std::stoi(ar.get_meta("n_heads"));
    cfg.ffn_hidden = std::stoi(ar.get_meta("ffn_hidden"));
    cfg.ctx_dim = std::stoi(ar.get_meta("ctx_dim"));
    cfg.max_tokens = std::stoi(ar.get_meta("max_tokens"));
    cfg.factor = std::stoi(ar.get_meta("factor"));
    ToyBackend be(cfg);
    for (const std::string& name : ar.names()) {
        auto it = be.weights_.find(name);
        if (it == be.weights_.end())
            throw IoError("toy backend: unexpected weight '" + name + "' in '" + path + "'");
        const Mat w = ar.get_mat(name);
        if (!w.same_shape(it->second))
            throw IoError("toy backend: shape mismatch for weight '" + name + "'");
        it->second = w;
    }
    return be;
}

std::map<std::string, std::pair<int, int>> ToyBackend::adapter_weight_shapes() const {
    std::map<std::string, std::pair<int, int>> out;
    for (const auto& [name, w] : weights_) {
        const size_t n = name.size();
        if (n > 3 && (name.compare(n - 3, 3, ".wq") == 0 || name.compare(n - 3, 3, ".wk") == 0 ||
                      name.compare(n - 3, 3, ".wv") == 0))
            out[name] = {w.rows(), w.cols()};
    }
    return out;
}

const Mat& ToyBackend::weight(const std::string& name) const {
    auto it = weights_.find(name);
    if (it == weights_.end())
        throw ContractViolation("toy backend: no weight named '" + name + "'");
    return it->second;
}

}  // namespace maskfuse
