#include "maskfuse/adapter.hpp"

#include "maskfuse/archive.hpp"
#include "maskfuse/rng.hpp"
#include "maskfuse/text.hpp"

namespace maskfuse {

void AdapterSet::validate() const {
    if (concept_id.empty()) throw ContractViolation("adapter: empty concept id");
    if (rank < 1) throw ContractViolation("adapter: rank must be >= 1");
    if (merge_coefficient < 0.0 || merge_coefficient > 1.0)
        throw ContractViolation("adapter: merge coefficient outside [0, 1]");
    if (tokens.empty()) throw ContractViolation("adapter: no learned tokens");
    for (const auto& tok : tokens)
        if (!is_learned_token(tok) || tok.find('.') != std::string::npos)
            throw ContractViolation("adapter: token '" + tok + "' is not of the <...> form");
    for (const auto& [name, d] : deltas) {
        if (d.down.rows() != rank || d.up.cols() != rank)
            throw ContractViolation("adapter: delta rank mismatch for '" + name + "'");
    }
}

uint64_t AdapterSet::content_hash() const {
    Archive ar;
    ar.set_meta("concept_id", concept_id);
    ar.set_meta("rank", std::to_string(rank));
    char coeff[32];
    std::snprintf(coeff, sizeof(coeff), "%.17g", merge_coefficient);
    ar.set_meta("merge_coefficient", coeff);
    ar.set_meta("tokens", detokenize(tokens));
    for (const auto& [name, d] : deltas) {
        ar.put_mat(name + ".down", d.down, "f4");
        ar.put_mat(name + ".up", d.up, "f4");
    }
    for (const auto& [tok, by_layer] : embeddings)
        for (const auto& [layer, row] : by_layer)
            ar.put_mat("emb." + tok + "." + layer, row, "f4");
    return ar.content_hash();
}

Mat apply_delta(const Mat& w, const LowRankDelta& d, double coefficient) {
    if (coefficient == 0.0) return w;  // bitwise identity short-circuit
    if (d.down.cols() != w.rows() || d.up.rows() != w.cols())
        throw ContractViolation("adapter: delta shape does not match target weight");
    // (up·down) is [d_out × d_in]; transpose into the row convention.
    const Mat delta = transpose(matmul(d.up, d.down));
    return add(w, scale(delta, coefficient));
}

void save_adapter(const AdapterSet& a, const std::string& path) {
    a.validate();
    Archive ar;
    ar.set_meta("kind", "adapter");
    ar.set_meta("concept_id", a.concept_id);
    ar.set_meta("rank", std::to_string(a.rank));
    char coeff[32];
    std::snprintf(coeff, sizeof(coeff), "%.17g", a.merge_coefficient);
    ar.set_meta("merge_coefficient", coeff);
    ar.set_meta("tokens", detokenize(a.tokens));
    for (const auto& [name, d] : a.deltas) {
        ar.put_mat(name + ".down", d.down, "f4");
        ar.put_mat(name + ".up", d.up, "f4");
    }
    for (const auto& [tok, by_layer] : a.embeddings)
        for (const auto& [layer, row] : by_layer)
            ar.put_mat("emb." + tok + "." + layer, row, "f4");
    ar.save(path);
}

AdapterSet load_adapter(const std::string& path) {
    const Archive ar = Archive::load(path);
    if (!ar.has_meta("kind") || ar.get_meta("kind") != "adapter")
        throw IoError("adapter: '" + path + "' is not an adapter archive");
    AdapterSet a;
    a.concept_id = ar.get_meta("concept_id");
    a.rank = std::stoi(ar.get_meta("rank"));
    a.merge_coefficient = std::stod(ar.get_meta("merge_coefficient"));
    a.tokens = tokenize(ar.get_meta("tokens"));
    for (const std::string& name : ar.names()) {
        if (name.rfind("emb.", 0) == 0) {
            // emb.<token>.<layer> — the token itself contains no '.'
            const size_t tok_end = name.find('.', 4);
            if (tok_end == std::string::npos) throw IoError("adapter: bad embedding key " + name);
            a.embeddings[name.substr(4, tok_end - 4)][name.substr(tok_end + 1)] =
                ar.get_mat(name);
        } else if (name.size() > 5 && name.substr(name.size() - 5) == ".down") {
            a.deltas[name.substr(0, name.size() - 5)].down = ar.get_mat(name);
        } else if (name.size() > 3 && name.substr(name.size() - 3) == ".up") {
            a.deltas[name.substr(0, name.size() - 3)].up = ar.get_mat(name);
        } else {
            throw IoError("adapter: unexpected array '" + name + "' in '" + path + "'");
        }
    }
    a.validate();
    return a;
}

namespace {

double f32_normal(DeterministicRng& rng, double sigma) {
    return static_cast<double>(static_cast<float>(sigma * rng.normal()));
}

Mat f32_normal_mat(DeterministicRng& rng, int rows, int cols, double sigma) {
    Mat m(rows, cols);
    for (double& v : m.raw()) v = f32_normal(rng, sigma);
    return m;
}

}  // namespace

AdapterSet synthesize_adapter(const std::string& concept_id,
                              const std::vector<std::string>& tokens, uint64_t seed,
                              const std::map<std::string, std::pair<int, int>>& weight_shapes,
                              const std::vector<std::string>& cross_layers, int ctx_dim,
                              int rank, double merge_coefficient) {
    AdapterSet a;
    a.concept_id = concept_id;
    a.rank = rank;
    a.merge_coefficient = merge_coefficient;
    a.tokens = tokens;
    const double sigma = 0.1;
    for (const auto& [name, shape] : weight_shapes) {
        const auto [d_in, d_out] = shape;
        DeterministicRng rng(seed, "adapter:" + concept_id + ":" + name);
        LowRankDelta d;
        d.down = f32_normal_mat(rng, rank, d_in, sigma);
        d.up = f32_normal_mat(rng, d_out, rank, sigma);
        a.deltas[name] = std::move(d);
    }
    for (const auto& tok : tokens)
        for (const auto& layer : cross_layers) {
            DeterministicRng rng(seed, "adapter-emb:" + concept_id + ":" + tok + ":" + layer);
            a.embeddings[tok][layer] = f32_normal_mat(rng, 1, ctx_dim, 0.5);
        }
    a.validate();
    return a;
}

}  // namespace maskfuse
