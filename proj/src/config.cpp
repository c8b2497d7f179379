#include "maskfuse/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace maskfuse {

namespace {

// Tracks which keys a section consumed so leftovers can be rejected by name.
class Keys {
public:
    Keys(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError("config section '" + (path_.empty() ? "<root>" : path_) +
                              "' must be an object");
    }

    std::string at(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    const nlohmann::json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    bool boolean(const std::string& key, bool fallback) {
        const nlohmann::json* v = find(key);
        if (!v) return fallback;
        if (!v->is_boolean()) throw ConfigError("config key '" + at(key) + "' must be a boolean");
        return v->get<bool>();
    }

    double number(const std::string& key, double fallback) {
        const nlohmann::json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number()) throw ConfigError("config key '" + at(key) + "' must be a number");
        return v->get<double>();
    }

    int integer(const std::string& key, int fallback) {
        const nlohmann::json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number_integer())
            throw ConfigError("config key '" + at(key) + "' must be an integer");
        return v->get<int>();
    }

    uint64_t unsigned_integer(const std::string& key, uint64_t fallback) {
        const nlohmann::json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<int64_t>() < 0))
            throw ConfigError("config key '" + at(key) + "' must be a non-negative integer");
        return v->get<uint64_t>();
    }

    std::string string(const std::string& key, std::string fallback) {
        const nlohmann::json* v = find(key);
        if (!v) return fallback;
        if (!v->is_string()) throw ConfigError("config key '" + at(key) + "' must be a string");
        return v->get<std::string>();
    }

    std::string required_string(const std::string& key) {
        const nlohmann::json* v = find(key);
        if (!v || !v->is_string() || v->get<std::string>().empty())
            throw ConfigError("config key '" + at(key) + "' must be a non-empty string");
        return v->get<std::string>();
    }

    std::vector<std::string> string_list(const std::string& key) {
        const nlohmann::json* v = find(key);
        std::vector<std::string> out;
        if (!v) return out;
        if (!v->is_array())
            throw ConfigError("config key '" + at(key) + "' must be a list of strings");
        for (const nlohmann::json& e : *v) {
            if (!e.is_string())
                throw ConfigError("config key '" + at(key) + "' must be a list of strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    }

    const nlohmann::json* array(const std::string& key) {
        const nlohmann::json* v = find(key);
        if (v && !v->is_array())
            throw ConfigError("config key '" + at(key) + "' must be a list");
        return v;
    }

    const nlohmann::json* object(const std::string& key) {
        const nlohmann::json* v = find(key);
        if (v && !v->is_object())
            throw ConfigError("config section '" + at(key) + "' must be an object");
        return v;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("unknown config key '" + at(it.key()) + "'");
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

ConceptConfig parse_concept(const nlohmann::json& j, const std::string& path) {
    Keys k(j, path);
    ConceptConfig c;
    c.id = k.required_string("id");
    c.tokens = k.string_list("tokens");
    if (c.tokens.empty())
        throw ConfigError("config key '" + k.at("tokens") + "' must list at least one token");
    c.class_word = k.required_string("class_word");
    c.similar_tokens = k.string_list("similar_tokens");
    c.adapter = k.required_string("adapter");
    parse_adapter_source(c.adapter);  // shape check only
    c.reference_images = k.string_list("reference_images");
    if (const nlohmann::json* region = k.array("seed_region")) {
        for (const nlohmann::json& e : *region) {
            if (!e.is_number_integer())
                throw ConfigError("config key '" + k.at("seed_region") +
                                  "' must be [x0, y0, x1, y1]");
            c.seed_region.push_back(e.get<int>());
        }
        if (c.seed_region.size() != 4 || c.seed_region[0] < 0 || c.seed_region[1] < 0 ||
            c.seed_region[0] >= c.seed_region[2] || c.seed_region[1] >= c.seed_region[3])
            throw ConfigError("config key '" + k.at("seed_region") +
                              "' must be [x0, y0, x1, y1] with x0 < x1 and y0 < y1");
    }
    c.mask_source = k.string("mask_source", c.mask_source);
    if (c.mask_source != "reference" && c.mask_source != "external" && c.mask_source != "zero")
        throw ConfigError("config key '" + k.at("mask_source") +
                          "' must be one of reference, external, zero");
    c.external_mask = k.string("external_mask", c.external_mask);
    if (c.mask_source == "external" && c.external_mask.empty())
        throw ConfigError("concept '" + c.id + "': external masks need an external_mask path");
    k.finish();
    return c;
}

ColorRule parse_rule(const nlohmann::json& j, const std::string& path) {
    Keys k(j, path);
    ColorRule r;
    r.prompt = k.required_string("prompt");
    const nlohmann::json* color = k.array("color");
    if (!color || color->size() != 3)
        throw ConfigError("config key '" + k.at("color") + "' must be [r, g, b]");
    int rgb[3];
    for (int i = 0; i < 3; ++i) {
        const nlohmann::json& e = (*color)[i];
        if (!e.is_number_integer() || e.get<int>() < 0 || e.get<int>() > 255)
            throw ConfigError("config key '" + k.at("color") + "' channels must be 0..255");
        rgb[i] = e.get<int>();
    }
    r.r = uint8_t(rgb[0]);
    r.g = uint8_t(rgb[1]);
    r.b = uint8_t(rgb[2]);
    r.tolerance = k.integer("tolerance", r.tolerance);
    if (r.tolerance < 0) throw ConfigError("config key '" + k.at("tolerance") + "' must be >= 0");
    k.finish();
    return r;
}

void check_window(const Keys& k, int begin, int end, const std::string& begin_key) {
    if (begin < 0 || begin > end)
        throw ConfigError("config key '" + k.at(begin_key) +
                          "' must satisfy 0 <= begin <= end");
}

}  // namespace

AdapterSource parse_adapter_source(const std::string& spec) {
    AdapterSource src;
    if (spec.empty()) throw ConfigError("adapter source must not be empty");
    if (spec.rfind("seed:", 0) == 0) {
        const std::string digits = spec.substr(5);
        if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("adapter source '" + spec + "': seed must be a non-negative integer");
        src.synthesize = true;
        src.seed = std::stoull(digits);
        return src;
    }
    src.path = spec;
    return src;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    Keys root(j, "");
    RunConfig c;

    c.prompt = root.required_string("prompt");
    if (const nlohmann::json* concepts = root.array("concepts")) {
        int i = 0;
        for (const nlohmann::json& e : *concepts)
            c.concepts.push_back(parse_concept(e, "concepts." + std::to_string(i++)));
    }
    c.reference_image = root.string("reference_image", "");

    if (const nlohmann::json* s = root.object("sampler")) {
        Keys k(*s, "sampler");
        c.sampler.num_steps = k.integer("num_steps", c.sampler.num_steps);
        c.sampler.guidance_scale = k.number("guidance_scale", c.sampler.guidance_scale);
        c.sampler.inversion_steps = k.integer("inversion_steps", c.sampler.inversion_steps);
        k.finish();
        if (c.sampler.num_steps < 1)
            throw ConfigError("config key 'sampler.num_steps' must be >= 1");
        if (c.sampler.inversion_steps < 1)
            throw ConfigError("config key 'sampler.inversion_steps' must be >= 1");
    }

    if (const nlohmann::json* s = root.object("layout")) {
        Keys k(*s, "layout");
        c.layout.enabled = k.boolean("enabled", c.layout.enabled);
        c.layout.alpha = k.number("alpha", c.layout.alpha);
        c.layout.lambda_step = k.number("lambda_step", c.layout.lambda_step);
        c.layout.window_begin = k.integer("window_begin", c.layout.window_begin);
        c.layout.window_end = k.integer("window_end", c.layout.window_end);
        c.layout.feature_layer = k.string("feature_layer", c.layout.feature_layer);
        c.layout.repeats_per_step = k.integer("repeats_per_step", c.layout.repeats_per_step);
        k.finish();
        if (c.layout.alpha < 0.0) throw ConfigError("config key 'layout.alpha' must be >= 0");
        if (c.layout.lambda_step < 0.0)
            throw ConfigError("config key 'layout.lambda_step' must be >= 0");
        check_window(k, c.layout.window_begin, c.layout.window_end, "window_begin");
        if (c.layout.feature_layer.empty())
            throw ConfigError("config key 'layout.feature_layer' must name a layer");
        if (c.layout.repeats_per_step < 1)
            throw ConfigError("config key 'layout.repeats_per_step' must be >= 1");
    }

    if (const nlohmann::json* s = root.object("refine")) {
        Keys k(*s, "refine");
        c.refine.enabled = k.boolean("enabled", c.refine.enabled);
        c.refine.window_begin = k.integer("window_begin", c.refine.window_begin);
        c.refine.window_end = k.integer("window_end", c.refine.window_end);
        c.refine.cadence = k.integer("cadence", c.refine.cadence);
        c.refine.cluster_layer = k.string("cluster_layer", c.refine.cluster_layer);
        c.refine.kmeans_seed = k.unsigned_integer("kmeans_seed", c.refine.kmeans_seed);
        c.refine.kmeans_max_iter = k.integer("kmeans_max_iter", c.refine.kmeans_max_iter);
        c.refine.kmeans_tol = k.number("kmeans_tol", c.refine.kmeans_tol);
        c.refine.cluster_min_mult = k.integer("cluster_min_mult", c.refine.cluster_min_mult);
        c.refine.cluster_max_mult = k.integer("cluster_max_mult", c.refine.cluster_max_mult);
        k.finish();
        check_window(k, c.refine.window_begin, c.refine.window_end, "window_begin");
        if (c.refine.cadence < 1) throw ConfigError("config key 'refine.cadence' must be >= 1");
        if (c.refine.cluster_layer.empty())
            throw ConfigError("config key 'refine.cluster_layer' must name a layer");
        if (c.refine.kmeans_max_iter < 1)
            throw ConfigError("config key 'refine.kmeans_max_iter' must be >= 1");
        if (!(c.refine.kmeans_tol > 0.0))
            throw ConfigError("config key 'refine.kmeans_tol' must be > 0");
        if (c.refine.cluster_min_mult < 1 ||
            c.refine.cluster_max_mult < c.refine.cluster_min_mult)
            throw ConfigError("config keys 'refine.cluster_min_mult'/'cluster_max_mult' must "
                              "satisfy 1 <= min <= max");
    }

    if (const nlohmann::json* s = root.object("fusion")) {
        Keys k(*s, "fusion");
        c.fusion.enabled = k.boolean("enabled", c.fusion.enabled);
        c.fusion.fuse_self = k.boolean("fuse_self", c.fusion.fuse_self);
        c.fusion.fuse_cross = k.boolean("fuse_cross", c.fusion.fuse_cross);
        c.fusion.noise_baseline = k.boolean("noise_baseline", c.fusion.noise_baseline);
        k.finish();
    }

    if (const nlohmann::json* s = root.object("adapters")) {
        Keys k(*s, "adapters");
        c.adapters.merge = k.number("merge", c.adapters.merge);
        c.adapters.rank = k.integer("rank", c.adapters.rank);
        k.finish();
        if (!(c.adapters.merge > 0.0))
            throw ConfigError("config key 'adapters.merge' must be > 0");
        if (c.adapters.rank < 1) throw ConfigError("config key 'adapters.rank' must be >= 1");
    }

    if (const nlohmann::json* s = root.object("backend")) {
        Keys k(*s, "backend");
        c.backend_kind = k.string("kind", c.backend_kind);
        c.backend.channels = k.integer("channels", c.backend.channels);
        c.backend.d_model = k.integer("d_model", c.backend.d_model);
        c.backend.n_heads = k.integer("n_heads", c.backend.n_heads);
        c.backend.ffn_hidden = k.integer("ffn_hidden", c.backend.ffn_hidden);
        c.backend.ctx_dim = k.integer("ctx_dim", c.backend.ctx_dim);
        c.backend.max_tokens = k.integer("max_tokens", c.backend.max_tokens);
        c.backend.factor = k.integer("factor", c.backend.factor);
        c.backend.seed = k.unsigned_integer("seed", c.backend.seed);
        c.backend.sigma_w = k.number("sigma_w", c.backend.sigma_w);
        c.backend.sigma_out = k.number("sigma_out", c.backend.sigma_out);
        c.backend.sigma_emb = k.number("sigma_emb", c.backend.sigma_emb);
        k.finish();
        if (c.backend_kind != "toy")
            throw ConfigError("unknown backend kind '" + c.backend_kind + "'");
        for (int v : {c.backend.channels, c.backend.d_model, c.backend.n_heads,
                      c.backend.ffn_hidden, c.backend.ctx_dim, c.backend.max_tokens,
                      c.backend.factor})
            if (v < 1) throw ConfigError("backend dimensions must all be >= 1");
    }

    if (const nlohmann::json* s = root.object("output")) {
        Keys k(*s, "output");
        c.output.dir = k.string("dir", c.output.dir);
        c.output.width = k.integer("width", c.output.width);
        c.output.height = k.integer("height", c.output.height);
        if (const nlohmann::json* steps = k.array("dump_attention_steps")) {
            for (const nlohmann::json& e : *steps) {
                if (!e.is_number_integer() || e.get<int>() < 0)
                    throw ConfigError("config key 'output.dump_attention_steps' must list "
                                      "non-negative step indices");
                c.output.dump_attention_steps.push_back(e.get<int>());
            }
        }
        c.output.dump_masks = k.boolean("dump_masks", c.output.dump_masks);
        k.finish();
        if (c.output.dir.empty()) throw ConfigError("config key 'output.dir' must not be empty");
        if (c.output.width < 1 || c.output.height < 1)
            throw ConfigError("config keys 'output.width'/'output.height' must be >= 1");
    }

    if (const nlohmann::json* s = root.object("eval")) {
        Keys k(*s, "eval");
        c.eval.client = k.string("client", c.eval.client);
        if (c.eval.client != "mock" && c.eval.client != "http")
            throw ConfigError("config key 'eval.client' must be mock or http");
        if (const nlohmann::json* rules = k.array("rules")) {
            int i = 0;
            for (const nlohmann::json& e : *rules)
                c.eval.rules.push_back(parse_rule(e, "eval.rules." + std::to_string(i++)));
        }
        c.eval.category_prompts = k.string_list("category_prompts");
        c.eval.expected_total = k.integer("expected_total", c.eval.expected_total);
        if (c.eval.expected_total < 0)
            throw ConfigError("config key 'eval.expected_total' must be >= 0");
        c.eval.embed_dim = k.integer("embed_dim", c.eval.embed_dim);
        if (c.eval.embed_dim < 1)
            throw ConfigError("config key 'eval.embed_dim' must be >= 1");
        if (const nlohmann::json* svc = k.object("service")) {
            Keys sk(*svc, "eval.service");
            c.eval.service.host = sk.string("host", c.eval.service.host);
            c.eval.service.port = sk.integer("port", c.eval.service.port);
            c.eval.service.segment_path = sk.string("segment_path", c.eval.service.segment_path);
            c.eval.service.embed_path = sk.string("embed_path", c.eval.service.embed_path);
            c.eval.service.timeout_ms = sk.integer("timeout_ms", c.eval.service.timeout_ms);
            c.eval.service.retries = sk.integer("retries", c.eval.service.retries);
            sk.finish();
            if (c.eval.service.timeout_ms < 1)
                throw ConfigError("config key 'eval.service.timeout_ms' must be >= 1");
            if (c.eval.service.retries < 0)
                throw ConfigError("config key 'eval.service.retries' must be >= 0");
        }
        k.finish();
    }

    if (const nlohmann::json* seeds = root.array("seeds")) {
        c.seeds.clear();
        for (const nlohmann::json& e : *seeds) {
            if (!e.is_number_integer() || (!e.is_number_unsigned() && e.get<int64_t>() < 0))
                throw ConfigError("config key 'seeds' must list non-negative integers");
            c.seeds.push_back(e.get<uint64_t>());
        }
    }
    if (c.seeds.empty()) throw ConfigError("config key 'seeds' must list at least one seed");

    c.cache_dir = root.string("cache_dir", c.cache_dir);
    root.finish();

    // cross-field rules
    std::set<std::string> ids;
    for (const ConceptConfig& cc : c.concepts)
        if (!ids.insert(cc.id).second)
            throw ConfigError("duplicate concept id '" + cc.id + "'");
    if (c.layout.enabled && c.reference_image.empty())
        throw ConfigError("layout alignment needs a reference_image");
    for (const ConceptConfig& cc : c.concepts)
        if (cc.mask_source == "reference" && c.reference_image.empty())
            throw ConfigError("concept '" + cc.id +
                              "': reference-based masks need a reference_image");
    return c;
}

nlohmann::ordered_json serialize_run_config(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["prompt"] = c.prompt;
    nlohmann::ordered_json concepts = nlohmann::ordered_json::array();
    for (const ConceptConfig& cc : c.concepts) {
        nlohmann::ordered_json e;
        e["id"] = cc.id;
        e["tokens"] = cc.tokens;
        e["class_word"] = cc.class_word;
        e["similar_tokens"] = cc.similar_tokens;
        e["adapter"] = cc.adapter;
        e["reference_images"] = cc.reference_images;
        if (!cc.seed_region.empty()) e["seed_region"] = cc.seed_region;
        e["mask_source"] = cc.mask_source;
        if (!cc.external_mask.empty()) e["external_mask"] = cc.external_mask;
        concepts.push_back(std::move(e));
    }
    j["concepts"] = std::move(concepts);
    j["reference_image"] = c.reference_image;
    j["sampler"] = {{"num_steps", c.sampler.num_steps},
                    {"guidance_scale", c.sampler.guidance_scale},
                    {"inversion_steps", c.sampler.inversion_steps}};
    j["layout"] = {{"enabled", c.layout.enabled},
                   {"alpha", c.layout.alpha},
                   {"lambda_step", c.layout.lambda_step},
                   {"window_begin", c.layout.window_begin},
                   {"window_end", c.layout.window_end},
                   {"feature_layer", c.layout.feature_layer},
                   {"repeats_per_step", c.layout.repeats_per_step}};
    j["refine"] = {{"enabled", c.refine.enabled},
                   {"window_begin", c.refine.window_begin},
                   {"window_end", c.refine.window_end},
                   {"cadence", c.refine.cadence},
                   {"cluster_layer", c.refine.cluster_layer},
                   {"kmeans_seed", c.refine.kmeans_seed},
                   {"kmeans_max_iter", c.refine.kmeans_max_iter},
                   {"kmeans_tol", c.refine.kmeans_tol},
                   {"cluster_min_mult", c.refine.cluster_min_mult},
                   {"cluster_max_mult", c.refine.cluster_max_mult}};
    j["fusion"] = {{"enabled", c.fusion.enabled},
                   {"fuse_self", c.fusion.fuse_self},
                   {"fuse_cross", c.fusion.fuse_cross},
                   {"noise_baseline", c.fusion.noise_baseline}};
    j["adapters"] = {{"merge", c.adapters.merge}, {"rank", c.adapters.rank}};
    j["backend"] = {{"kind", c.backend_kind},
                    {"channels", c.backend.channels},
                    {"d_model", c.backend.d_model},
                    {"n_heads", c.backend.n_heads},
                    {"ffn_hidden", c.backend.ffn_hidden},
                    {"ctx_dim", c.backend.ctx_dim},
                    {"max_tokens", c.backend.max_tokens},
                    {"factor", c.backend.factor},
                    {"seed", c.backend.seed},
                    {"sigma_w", c.backend.sigma_w},
                    {"sigma_out", c.backend.sigma_out},
                    {"sigma_emb", c.backend.sigma_emb}};
    j["output"] = {{"dir", c.output.dir},
                   {"width", c.output.width},
                   {"height", c.output.height},
                   {"dump_attention_steps", c.output.dump_attention_steps},
                   {"dump_masks", c.output.dump_masks}};
    nlohmann::ordered_json rules = nlohmann::ordered_json::array();
    for (const ColorRule& r : c.eval.rules)
        rules.push_back({{"prompt", r.prompt},
                         {"color", {int(r.r), int(r.g), int(r.b)}},
                         {"tolerance", r.tolerance}});
    j["eval"] = {{"client", c.eval.client},
                 {"rules", std::move(rules)},
                 {"category_prompts", c.eval.category_prompts},
                 {"expected_total", c.eval.expected_total},
                 {"embed_dim", c.eval.embed_dim},
                 {"service",
                  {{"host", c.eval.service.host},
                   {"port", c.eval.service.port},
                   {"segment_path", c.eval.service.segment_path},
                   {"embed_path", c.eval.service.embed_path},
                   {"timeout_ms", c.eval.service.timeout_ms},
                   {"retries", c.eval.service.retries}}}};
    j["seeds"] = c.seeds;
    j["cache_dir"] = c.cache_dir;
    return j;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' must look like section.key=value");
    const std::string dotted = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        const size_t dot = dotted.find('.', start);
        parts.push_back(dotted.substr(start, dot - start));
        if (parts.back().empty())
            throw ConfigError("override '" + assignment + "' has an empty key segment");
        if (dot == std::string::npos) break;
        start = dot + 1;
    }

    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // bare strings stand for themselves

    nlohmann::json* node = &j;
    for (size_t i = 0; i < parts.size(); ++i) {
        const std::string& part = parts[i];
        const bool last = i + 1 == parts.size();
        if (node->is_array()) {
            if (part.find_first_not_of("0123456789") != std::string::npos)
                throw ConfigError("override '" + dotted + "': '" + part +
                                  "' must be a list index");
            const size_t idx = std::stoul(part);
            if (idx >= node->size())
                throw ConfigError("override '" + dotted + "': no element " + part);
            node = &(*node)[idx];
        } else if (node->is_object() || node->is_null()) {
            if (part.find_first_not_of("0123456789") == std::string::npos && !node->contains(part))
                throw ConfigError("override '" + dotted + "' cannot create list elements");
            node = &(*node)[part];
        } else {
            throw ConfigError("override '" + dotted + "': '" + parts[i - 1] +
                              "' is not a section");
        }
        if (last) {
            *node = value;
            return;
        }
    }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file '" + path + "' must hold a JSON object");
    for (const std::string& o : overrides) apply_override(j, o);
    return parse_run_config(j);
}

std::string resolve_cache_dir(const RunConfig& c) {
    if (!c.cache_dir.empty()) return c.cache_dir;
    if (const char* env = std::getenv("MASKFUSE_CACHE_DIR"); env && *env) return env;
    return ".maskfuse-cache";
}

}  // namespace maskfuse
