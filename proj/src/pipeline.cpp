#include "maskfuse/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "maskfuse/archive.hpp"
#include "maskfuse/log.hpp"
#include "maskfuse/rng.hpp"

namespace fs = std::filesystem;

namespace maskfuse {
namespace {

std::string cross_of(const std::string& self_layer) {
    const size_t pos = self_layer.rfind(".self");
    if (pos == std::string::npos) return self_layer;
    return self_layer.substr(0, pos) + ".cross";
}

uint64_t reference_features_hash(const ReferenceFeatures& f) {
    uint64_t h = fnv1a_str(f.source_id);
    for (const auto& [t, mat] : f.by_timestep) {
        h = fnv1a_u64(static_cast<uint64_t>(t), h);
        h = fnv1a_doubles(mat.raw(), h);
    }
    return h;
}

void check_layer(const Backend& backend, const std::string& layer, const std::string& field) {
    const std::vector<std::string> ids = backend.layer_ids();
    if (std::find(ids.begin(), ids.end(), layer) == ids.end())
        throw ConfigError(field + " '" + layer + "' is not a backend attention layer");
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

ManifestEvent prep_event(const std::string& module, const std::string& note,
                         std::map<std::string, double> values) {
    ManifestEvent e;
    e.module = module;
    e.note = note;
    e.values = std::move(values);
    return e;
}

MaskGrid seed_region_mask(const ConceptConfig& c, int grid_h, int grid_w) {
    if (c.seed_region.size() != 4)
        throw ConfigError("concept '" + c.id + "': reference-based masks need a seed_region");
    const int x0 = c.seed_region[0], y0 = c.seed_region[1];
    const int x1 = c.seed_region[2], y1 = c.seed_region[3];
    if (x0 < 0 || y0 < 0 || x1 > grid_w || y1 > grid_h || x0 >= x1 || y0 >= y1)
        throw ConfigError("concept '" + c.id + "': seed_region [" + std::to_string(x0) + ", " +
                          std::to_string(y0) + ", " + std::to_string(x1) + ", " +
                          std::to_string(y1) + ") does not fit the " + std::to_string(grid_h) +
                          "x" + std::to_string(grid_w) + " clustering grid");
    MaskGrid m(grid_h, grid_w);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
    return m;
}

}  // namespace

PreparedRun prepare_run(const RunConfig& config) {
    PreparedRun ctx;
    ctx.config = config;
    ctx.backend = ToyBackend(config.backend);
    ToyBackend& backend = ctx.backend;

    check_layer(backend, config.layout.feature_layer, "layout.feature_layer");
    check_layer(backend, config.refine.cluster_layer, "refine.cluster_layer");

    for (const ConceptConfig& c : config.concepts) {
        for (const std::string& token : c.tokens) {
            if (ctx.registry.contains(token))
                throw ConfigError("learned token '" + token +
                                  "' is declared by more than one concept");
            ctx.registry.add(token);
        }
        ConceptSpec spec;
        spec.concept_id = c.id;
        spec.concept_tokens = c.tokens;
        spec.class_word = c.class_word;
        spec.similar_tokens.insert(c.similar_tokens.begin(), c.similar_tokens.end());
        spec.reference_images = c.reference_images;

        const AdapterSource src = parse_adapter_source(c.adapter);
        if (src.synthesize) {
            spec.adapter = synthesize_adapter(c.id, c.tokens, src.seed,
                                              backend.adapter_weight_shapes(),
                                              backend.cross_layer_ids(), backend.ctx_dim(),
                                              config.adapters.rank, config.adapters.merge);
        } else {
            try {
                spec.adapter = load_adapter(src.path);
            } catch (const Error& e) {
                throw ConfigError("adapter for concept '" + c.id + "': " + e.what());
            }
            spec.adapter.concept_id = c.id;
        }
        for (const std::string& token : c.tokens)
            if (!spec.adapter.embeddings.count(token))
                throw ConfigError("adapter for concept '" + c.id +
                                  "' has no embeddings for token '" + token + "'");
        spec.adapter.validate();
        spec.validate();
        ctx.concepts.push_back(std::move(spec));
    }

    ctx.branches = make_branch_set(backend, config.prompt, ctx.concepts, ctx.registry);
    ctx.schedule = make_schedule();
    ctx.grid = timestep_grid(config.sampler.num_steps, ctx.schedule.t_train);

    const int factor = backend.downsample_factor();
    if (config.output.width % factor != 0 || config.output.height % factor != 0)
        throw ConfigError("output size " + std::to_string(config.output.width) + "x" +
                          std::to_string(config.output.height) +
                          " is not divisible by the backend downsample factor " +
                          std::to_string(factor));
    ctx.latent_h = config.output.height / factor;
    ctx.latent_w = config.output.width / factor;

    const auto [grid_h, grid_w] =
        backend.layer_grid(config.refine.cluster_layer, ctx.latent_h, ctx.latent_w);
    ctx.mask_h = grid_h;
    ctx.mask_w = grid_w;

    std::string mask_source;
    for (const ConceptConfig& c : config.concepts) {
        if (mask_source.empty()) mask_source = c.mask_source;
        if (c.mask_source != mask_source)
            throw ConfigError("concepts must share one mask_source ('" + mask_source +
                              "' vs '" + c.mask_source + "')");
    }
    std::map<std::string, MaskGrid> seed_masks;  // validated before the expensive inversion
    if (mask_source == "reference")
        for (const ConceptConfig& c : config.concepts)
            seed_masks[c.id] = seed_region_mask(c, grid_h, grid_w);

    RunManifest& man = ctx.base_manifest;
    man.config = serialize_run_config(config);
    man.backend_weights_hash = hash_hex(backend.weights_hash());
    for (const ConceptSpec& spec : ctx.concepts)
        man.adapter_hashes[spec.concept_id] = hash_hex(spec.adapter.content_hash());

    const bool need_invert = config.layout.enabled || mask_source == "reference";
    InversionResult inv;
    if (need_invert) {
        ImageU8 ref_u8;
        try {
            ref_u8 = read_png(config.reference_image);
        } catch (const Error& e) {
            throw ConfigError("reference image '" + config.reference_image + "': " + e.what());
        }
        if (ref_u8.width != config.output.width || ref_u8.height != config.output.height)
            throw ConfigError("reference image '" + config.reference_image + "' is " +
                              std::to_string(ref_u8.width) + "x" + std::to_string(ref_u8.height) +
                              " but the output size is " + std::to_string(config.output.width) +
                              "x" + std::to_string(config.output.height));
        const LatentGrid z0 = backend.encode_image(from_u8(ref_u8));

        std::set<std::string> record;
        if (config.layout.enabled) record.insert(config.layout.feature_layer);
        if (mask_source == "reference") record.insert(config.refine.cluster_layer);

        uint64_t key = fnv1a_u64(image_hash(ref_u8));
        key = fnv1a_u64(backend.weights_hash(), key);
        key = fnv1a_u64(static_cast<uint64_t>(config.sampler.inversion_steps), key);
        for (const std::string& layer : record) key = fnv1a_str(layer, key);
        key = fnv1a_str(config.prompt, key);

        const fs::path cache_dir = resolve_cache_dir(config);
        fs::create_directories(cache_dir);
        const std::string cache_path = (cache_dir / ("inv_" + hash_hex(key) + ".naa")).string();

        std::string note;
        if (fs::exists(cache_path)) {
            inv = load_inversion(cache_path);
            note = "cache";
        } else {
            MF_LOG_INFO("inverting reference '%s' (%d steps)", config.reference_image.c_str(),
                        config.sampler.inversion_steps);
            inv = ddim_invert(backend, z0, ctx.branches.base_text,
                              config.sampler.inversion_steps, record, ctx.schedule);
            save_inversion(inv, cache_path, {{"prompt", config.prompt}});
            note = "computed";
        }
        man.events.push_back(prep_event(
            "inversion", note,
            {{"steps", static_cast<double>(config.sampler.inversion_steps)},
             {"levels", static_cast<double>(inv.levels.size())}}));

        if (config.layout.enabled) {
            ctx.ref_features = reference_features_from_inversion(inv, config.layout, ctx.grid);
            man.reference_features_hash = hash_hex(reference_features_hash(ctx.ref_features));
        }
    }

    if (ctx.concepts.empty()) {
        ctx.init_masks = zero_masks({}, grid_h, grid_w);
        man.events.push_back(prep_event("init_masks", "none", {{"concepts", 0.0}}));
    } else if (mask_source == "reference") {
        const AttentionRecord& rec = inv.records.rbegin()->second;
        ctx.init_masks =
            init_masks_from_inversion(rec.layers.at(config.refine.cluster_layer).probs, grid_h,
                                      grid_w, ctx.concepts, seed_masks, config.refine);
        man.events.push_back(prep_event(
            "init_masks", "reference",
            {{"concepts", static_cast<double>(ctx.concepts.size())}}));
    } else if (mask_source == "external") {
        std::map<std::string, MaskGrid> supplied;
        for (const ConceptConfig& c : config.concepts) {
            try {
                supplied[c.id] = read_mask_png(c.external_mask);
            } catch (const Error& e) {
                throw ConfigError("external mask for concept '" + c.id + "': " + e.what());
            }
        }
        ctx.init_masks = masks_from_external(ctx.concepts, supplied, grid_h, grid_w);
        man.events.push_back(prep_event(
            "init_masks", "external",
            {{"concepts", static_cast<double>(ctx.concepts.size())}}));
    } else {
        ctx.init_masks = zero_masks(ctx.concepts, grid_h, grid_w);
        man.events.push_back(prep_event(
            "init_masks", "zero", {{"concepts", static_cast<double>(ctx.concepts.size())}}));
    }

    return ctx;
}

GenerationResult run_generation(PreparedRun& ctx, uint64_t seed) {
    const RunConfig& cfg = ctx.config;
    RunManifest man = ctx.base_manifest;
    man.seed = seed;

    const std::string seed_tag = "seed" + std::to_string(seed);
    const fs::path out_dir = cfg.output.dir;
    const fs::path image_dir = out_dir / "images";
    const fs::path manifest_dir = out_dir / "manifests";
    const fs::path mask_dir = out_dir / "masks" / seed_tag;
    const fs::path dump_dir = out_dir / "dumps" / seed_tag;
    fs::create_directories(image_dir);
    fs::create_directories(manifest_dir);
    if (cfg.output.dump_masks) fs::create_directories(mask_dir);
    if (!cfg.output.dump_attention_steps.empty()) fs::create_directories(dump_dir);

    const std::string manifest_path = (manifest_dir / (seed_tag + ".json")).string();
    const int n = ctx.branches.n();
    const std::vector<std::string> flayers = fusion_layers(ctx.backend, cfg.fusion);

    try {
        LatentGrid z =
            draw_initial_latent(ctx.backend.latent_channels(), ctx.latent_h, ctx.latent_w, seed);
        ConceptMasks masks = ctx.init_masks;

        for (size_t i = 0; i < ctx.grid.size(); ++i) {
            const int step = static_cast<int>(i);
            const int t = ctx.grid[i];
            const int t_prev = (i + 1 < ctx.grid.size()) ? ctx.grid[i + 1] : -1;

            if (cfg.layout.enabled && cfg.layout.in_window(step)) {
                const auto it = ctx.ref_features.by_timestep.find(t);
                if (it == ctx.ref_features.by_timestep.end())
                    throw ContractViolation("no reference features recorded for timestep " +
                                            std::to_string(t));
                AlignResult ar = align_latents(ctx.backend, z, t, ctx.branches, it->second,
                                               cfg.layout, step);
                ManifestEvent e;
                e.step = step;
                e.t = t;
                e.module = "align";
                e.note = ar.skip_reason;
                e.values["applied"] = ar.applied ? 1.0 : 0.0;
                e.values["updates"] = static_cast<double>(ar.losses.size());
                if (!ar.losses.empty()) e.values["loss"] = ar.losses.front();
                man.events.push_back(std::move(e));
                z = std::move(ar.z);
            }

            const bool dump =
                std::find(cfg.output.dump_attention_steps.begin(),
                          cfg.output.dump_attention_steps.end(),
                          step) != cfg.output.dump_attention_steps.end();
            std::set<std::string> extra;
            if (dump) {
                extra.insert(cfg.refine.cluster_layer);
                extra.insert(cross_of(cfg.refine.cluster_layer));
            }

            StepOutcome so = fused_step(ctx.backend, z, t, t_prev, ctx.branches, masks,
                                        cfg.fusion, cfg.refine, step, cfg.sampler.guidance_scale,
                                        ctx.schedule, extra);

            if (so.refined) {
                masks = so.masks;
                ManifestEvent e;
                e.step = step;
                e.t = t;
                e.module = "refine";
                e.values["concepts"] = static_cast<double>(n);
                e.values["warnings"] = static_cast<double>(so.refine_warnings.size());
                if (!so.refine_warnings.empty()) e.note = join(so.refine_warnings, "; ");
                man.events.push_back(std::move(e));
                if (cfg.output.dump_masks)
                    for (const std::string& id : masks.order)
                        write_mask_png(masks.of(id),
                                       (mask_dir / ("step_" + std::to_string(step) + "_" + id +
                                                    ".png"))
                                           .string());
            }

            if (n > 0 && cfg.fusion.feature_mode()) {
                for (const std::string& layer : flayers) {
                    ManifestEvent e;
                    e.step = step;
                    e.t = t;
                    e.module = "fuse";
                    e.layer = layer;
                    e.values["branches"] = static_cast<double>(n);
                    man.events.push_back(std::move(e));
                }
            }
            if (n > 0 && cfg.fusion.enabled && cfg.fusion.noise_baseline) {
                ManifestEvent e;
                e.step = step;
                e.t = t;
                e.module = "noise_fuse";
                e.values["branches"] = static_cast<double>(n);
                man.events.push_back(std::move(e));
            }

            {
                ManifestEvent e;
                e.step = step;
                e.t = t;
                e.module = "inject";
                e.values["branches"] = static_cast<double>(1 + n);
                man.events.push_back(std::move(e));
            }

            if (dump) {
                const std::string self_layer = cfg.refine.cluster_layer;
                const std::string cross_layer = cross_of(self_layer);
                const auto [gh, gw] =
                    ctx.backend.layer_grid(self_layer, ctx.latent_h, ctx.latent_w);
                Archive arc;
                arc.set_meta("step", std::to_string(step));
                arc.set_meta("t", std::to_string(t));
                arc.set_meta("self_layer", self_layer);
                arc.set_meta("cross_layer", cross_layer);
                arc.set_meta("grid_h", std::to_string(gh));
                arc.set_meta("grid_w", std::to_string(gw));
                std::vector<std::string> ids;
                for (const Branch& b : ctx.branches.custom) ids.push_back(b.spec.concept_id);
                arc.set_meta("concepts", join(ids, ","));
                arc.put_mat("base.self", so.base_record.layers.at(self_layer).probs);
                arc.put_mat("base.cross", so.base_record.layers.at(cross_layer).probs);
                for (int b = 0; b < n; ++b) {
                    const std::string prefix = "custom" + std::to_string(b);
                    arc.put_mat(prefix + ".self",
                                so.custom_records[b].layers.at(self_layer).probs);
                    arc.put_mat(prefix + ".cross",
                                so.custom_records[b].layers.at(cross_layer).probs);
                    const Branch& br = ctx.branches.custom[b];
                    std::vector<double> slots;
                    for (int s : br.text.concept_slots.at(br.spec.concept_id))
                        slots.push_back(static_cast<double>(s));
                    const int64_t n_slots = static_cast<int64_t>(slots.size());
                    arc.put(prefix + ".slots", {n_slots}, std::move(slots));
                }
                arc.save((dump_dir / ("step_" + std::to_string(step) + ".naa")).string());
            }

            z = std::move(so.z_next);
        }

        check_latent(z);
        const ImageU8 u8 = to_u8(ctx.backend.decode_latent(z));
        const std::string image_path = (image_dir / (seed_tag + ".png")).string();
        write_png(image_path, u8);

        man.output_image_hash = hash_hex(image_hash(u8));
        man.output_latent_hash = hash_hex(latent_hash(z));
        man.image_path = image_path;
        man.status = "complete";
        man.save(manifest_path);

        GenerationResult result;
        result.image = u8;
        result.final_latent = std::move(z);
        result.manifest = std::move(man);
        result.image_path = image_path;
        result.manifest_path = manifest_path;
        return result;
    } catch (const std::exception& e) {
        // flush what happened before rethrowing so the run can be diagnosed
        man.status = std::string("aborted: ") + e.what();
        try {
            man.save(manifest_path);
        } catch (...) {
            MF_LOG_ERROR("could not flush manifest '%s'", manifest_path.c_str());
        }
        throw;
    }
}

AblationResult run_ablation_suite(const RunConfig& config,
                                  const std::vector<std::string>& variants) {
    static const std::vector<std::string> known = {"LA", "SA", "CA", "MR", "Eq3"};
    std::vector<std::string> order;
    for (const std::string& v : variants) {
        if (std::find(known.begin(), known.end(), v) == known.end())
            throw ConfigError("unknown ablation variant '" + v +
                              "' (expected LA, SA, CA, MR, or Eq3)");
        if (std::find(order.begin(), order.end(), v) == order.end()) order.push_back(v);
    }

    const fs::path base_dir = config.output.dir;
    struct Entry {
        std::string tag;
        RunConfig cfg;
    };
    std::vector<Entry> entries;
    {
        RunConfig full = config;
        full.output.dir = (base_dir / "full").string();
        entries.push_back({"full", std::move(full)});
    }
    for (const std::string& v : order) {
        RunConfig c = config;
        std::string tag;
        if (v == "LA") {
            c.layout.enabled = false;
            tag = "wo_LA";
        } else if (v == "SA") {
            c.fusion.fuse_self = false;
            tag = "wo_SA";
        } else if (v == "CA") {
            c.fusion.fuse_cross = false;
            tag = "wo_CA";
        } else if (v == "MR") {
            c.refine.enabled = false;
            tag = "wo_MR";
        } else {
            c.fusion.noise_baseline = true;
            tag = "eq3";
        }
        c.output.dir = (base_dir / tag).string();
        entries.push_back({tag, std::move(c)});
    }

    AblationResult out;
    for (Entry& entry : entries) {
        PreparedRun ctx = prepare_run(entry.cfg);
        std::vector<GenerationResult> results;
        for (uint64_t seed : config.seeds) results.push_back(run_generation(ctx, seed));
        out.runs.emplace_back(entry.tag, std::move(results));
    }

    fs::create_directories(base_dir);
    out.table_path = (base_dir / "ablation_table.txt").string();
    std::ofstream tab(out.table_path);
    if (!tab) throw IoError("cannot write ablation table '" + out.table_path + "'");
    const std::string& full_hash0 = out.runs.front().second.front().manifest.output_image_hash;
    tab << std::left << std::setw(8) << "variant" << std::setw(7) << "align" << std::setw(7)
        << "fuse" << std::setw(7) << "noise" << std::setw(8) << "refine" << std::setw(20)
        << "image_hash_seed0" << "matches_full\n";
    for (const auto& [tag, results] : out.runs) {
        const RunManifest& m = results.front().manifest;
        tab << std::left << std::setw(8) << tag << std::setw(7)
            << m.events_of("align").size() << std::setw(7) << m.events_of("fuse").size()
            << std::setw(7) << m.events_of("noise_fuse").size() << std::setw(8)
            << m.events_of("refine").size() << std::setw(20) << m.output_image_hash
            << (m.output_image_hash == full_hash0 ? "yes" : "no") << "\n";
    }
    return out;
}

}  // namespace maskfuse
