#include "maskfuse/schedule.hpp"

#include <cmath>

#include "maskfuse/archive.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

NoiseSchedule make_schedule(int t_train, double beta_start, double beta_end) {
    if (t_train < 1) throw ConfigError("schedule: t_train must be positive");
    if (!(beta_start > 0.0) || !(beta_start < beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start < beta_end < 1");
    NoiseSchedule s;
    s.t_train = t_train;
    s.betas.resize(t_train);
    s.alpha_bar.resize(t_train);
    double prod = 1.0;
    for (int t = 0; t < t_train; ++t) {
        const double beta =
            t_train == 1 ? beta_start
                         : beta_start + (beta_end - beta_start) * t / (t_train - 1.0);
        s.betas[t] = beta;
        prod *= 1.0 - beta;
        s.alpha_bar[t] = prod;
    }
    return s;
}

std::vector<int> timestep_grid(int num_steps, int t_train) {
    if (num_steps < 1 || num_steps > t_train)
        throw ConfigError("sampler: num_steps must be in [1, t_train]");
    if (t_train % num_steps != 0)
        throw ConfigError("sampler: num_steps must divide t_train (" +
                          std::to_string(num_steps) + " vs " + std::to_string(t_train) + ")");
    const int stride = t_train / num_steps;
    std::vector<int> grid(num_steps);
    for (int k = 0; k < num_steps; ++k) grid[k] = t_train - stride - k * stride;
    return grid;
}

namespace {

void check_step_args(const LatentGrid& z, const LatentGrid& eps, int t, int t_prev,
                     const NoiseSchedule& s) {
    if (!z.same_shape(eps)) throw ContractViolation("ddim: noise shape mismatch");
    if (t_prev < -1 || t <= t_prev || t >= s.t_train)
        throw ContractViolation("ddim: need t_train > t > t_prev >= -1, got t=" +
                                std::to_string(t) + " t_prev=" + std::to_string(t_prev));
}

}  // namespace

LatentGrid ddim_step(const LatentGrid& z_t, const LatentGrid& noise_estimate, int t, int t_prev,
                     const NoiseSchedule& schedule) {
    check_step_args(z_t, noise_estimate, t, t_prev, schedule);
    const double ab_t = schedule.alpha_bar_at(t);
    const double ab_p = schedule.alpha_bar_at(t_prev);
    const double sa_t = std::sqrt(ab_t), sn_t = std::sqrt(1.0 - ab_t);
    const double sa_p = std::sqrt(ab_p), sn_p = std::sqrt(1.0 - ab_p);
    LatentGrid out = z_t;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double x0 = (z_t.data[i] - sn_t * noise_estimate.data[i]) / sa_t;
        out.data[i] = sa_p * x0 + sn_p * noise_estimate.data[i];
    }
    out.timestep_hint = t_prev;
    return out;
}

LatentGrid ddim_invert_step(const LatentGrid& z_prev, const LatentGrid& noise_estimate, int t,
                            int t_prev, const NoiseSchedule& schedule) {
    check_step_args(z_prev, noise_estimate, t, t_prev, schedule);
    const double ab_t = schedule.alpha_bar_at(t);
    const double ab_p = schedule.alpha_bar_at(t_prev);
    const double sa_t = std::sqrt(ab_t), sn_t = std::sqrt(1.0 - ab_t);
    const double sa_p = std::sqrt(ab_p), sn_p = std::sqrt(1.0 - ab_p);
    LatentGrid out = z_prev;
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double x0 = (z_prev.data[i] - sn_p * noise_estimate.data[i]) / sa_p;
        out.data[i] = sa_t * x0 + sn_t * noise_estimate.data[i];
    }
    out.timestep_hint = t;
    return out;
}

LatentGrid cfg_combine(const LatentGrid& noise_uncond, const LatentGrid& noise_cond,
                       double scale) {
    if (!noise_uncond.same_shape(noise_cond))
        throw ContractViolation("cfg: noise shape mismatch");
    if (scale == 1.0) return noise_cond;  // exact identity, no float detour
    if (scale == 0.0) return noise_uncond;
    LatentGrid out = noise_uncond;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] += scale * (noise_cond.data[i] - noise_uncond.data[i]);
    return out;
}

InversionResult ddim_invert(Backend& backend, const LatentGrid& z0, const TextEncoding& text,
                            int steps, const std::set<std::string>& record_spec,
                            const NoiseSchedule& schedule) {
    if (steps < 0 || steps > schedule.t_train)
        throw ConfigError("inversion: steps must be in [0, t_train]");
    InversionResult inv;
    inv.levels.push_back(-1);
    inv.latents.push_back(z0);
    LatentGrid z = z0;
    int level = -1;
    PredictOptions opt;
    opt.record_spec = record_spec;
    for (int t = 0; t < steps; ++t) {
        // ε evaluated on the current latent at the transition's target level.
        PredictResult pr = backend.predict_noise(z, t, text, opt);
        z = ddim_invert_step(z, pr.noise, t, level, schedule);
        level = t;
        inv.levels.push_back(t);
        inv.latents.push_back(z);
        if (!record_spec.empty()) inv.records.emplace(t, std::move(pr.record));
    }
    return inv;
}

LatentGrid ddim_sample(Backend& backend, const LatentGrid& z_start, const TextEncoding& text,
                       const std::vector<int>& grid, const NoiseSchedule& schedule,
                       double guidance) {
    if (grid.empty()) return z_start;
    LatentGrid z = z_start;
    const TextEncoding uncond = guidance != 1.0 ? backend.encode_text("") : TextEncoding{};
    for (size_t k = 0; k < grid.size(); ++k) {
        const int t = grid[k];
        const int t_prev = k + 1 < grid.size() ? grid[k + 1] : -1;
        PredictResult cond = backend.predict_noise(z, t, text);
        LatentGrid eps = std::move(cond.noise);
        if (guidance != 1.0) {
            PredictResult un = backend.predict_noise(z, t, uncond);
            eps = cfg_combine(un.noise, eps, guidance);
        }
        z = ddim_step(z, eps, t, t_prev, schedule);
    }
    return z;
}

void save_inversion(const InversionResult& inv, const std::string& path,
                    const std::map<std::string, std::string>& meta) {
    Archive ar;
    ar.set_meta("kind", "inversion");
    for (const auto& [k, v] : meta) ar.set_meta(k, v);
    std::string levels;
    for (size_t i = 0; i < inv.levels.size(); ++i) {
        if (i) levels += ',';
        levels += std::to_string(inv.levels[i]);
    }
    ar.set_meta("levels", levels);
    for (size_t i = 0; i < inv.levels.size(); ++i) {
        const LatentGrid& z = inv.latents[i];
        ar.put("z." + std::to_string(inv.levels[i]), {z.channels, z.height, z.width}, z.data);
    }
    for (const auto& [t, rec] : inv.records)
        for (const auto& [layer, lr] : rec.layers) {
            const std::string base = "rec." + std::to_string(t) + "." + layer + ".";
            ar.put_mat(base + "keys", lr.keys);
            ar.put_mat(base + "probs", lr.probs);
            ar.put_mat(base + "output", lr.output);
        }
    ar.save(path);
}

InversionResult load_inversion(const std::string& path) {
    const Archive ar = Archive::load(path);
    if (!ar.has_meta("kind") || ar.get_meta("kind") != "inversion")
        throw IoError("inversion: '" + path + "' is not a trajectory archive");
    InversionResult inv;
    std::string levels = ar.get_meta("levels");
    size_t pos = 0;
    while (pos <= levels.size()) {
        const size_t comma = levels.find(',', pos);
        const std::string tok = levels.substr(pos, comma == std::string::npos ? std::string::npos
                                                                              : comma - pos);
        if (!tok.empty()) inv.levels.push_back(std::stoi(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    for (int level : inv.levels) {
        const ArchiveEntry& e = ar.get("z." + std::to_string(level));
        if (e.shape.size() != 3) throw IoError("inversion: bad latent shape in archive");
        LatentGrid z(static_cast<int>(e.shape[0]), static_cast<int>(e.shape[1]),
                     static_cast<int>(e.shape[2]));
        z.data = e.data;
        z.timestep_hint = level;
        inv.latents.push_back(std::move(z));
    }
    for (const std::string& name : ar.names()) {
        if (name.rfind("rec.", 0) != 0) continue;
        const size_t t_end = name.find('.', 4);
        const size_t field_start = name.rfind('.');
        const int t = std::stoi(name.substr(4, t_end - 4));
        const std::string layer = name.substr(t_end + 1, field_start - t_end - 1);
        const std::string field = name.substr(field_start + 1);
        LayerRecord& lr = inv.records[t].layers[layer];
        if (field == "keys")
            lr.keys = ar.get_mat(name);
        else if (field == "probs")
            lr.probs = ar.get_mat(name);
        else if (field == "output")
            lr.output = ar.get_mat(name);
        else
            throw IoError("inversion: unexpected array '" + name + "'");
    }
    return inv;
}

LatentGrid draw_initial_latent(int channels, int height, int width, uint64_t seed) {
    DeterministicRng rng(seed, "z_T");
    LatentGrid z(channels, height, width);
    for (double& v : z.data) v = rng.normal();
    return z;
}

}  // namespace maskfuse
