#include "maskfuse/viz.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "maskfuse/archive.hpp"
#include "maskfuse/config.hpp"
#include "maskfuse/manifest.hpp"

namespace fs = std::filesystem;

namespace maskfuse {
namespace {

constexpr uint8_t kPalette[8][3] = {
    {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
    {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
};

void paint_cell(ImageU8& img, int y, int x, int cell_px, uint8_t r, uint8_t g, uint8_t b) {
    for (int dy = 0; dy < cell_px; ++dy)
        for (int dx = 0; dx < cell_px; ++dx) {
            img.at(y * cell_px + dy, x * cell_px + dx, 0) = r;
            img.at(y * cell_px + dy, x * cell_px + dx, 1) = g;
            img.at(y * cell_px + dy, x * cell_px + dx, 2) = b;
        }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    size_t start = 0;
    while (true) {
        const size_t comma = s.find(',', start);
        out.push_back(s.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

ImageU8 render_cluster_map(const Mat& probs, int grid_h, int grid_w, int k,
                           const RefineConfig& config, int cell_px) {
    const SegmentationMap seg = cluster_self_attention(probs, k, grid_h, grid_w, config);
    ImageU8 img(grid_w * cell_px, grid_h * cell_px);
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) {
            const int label = seg.labels[static_cast<size_t>(y) * grid_w + x];
            const uint8_t* c = kPalette[label % 8];
            paint_cell(img, y, x, cell_px, c[0], c[1], c[2]);
        }
    return img;
}

ImageU8 render_cross_heatmap(const Mat& probs, const std::vector<int>& slots, int grid_h,
                             int grid_w, int cell_px) {
    if (probs.rows() != grid_h * grid_w)
        throw ContractViolation("cross heatmap: probability rows do not match the grid");
    std::vector<double> score(static_cast<size_t>(grid_h) * grid_w, 0.0);
    double peak = 0.0;
    for (int p = 0; p < probs.rows(); ++p) {
        double v = 0.0;
        for (int s : slots) {
            if (s < 0 || s >= probs.cols())
                throw ContractViolation("cross heatmap: token slot out of range");
            v += probs(p, s);
        }
        if (!slots.empty()) v /= static_cast<double>(slots.size());
        score[p] = v;
        peak = std::max(peak, v);
    }
    const uint8_t lo[3] = {18, 22, 58};
    const uint8_t hi[3] = {255, 230, 60};
    ImageU8 img(grid_w * cell_px, grid_h * cell_px);
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) {
            const double v = peak > 0.0 ? score[static_cast<size_t>(y) * grid_w + x] / peak : 0.0;
            uint8_t rgb[3];
            for (int c = 0; c < 3; ++c)
                rgb[c] = static_cast<uint8_t>(lo[c] + (hi[c] - lo[c]) * v + 0.5);
            paint_cell(img, y, x, cell_px, rgb[0], rgb[1], rgb[2]);
        }
    return img;
}

ImageU8 render_mask_strip(const std::vector<MaskGrid>& masks, int cell_px, int gap_px) {
    if (masks.empty()) throw ContractViolation("mask strip: no masks");
    const int h = masks.front().h, w = masks.front().w;
    for (const MaskGrid& m : masks)
        if (m.h != h || m.w != w) throw ContractViolation("mask strip: mixed mask sizes");
    const int n = static_cast<int>(masks.size());
    ImageU8 img(n * w * cell_px + (n - 1) * gap_px, h * cell_px);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 128;  // separator gray
    for (int i = 0; i < n; ++i) {
        const int x_off = i * (w * cell_px + gap_px);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const uint8_t v = masks[i].at(y, x) ? 255 : 0;
                for (int dy = 0; dy < cell_px; ++dy)
                    for (int dx = 0; dx < cell_px; ++dx)
                        for (int c = 0; c < 3; ++c)
                            img.at(y * cell_px + dy, x_off + x * cell_px + dx, c) = v;
            }
    }
    return img;
}

VizResult render_run_viz(const std::string& run_dir, uint64_t seed, const std::string& out_dir) {
    const std::string seed_tag = "seed" + std::to_string(seed);
    const fs::path manifest_path = fs::path(run_dir) / "manifests" / (seed_tag + ".json");
    if (!fs::exists(manifest_path))
        throw ConfigError("no manifest for " + seed_tag + " under '" + run_dir +
                          "'; run generate first");
    const RunManifest man = RunManifest::load(manifest_path.string());
    const RunConfig cfg = parse_run_config(man.config);

    std::set<int> steps(cfg.output.dump_attention_steps.begin(),
                        cfg.output.dump_attention_steps.end());
    if (steps.empty())
        throw ConfigError("run '" + run_dir +
                          "' was produced without attention dumps; re-run generate with "
                          "output.dump_attention_steps set (e.g. [0, 60, 199])");

    const fs::path out = out_dir.empty() ? fs::path(run_dir) / "viz" / seed_tag
                                         : fs::path(out_dir);
    fs::create_directories(out);

    VizResult result;
    const int cell = 16;
    for (int s : steps) {
        const fs::path dump =
            fs::path(run_dir) / "dumps" / seed_tag / ("step_" + std::to_string(s) + ".naa");
        if (!fs::exists(dump))
            throw ConfigError("attention dump '" + dump.string() +
                              "' is missing; re-run generate with output.dump_attention_steps "
                              "including step " + std::to_string(s));
        const Archive arc = Archive::load(dump.string());
        const int gh = std::stoi(arc.get_meta("grid_h"));
        const int gw = std::stoi(arc.get_meta("grid_w"));
        const std::vector<std::string> concepts = split_csv(arc.get_meta("concepts"));
        const int k = std::max(2, static_cast<int>(concepts.size()) * cfg.refine.cluster_max_mult);

        for (size_t b = 0; b <= concepts.size(); ++b) {
            const std::string key =
                b == 0 ? "base.self" : "custom" + std::to_string(b - 1) + ".self";
            const std::string name = b == 0 ? "base" : concepts[b - 1];
            const ImageU8 img =
                render_cluster_map(arc.get_mat(key), gh, gw, k, cfg.refine, cell);
            const std::string path =
                (out / ("sa_step" + std::to_string(s) + "_" + name + ".png")).string();
            write_png(path, img);
            result.files.push_back(path);
        }
        for (size_t c = 0; c < concepts.size(); ++c) {
            const std::string prefix = "custom" + std::to_string(c);
            std::vector<int> slots;
            for (double v : arc.get(prefix + ".slots").data)
                slots.push_back(static_cast<int>(v));
            const ImageU8 img =
                render_cross_heatmap(arc.get_mat(prefix + ".cross"), slots, gh, gw, cell);
            const std::string path =
                (out / ("ca_step" + std::to_string(s) + "_" + concepts[c] + ".png")).string();
            write_png(path, img);
            result.files.push_back(path);
        }
    }

    if (!cfg.concepts.empty() && cfg.refine.enabled) {
        std::vector<int> strip_steps;
        for (int s = cfg.refine.window_begin; s <= cfg.refine.window_end; s += cfg.refine.cadence)
            if (s < cfg.sampler.num_steps) strip_steps.push_back(s);
        for (const ConceptConfig& cc : cfg.concepts) {
            if (strip_steps.empty()) break;
            std::vector<MaskGrid> masks;
            for (int s : strip_steps) {
                const fs::path p = fs::path(run_dir) / "masks" / seed_tag /
                                   ("step_" + std::to_string(s) + "_" + cc.id + ".png");
                if (!fs::exists(p))
                    throw ConfigError("mask dump '" + p.string() +
                                      "' is missing; re-run generate with output.dump_masks "
                                      "enabled");
                masks.push_back(read_mask_png(p.string()));
            }
            const ImageU8 img = render_mask_strip(masks, 8, 2);
            const std::string path = (out / ("mask_strip_" + cc.id + ".png")).string();
            write_png(path, img);
            result.files.push_back(path);
        }
    }
    return result;
}

}  // namespace maskfuse
